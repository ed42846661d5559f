"""File formats: binary sequences, CSV import, parameter JSON, traces and manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .emissions import emission_from_dict
from .exceptions import ValidationError
from .hmm import HmmParams, ObservationSequence, as_array
from .samplers import Trace

MAGIC = b"SGHMM1"
_HEADER = struct.Struct("<6sII")


def write_sequence(path, y):
    y = as_array(y)
    T, d = y.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, T, d))
        fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())


def read_sequence(path) -> ObservationSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sequence file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, T, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * T * d:
        raise ValidationError(f"{path}: expected {T}x{d} float64 values, found {len(body)} bytes")
    return ObservationSequence(np.frombuffer(body, dtype="<f8").reshape(T, d))


def read_csv_sequence(path, skip_header=None) -> ObservationSequence:
    """One row per timestep; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    if skip_header is None:
        try:
            [float(v) for v in rows[0]]
            skip_header = False
        except ValueError:
            skip_header = True
    rows = rows[1:] if skip_header else rows
    return ObservationSequence(np.array(rows, dtype=float))


def load_sequence(path) -> ObservationSequence:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"sequence file not found: {p}")
    return read_csv_sequence(p) if p.suffix.lower() == ".csv" else read_sequence(p)


def params_to_dict(params: HmmParams):
    return {
        "column_stochastic": True,
        "K": params.K,
        "family": params.family,
        "A": params.A.tolist(),
        "pi0": params.pi0.tolist(),
        "emissions": [e.to_dict() for e in params.emissions],
    }


def params_from_dict(rec) -> HmmParams:
    if rec.get("column_stochastic") is not True:
        raise ValidationError('params JSON must carry "column_stochastic": true')
    return HmmParams(rec["A"], [emission_from_dict(e) for e in rec["emissions"]], rec["pi0"])


def write_params(path, params: HmmParams):
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2))


def read_params(path) -> HmmParams:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"params file not found: {p}")
    return params_from_dict(json.loads(p.read_text()))


def write_trace(path_prefix, trace: Trace):
    """``<prefix>.ndjson`` with one record per sample and ``<prefix>.csv`` summary."""
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".ndjson"), "w") as fh:
        for i in range(len(trace)):
            rec = {
                "iteration": trace.iteration[i],
                "wall_ms": trace.wall_ms[i],
                "log_pred": None if np.isnan(trace.log_pred[i]) else trace.log_pred[i],
                "B": trace.B[i],
                "nu": trace.nu[i],
                "A": trace.A[i].tolist(),
                "emissions": [e.to_dict() for e in trace.emissions[i]],
            }
            fh.write(json.dumps(rec) + "\n")
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        K = trace.A[0].shape[0] if len(trace) else 0
        w.writerow(["iteration", "wall_ms", "log_pred"] + [f"A_{i}_{j}" for j in range(K) for i in range(K)])
        for i in range(len(trace)):
            w.writerow([trace.iteration[i], trace.wall_ms[i], trace.log_pred[i], *trace.A[i].ravel(order="F")])


def read_trace(path) -> Trace:
    p = Path(path)
    if p.suffix != ".ndjson":
        p = p.with_suffix(".ndjson")
    if not p.exists():
        raise FileNotFoundError(f"trace file not found: {p}")
    tr = Trace()
    with open(p) as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            lp = np.nan if r.get("log_pred") is None else r["log_pred"]
            tr.append(r["A"], [emission_from_dict(e) for e in r["emissions"]], r["iteration"], r["wall_ms"], lp, r["B"], r["nu"])
    return tr


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way git names blobs."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, config: dict, inputs=(), outputs=()):
    """Echo of the configuration plus content hashes of inputs and outputs."""
    out_dir = Path(out_dir)
    rec = {
        "config": config,
        "inputs": {str(p): git_blob_hash(Path(p).read_bytes()) for p in inputs},
        "outputs": {str(Path(p).name): sha256_file(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(rec, indent=2, sort_keys=True, default=str))
    return path
