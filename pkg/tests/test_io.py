import json

import numpy as np
import pytest

from conftest import random_params
from sghmm.emissions import LogNormalEmission
from sghmm.exceptions import ValidationError
from sghmm.hmm import HmmParams
from sghmm.io import (
    git_blob_hash,
    load_sequence,
    params_to_dict,
    read_csv_sequence,
    read_params,
    read_sequence,
    read_trace,
    write_manifest,
    write_params,
    write_sequence,
    write_trace,
)
from sghmm.samplers import Trace


def test_sequence_roundtrip(tmp_path, rng):
    y = rng.normal(size=(17, 3))
    path = tmp_path / "y.bin"
    write_sequence(path, y)
    np.testing.assert_array_equal(read_sequence(path).data, y)
    np.testing.assert_array_equal(load_sequence(path).data, y)


def test_sequence_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTSEQ" + b"\0" * 8)
    with pytest.raises(ValidationError, match="magic"):
        read_sequence(bad)
    short = tmp_path / "short.bin"
    write_sequence(short, np.ones((4, 2)))
    short.write_bytes(short.read_bytes()[:-8])
    with pytest.raises(ValidationError, match="expected 4x2"):
        read_sequence(short)
    with pytest.raises(FileNotFoundError, match="nope.bin"):
        load_sequence(tmp_path / "nope.bin")


def test_csv_with_and_without_header(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("x,y\n1,2\n3,4\n")
    b = tmp_path / "b.csv"
    b.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(read_csv_sequence(a).data, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(load_sequence(b).data, [[1, 2], [3, 4]])


def test_params_roundtrip(tmp_path, rng):
    for p in (random_params(rng, 3, d=2), HmmParams([[1.0]], [LogNormalEmission(0.3, 1.2)], [1.0])):
        path = tmp_path / "p.json"
        write_params(path, p)
        q = read_params(path)
        np.testing.assert_array_equal(q.A, p.A)
        np.testing.assert_array_equal(q.pi0, p.pi0)
        assert params_to_dict(q) == params_to_dict(p)
    rec = json.loads(path.read_text())
    rec.pop("column_stochastic")
    path.write_text(json.dumps(rec))
    with pytest.raises(ValidationError, match="column_stochastic"):
        read_params(path)


def test_trace_roundtrip(tmp_path, rng):
    tr = Trace()
    for i in range(3):
        p = random_params(rng, 2)
        tr.append(p.A, p.emissions, 10 * (i + 1), 1.5 * i, np.nan if i else -3.0, 4, 7)
    write_trace(tmp_path / "trace", tr)
    back = read_trace(tmp_path / "trace.ndjson")
    assert back.iteration == tr.iteration and back.B == tr.B and back.nu == tr.nu
    np.testing.assert_array_equal(back.A_array(), tr.A_array())
    assert back.log_pred[0] == -3.0 and np.isnan(back.log_pred[1])
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["iteration", "wall_ms", "log_pred"] and header[3:5] == ["A_0_0", "A_1_0"]


def test_git_blob_hash_known_values():
    assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_hash(b"hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad"


def test_manifest(tmp_path):
    src = tmp_path / "in.txt"
    src.write_bytes(b"")
    out = tmp_path / "out.txt"
    out.write_text("x")
    m = json.loads(write_manifest(tmp_path, {"K": 2}, [src], [out]).read_text())
    assert m["config"] == {"K": 2}
    assert m["inputs"][str(src)] == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert set(m["outputs"]) == {"out.txt"}
