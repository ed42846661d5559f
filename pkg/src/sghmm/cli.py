"""Command-line front end: generate | fit | eval | lyapunov."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .adaptivity import buffer_length, estimate_lyapunov, gap_policy
from .datasets import KINDS, make_dataset
from .evaluation import (
    align_states,
    iid_baseline_fit,
    model_selection_score,
    predictive_report,
    transition_error,
)
from .exceptions import CapacityError, NumericalError, SGHMMError, ValidationError
from .gradients import full_gradient, uniform_minibatch, stochastic_gradient
from .samplers import SamplerConfig, SamplerState, initialize, run_batch_rld, run_sg_mcmc

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4

CONFIG_KEYS = {f.name for f in dataclasses.fields(SamplerConfig)} - {"prior"}


def _threads():
    raw = os.environ.get("SGHMM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"SGHMM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError("SGHMM_THREADS must be >= 1")
    return n


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output directory {out} is not writable")
    return out


def _load_config_file(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        rec = tomllib.loads(p.read_text())
    else:
        rec = json.loads(p.read_text())
    unknown = set(rec) - CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return rec


# -- generate -------------------------------------------------------------------

def cmd_generate(args):
    if args.T < 1:
        raise ValidationError(f"--T must be >= 1, got {args.T}")
    out = _out_dir(args.out)
    y, params = make_dataset(args.kind, args.T, args.seed)
    stem = f"{args.kind}_T{args.T}_seed{args.seed}"
    seq = out / (stem + (".csv" if args.format == "csv" else ".sghmm"))
    if args.format == "csv":
        np.savetxt(seq, y.data, delimiter=",", fmt="%.17g")
    else:
        io.write_sequence(seq, y)
    par = out / f"{stem}_params.json"
    io.write_params(par, params)
    io.write_manifest(out, {"command": "generate", **vars(args)}, outputs=[seq, par])
    for p in (seq, par):
        print(f"{io.sha256_file(p)}  {p}")
    return EXIT_OK


# -- fit ----------------------------------------------------------------------------

def _fit_config(args):
    rec = _load_config_file(args.config) if args.config else {}
    flags = {
        "K": args.K,
        "family": args.family,
        "L": args.L,
        "n_windows": args.windows,
        "step_size": args.eps,
        "emission_step_size": args.eps_emission,
        "n_iter": args.n_iter,
        "n_steps": args.n_steps,
        "buffer": args.buffer,
        "sampler": args.sampler,
        "seed": args.seed,
        "thin": args.thin,
        "reestimate_every": args.reestimate_every,
        "max_seconds": args.max_seconds,
        "eval_every": args.eval_every,
        "progress_every": args.progress_every,
    }
    rec.update({k: v for k, v in flags.items() if v is not None})
    if args.no_average:
        rec["average_inner"] = False
    if args.noise_correction:
        rec["noise_correction"] = True
    if "decay" in rec and rec["decay"] is not None:
        rec["decay"] = tuple(rec["decay"])
    return SamplerConfig(**rec)


def _dump_gradients(path, y, cfg):
    rng = np.random.default_rng(cfg.seed)
    A_hat, em = initialize(y, cfg, rng)
    state = SamplerState(A_hat, em, cfg.step_size, rng, tied=cfg.tied)
    params = state.params()
    B = 0 if cfg.buffer_mode()[0] == "none" else (cfg.buffer_mode()[1] or 1)
    batch = uniform_minibatch(len(y), cfg.L, B, cfg.n_windows, rng)
    sg = stochastic_gradient(params, None, y, batch, use_buffers=B > 0, A_hat=state.A_hat)
    fg = full_gradient(params, None, y, A_hat=state.A_hat)

    def enc(g):
        return {"dA_hat": np.asarray(g.dA_hat).tolist(), "emissions": [[np.asarray(x).tolist() for x in e] for e in g.d_emissions]}

    rec = {"windows": [w.tau for w in batch.windows], "B": B, "stochastic": enc(sg), "full": enc(fg)}
    Path(path).write_text(json.dumps(rec))


def _fit_one(method, y, cfg, out, monitor):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if method == "sg":
            tr = run_sg_mcmc(y, cfg, monitor=monitor)
        elif method == "batch":
            tr = run_batch_rld(y, cfg, monitor=monitor)
        elif method == "iid":
            tr = iid_baseline_fit(y, cfg.K, cfg, monitor=monitor)
        else:
            raise ValidationError(f"unknown method {method!r}")
    io.write_trace(out / "trace", tr)
    n = max(1, tr.stats.get("n_iter_run", 1))
    summary = {
        "method": method,
        "n_samples": len(tr),
        "n_iter": tr.stats.get("n_iter_run"),
        "wall_ms": tr.stats.get("wall_ms"),
        "ms_per_iter": tr.stats.get("wall_ms", 0.0) / n,
        "n_rejected": tr.stats.get("n_rejected"),
        "min_noise_var": tr.stats.get("min_noise_var"),
        "epochs": tr.epochs,
        "final_A": tr.A[-1].tolist() if len(tr) else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    return tr


def cmd_fit(args):
    cfg = _fit_config(args)
    y = io.load_sequence(args.data)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    for m in methods:
        if m not in ("sg", "batch", "iid"):
            raise ValidationError(f"unknown method {m!r}; expected sg, batch or iid")
    T = len(y)
    if "sg" in methods or "iid" in methods:
        _check_capacity(cfg, T)
    out = _out_dir(args.out)
    y_test = io.load_sequence(args.test) if args.test else None
    monitor = None
    if y_test is not None and cfg.eval_every:
        monitor = lambda p: predictive_report(p, y_test, args.horizon, args.n_points).mean  # noqa: E731
    if args.dump_gradients:
        _dump_gradients(out / "gradients.json", y, cfg)
    dirs = {m: _out_dir(out / m) if len(methods) > 1 else out for m in methods}
    with ThreadPoolExecutor(max_workers=min(len(methods), _threads())) as pool:
        futures = {m: pool.submit(_fit_one, m, y, cfg, dirs[m], monitor) for m in methods}
        traces = {m: f.result() for m, f in futures.items()}
    if args.emit_plot_data:
        rows = []
        for m, tr in traces.items():
            for i in range(len(tr)):
                rows.append([m, tr.iteration[i], tr.wall_ms[i], "log_pred", tr.log_pred[i]])
        io.write_rows(out / "curves.csv", ["method", "iteration", "wall_ms", "metric", "value"], rows)
    inputs = [args.data] + ([args.test] if args.test else []) + ([args.config] if args.config else [])
    outputs = [p for m in methods for p in (dirs[m] / "trace.ndjson", dirs[m] / "summary.json")]
    io.write_manifest(out, {"command": "fit", "method": methods, **dataclasses.asdict(cfg)}, inputs, outputs)
    for m, tr in traces.items():
        print(json.dumps({"method": m, "n_samples": len(tr), "wall_ms": tr.stats.get("wall_ms"), "epochs": len(tr.epochs)}))
    return EXIT_OK


def _check_capacity(cfg, T):
    mode, B = cfg.buffer_mode()
    B = 1 if mode == "adaptive" else B
    if cfg.sampler == "gapped":
        from .adaptivity import max_batch_count

        cap = max_batch_count(T, cfg.L, B, 1)
        if cfg.n_windows > cap:
            raise CapacityError(
                f"sequence of length {T} holds at most {cap} windows with L={cfg.L}, B={B}", max_count=cap
            )
    elif T - 2 * B - (2 * cfg.L + 1) + 1 < 1:
        raise CapacityError(f"sequence of length {T} cannot host a window with L={cfg.L}, B={B}", max_count=0)


# -- eval ---------------------------------------------------------------------------

def _parse_ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise ValidationError(f"--K must be a comma-separated list of integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ValidationError("--K values must be >= 1")
    return ks


def cmd_eval(args):
    out = _out_dir(args.out)
    rows = []
    inputs = []
    if args.model_select:
        rows += _model_select(args, out, inputs)
    traces = []
    for path in args.trace or []:
        traces.append((path, io.read_trace(path)))
        inputs.append(str(Path(path).with_suffix(".ndjson")))
    truth = io.read_params(args.truth) if args.truth else None
    if args.truth:
        inputs.append(args.truth)
    y_test = None
    if args.data:
        y_test = io.load_sequence(args.data)
        inputs.append(args.data)
    for path, tr in traces:
        if len(tr) == 0:
            raise ValidationError(f"trace {path} is empty")
        name = Path(path).stem if Path(path).stem != "trace" else Path(path).parent.name
        wall = tr.wall_ms[-1]
        final = tr.params()
        if y_test is not None:
            rep = predictive_report(final, y_test, args.horizon, args.n_points)
            rows.append([name, wall, f"predictive_{args.horizon}", rep.mean])
            rows.append([name, wall, f"predictive_{args.horizon}_se", rep.se])
        if truth is not None:
            perm = align_states(final, truth) if final.K == truth.K else None
            if perm is not None:
                err = transition_error(tr.mean_A(args.tail), truth.A, perm=perm)
                rows.append([name, wall, "transition_error", err.error])
        if args.emit_plot_data and truth is not None and final.K == truth.K:
            perm = align_states(final, truth)
            curve = [
                [name, tr.iteration[i], tr.wall_ms[i], "transition_error", transition_error(tr.A[i], truth.A, perm=perm).error]
                for i in range(len(tr))
            ]
            io.write_rows(out / f"curve_{name}.csv", ["method", "iteration", "wall_ms", "metric", "value"], curve)
    if len(traces) >= 2:
        (n0, t0), (n1, t1) = traces[0], traces[1]
        err = transition_error(t1.mean_A(args.tail), t0.mean_A(args.tail), permute=args.permute)
        rows.append([f"{Path(n1).parent.name}_vs_{Path(n0).parent.name}", float("nan"), "transition_error", err.error])
    if not rows:
        raise ValidationError("nothing to evaluate: pass --trace, --model-select or both")
    metrics = out / "metrics.csv"
    io.write_rows(metrics, ["method", "wall_ms", "metric", "value"], rows)
    io.write_manifest(out, {"command": "eval", **vars(args)}, inputs, [metrics])
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK


def _model_select(args, out, inputs):
    if not (args.train and args.data):
        raise ValidationError("--model-select needs --train and --data (held-out) sequences")
    y_train = io.load_sequence(args.train)
    y_test = io.load_sequence(args.data)
    inputs += [args.train]
    ks = _parse_ks(args.K)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    base = SamplerConfig(
        L=args.L, n_windows=args.windows, step_size=args.eps, emission_step_size=args.eps_emission,
        n_iter=args.n_iter, thin=args.thin, seed=args.seed,
    )
    jobs = [(fam, K) for fam in families for K in ks]

    def run(job):
        fam, K = job
        cfg = dataclasses.replace(base, K=K, family=fam, seed=args.seed + K)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tr = run_sg_mcmc(y_train, cfg)
        return model_selection_score(y_test, tr, fam, samples=tr.tail(0.5)), tr.stats["wall_ms"]

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, jobs))
    rows, table = [], []
    for (fam, K), (score, wall) in zip(jobs, results):
        rows.append([f"{fam}_K{K}", wall, "log_heldout", score])
        table.append((fam, K, score))
    ranking = []
    for fam in families:
        sub = sorted([t for t in table if t[0] == fam], key=lambda t: -t[2])
        ranking += [[fam, rank + 1, K, score] for rank, (_, K, score) in enumerate(sub)]
    io.write_rows(out / "model_selection.csv", ["family", "rank", "K", "log_heldout"], ranking)
    return rows


# -- lyapunov ------------------------------------------------------------------

def cmd_lyapunov(args):
    y = io.load_sequence(args.data)
    params = io.read_params(args.params)
    if args.n_iter < 2:
        raise ValidationError("--n-iter must be >= 2")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = estimate_lyapunov(params, y, args.n_iter, args.seed, method=args.method, draw=args.draw)
        pol = buffer_length(est, args.delta, args.delta0, args.B_max)
        gp = gap_policy(params.A, args.L, pol.B, len(y))
    rec = {
        "exponent": est.exponent,
        "std_error": est.std_error,
        "n_samples": est.n_samples,
        "B": pol.B,
        "warning": pol.warning,
        "nu": gp.nu,
        "nu_capped": gp.capped,
        "min_gap": gp.min_gap,
    }
    print(json.dumps(rec))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="sghmm", description="SG-MCMC for hidden Markov models")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a benchmark dataset")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".")
    g.add_argument("--format", choices=("bin", "csv"), default="bin")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="run a sampler")
    f.add_argument("--data", required=True)
    f.add_argument("--test", help="held-out sequence for predictive monitoring")
    f.add_argument("--config", help="JSON or TOML file with sampler settings")
    f.add_argument("--method", default="sg", help="sg, batch, iid or a comma-separated list")
    f.add_argument("--family", choices=("gaussian", "lognormal"))
    f.add_argument("--K", type=int)
    f.add_argument("--L", type=int)
    f.add_argument("--windows", type=int, help="windows per minibatch")
    f.add_argument("--eps", type=float)
    f.add_argument("--eps-emission", type=float)
    f.add_argument("--n-iter", type=int)
    f.add_argument("--n-steps", type=int)
    f.add_argument("--buffer", help="adaptive, none or fixed:B")
    f.add_argument("--sampler", choices=("gapped", "uniform"))
    f.add_argument("--seed", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--reestimate-every", type=int)
    f.add_argument("--max-seconds", type=float)
    f.add_argument("--eval-every", type=int)
    f.add_argument("--progress-every", type=int)
    f.add_argument("--horizon", type=int, default=10)
    f.add_argument("--n-points", type=int, default=100)
    f.add_argument("--no-average", action="store_true", help="disable inner-step averaging")
    f.add_argument("--noise-correction", action="store_true", help="empirical gradient-noise estimate")
    f.add_argument("--dump-gradients", action="store_true")
    f.add_argument("--emit-plot-data", action="store_true")
    f.add_argument("--out", default="run")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="metrics for traces")
    e.add_argument("--trace", action="append", help="trace file (repeatable)")
    e.add_argument("--data", help="held-out sequence")
    e.add_argument("--truth", help="true parameter JSON")
    e.add_argument("--horizon", type=int, default=10)
    e.add_argument("--n-points", type=int, default=100)
    e.add_argument("--tail", type=float, default=0.5, help="fraction of samples averaged for A")
    e.add_argument("--permute", action="store_true", help="label-permutation-minimized comparison")
    e.add_argument("--model-select", action="store_true")
    e.add_argument("--train", help="training sequence for --model-select")
    e.add_argument("--K", default="1,2,3,4")
    e.add_argument("--families", default="lognormal,gaussian")
    e.add_argument("--L", type=int, default=2)
    e.add_argument("--windows", type=int, default=10)
    e.add_argument("--eps", type=float, default=1e-4)
    e.add_argument("--eps-emission", type=float, default=None)
    e.add_argument("--n-iter", type=int, default=1000)
    e.add_argument("--thin", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--emit-plot-data", action="store_true")
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_eval)

    ly = sub.add_parser("lyapunov", help="estimate the Lyapunov exponent and buffer length")
    ly.add_argument("--data", required=True)
    ly.add_argument("--params", required=True)
    ly.add_argument("--n-iter", type=int, default=5000)
    ly.add_argument("--seed", type=int, default=0)
    ly.add_argument("--method", choices=("two_trajectory", "jacobian"), default="two_trajectory")
    ly.add_argument("--draw", choices=("iid", "contiguous"), default="iid")
    ly.add_argument("--delta", type=float, default=1e-3)
    ly.add_argument("--delta0", type=float, default=2.0)
    ly.add_argument("--B-max", type=int, default=100)
    ly.add_argument("--L", type=int, default=2)
    ly.set_defaults(func=cmd_lyapunov)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CapacityError as exc:
        extra = f" (max feasible count: {exc.max_count})" if exc.max_count is not None else ""
        print(f"capacity error: {exc}{extra}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SGHMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
