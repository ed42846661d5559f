"""Experiment drivers shared by the CLI, the scripts and the acceptance suite."""
from __future__ import annotations

import dataclasses
import time
import warnings

import numpy as np

from .adaptivity import estimate_lyapunov
from .datasets import make_dataset, true_params
from .emissions import GaussianEmission
from .evaluation import (
    align_states,
    iid_baseline_fit,
    model_selection_score,
    predictive_report,
    transition_error,
)
from .gradients import SubsequenceWindow, transition_gradient_term
from .hmm import HmmParams, as_array, simulate
from .samplers import SamplerConfig, run_batch_rld, run_sg_mcmc

FIG2_METHODS = ("buffered", "unbuffered", "iid")


def tail_predictive(trace, y_test, horizon=10, n_points=100, frac=0.3, max_samples=20):
    """Mean k-step predictive over evaluation points, averaged over tail samples."""
    idx = list(trace.tail(frac))
    if len(idx) > max_samples:
        idx = [idx[int(i)] for i in np.linspace(0, len(idx) - 1, max_samples).round()]
    vals = [predictive_report(trace.params(i), y_test, horizon, n_points).mean for i in idx]
    return float(np.mean(vals))


def fig2_run(
    kind,
    T=50_000,
    T_test=5_000,
    seed=0,
    seconds=60.0,
    config: SamplerConfig | None = None,
    horizon=10,
    n_points=100,
    eval_every=0,
    methods=FIG2_METHODS,
):
    """Buffered, unbuffered and i.i.d. fits on one benchmark at a matched wall-clock budget.

    Returns ``{method: {...}}`` with the tail-averaged predictive, the
    transition error of the tail-mean A after label alignment, and the trace.
    """
    y, truth = make_dataset(kind, T, seed)
    y_test, _ = simulate(truth, T_test, seed + 10_000)
    base = config or SamplerConfig(K=truth.K, L=2, n_windows=10, step_size=1e-4)
    base = dataclasses.replace(base, K=truth.K, n_iter=10**9, max_seconds=seconds, seed=seed + 1, eval_every=eval_every)
    monitor = (lambda p: predictive_report(p, y_test, horizon, n_points).mean) if eval_every else None
    out = {}
    for m in methods:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if m == "buffered":
                tr = run_sg_mcmc(y, dataclasses.replace(base, buffer="adaptive"), monitor=monitor)
            elif m == "unbuffered":
                tr = run_sg_mcmc(y, dataclasses.replace(base, buffer="none"), monitor=monitor)
            elif m == "iid":
                tr = iid_baseline_fit(y, truth.K, base, monitor=monitor)
            else:
                raise ValueError(f"unknown method {m!r}")
        final = tr.params()
        perm = align_states(final, truth)
        err = transition_error(tr.mean_A(0.3), truth.A, perm=perm).error
        out[m] = {
            "trace": tr,
            "predictive": tail_predictive(tr, y_test, horizon, n_points),
            "transition_error": err,
            "wall_ms": tr.stats["wall_ms"],
            "n_iter": tr.stats["n_iter_run"],
        }
    out["truth_predictive"] = predictive_report(truth, y_test, horizon, n_points).mean
    return out


def fig3_run(T=20_000, T_test=2_000, seed=0, Ks=(1, 2, 3, 4), config: SamplerConfig | None = None, families=None):
    """Held-out model-selection scores for log-normal and Gaussian emission models."""
    y, truth = make_dataset("lognormal", T + T_test, seed)
    y_train, y_test = y.split(T)
    families = families or ("lognormal", "gaussian")
    base = config or SamplerConfig(
        L=2, n_windows=10, step_size=1e-4, emission_step_size=1e-5, n_iter=3000, thin=10, decay=(100.0, 0.55)
    )
    scores = {}
    for fam in families:
        for K in Ks:
            cfg = dataclasses.replace(base, K=K, family=fam, seed=seed + K)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                tr = run_sg_mcmc(y_train, cfg)
            scores[(fam, K)] = model_selection_score(y_test, tr, fam, samples=tr.tail(0.5))
    return scores


def inflated_instance(kind, scale):
    """Benchmark transitions with emission covariances multiplied by ``scale``."""
    p = true_params(kind)
    return HmmParams(p.A, [GaussianEmission(e.mu, e.Sigma * scale) for e in p.emissions], p.pi0)


def buffer_decay(params, y, L, Bs, n_windows=40, seed=0):
    """Mean over random windows of ln max|buffered - exact| transition-gradient term, per B."""
    y = as_array(y)
    rng = np.random.default_rng(seed)
    T = len(y)
    Bmax = max(Bs)
    taus = rng.integers(L + Bmax, T - L - Bmax, size=n_windows)
    out = np.zeros(len(Bs))
    for tau in taus:
        exact = transition_gradient_term(params, y, SubsequenceWindow(int(tau), L, 0), boundary="exact")
        for i, B in enumerate(Bs):
            g = transition_gradient_term(params, y, SubsequenceWindow(int(tau), L, B), boundary="buffer")
            err = np.max(np.abs(g - exact))
            out[i] += np.log(max(err, np.finfo(float).tiny)) / n_windows
    return out


def decay_fit(params, y, L, Bs, floor=-25.0, n_windows=40, seed=0, lyapunov_iter=4000):
    """Fitted decay slope of the boundary error against the Lyapunov estimate."""
    errs = buffer_decay(params, y, L, Bs, n_windows, seed)
    Bs = np.asarray(Bs)
    ok = errs > floor
    slope, icpt = np.polyfit(Bs[ok], errs[ok], 1)
    resid = errs[ok] - (slope * Bs[ok] + icpt)
    r2 = 1.0 - resid.var() / errs[ok].var()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = estimate_lyapunov(params, y, lyapunov_iter, seed, draw="contiguous")
    return {"B": Bs, "log_error": errs, "used": ok, "slope": float(slope), "r2": float(r2), "lyapunov": est}


def per_iteration_times(y, config: SamplerConfig, n_iter_sg=50, n_iter_batch=3, B=None):
    """Median per-iteration wall time of minibatch and full-gradient runs (ms)."""
    buf = config.buffer if B is None else f"fixed:{B}"
    cfg_sg = dataclasses.replace(config, n_iter=n_iter_sg, buffer=buf, thin=1, max_seconds=None)
    cfg_b = dataclasses.replace(config, n_iter=n_iter_batch, thin=1, max_seconds=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t0 = time.perf_counter()
        tr_sg = run_sg_mcmc(y, cfg_sg)
        tr_b = run_batch_rld(y, cfg_b)
    sg = np.median(np.diff([0.0, *tr_sg.wall_ms]))
    bt = np.median(np.diff([0.0, *tr_b.wall_ms]))
    return {"sg_ms": float(sg), "batch_ms": float(bt), "ratio": float(bt / sg), "total_s": time.perf_counter() - t0}
