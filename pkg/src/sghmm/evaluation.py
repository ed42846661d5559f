"""Predictive likelihood, transition-matrix error, the i.i.d. mixture baseline
and held-out model selection."""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .exceptions import ValidationError
from .hmm import HmmParams, as_array, forward_pass, log_marginal_likelihood
from .samplers import SamplerConfig, Trace, run_sg_mcmc

BRUTE_FORCE_MAX_K = 8


@dataclass(frozen=True)
class PredictiveReport:
    horizon: int
    points: np.ndarray
    values: np.ndarray
    wall_ms: float = float("nan")

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("predictive values must be finite")

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def se(self):
        n = len(self.values)
        return float(np.std(self.values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0


@dataclass(frozen=True)
class TransitionError:
    error: float
    norm: str = "fro"
    perm: tuple | None = None

    def __post_init__(self):
        if not self.error >= 0:
            raise ValidationError("transition error must be >= 0")


def k_step_predictive(params: HmmParams, y, t: int, k: int) -> float:
    """ln p(y[t : t+k] | y[:t]) under ``params``; ``k = 0`` gives 0."""
    y = as_array(y)
    T = len(y)
    if t < 0 or k < 0 or t + k > T:
        raise ValidationError(f"need 0 <= t and t + k <= T, got t={t}, k={k}, T={T}")
    if k == 0:
        return 0.0
    logp = params.log_densities(y[: t + k])
    alphas, _ = forward_pass(logp[:t], params.A, params.pi0)
    _, ln = forward_pass(logp[t:], params.A, alphas[-1], offset=t)
    return float(ln)


def evaluation_points(T, horizon=10, n_points=100, start=None):
    """Evenly spaced prediction origins in ``[start, T - horizon]``."""
    start = horizon if start is None else start
    stop = T - horizon
    if stop < start:
        raise ValidationError(f"sequence of length {T} too short for horizon {horizon}")
    return np.unique(np.linspace(start, stop, min(n_points, stop - start + 1)).round().astype(int))


def predictive_report(params: HmmParams, y, horizon=10, n_points=100, start=None, wall_ms=float("nan")):
    """k-step predictive log-likelihood at evenly spaced points, from one filter pass."""
    y = as_array(y)
    pts = evaluation_points(len(y), horizon, n_points, start)
    logp = params.log_densities(y)
    alphas, _ = forward_pass(logp, params.A, params.pi0)
    vals = np.array([forward_pass(logp[t : t + horizon], params.A, alphas[t], offset=t)[1] for t in pts])
    return PredictiveReport(horizon, pts, vals, wall_ms)


def mean_predictive(params, y, horizon=10, n_points=100, start=None):
    return predictive_report(params, y, horizon, n_points, start).mean


def _check_stochastic(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square")
    if np.any(A < -1e-12) or np.max(np.abs(A.sum(axis=0) - 1)) > 1e-8:
        raise ValidationError(f"{name} must be column-stochastic")
    return A


def _best_perm_bruteforce(A_est, A_ref):
    K = A_est.shape[0]
    perms = np.array(list(itertools.permutations(range(K))))
    best, best_err = None, np.inf
    for chunk in np.array_split(perms, max(1, len(perms) // 5000)):
        P = A_est[chunk[:, :, None], chunk[:, None, :]]
        err = np.sum((P - A_ref) ** 2, axis=(1, 2))
        i = int(np.argmin(err))
        if err[i] < best_err:
            best, best_err = chunk[i], err[i]
    return tuple(int(p) for p in best)


def _best_perm_assignment(A_est, A_ref):
    """Hungarian start on sorted column profiles, then pairwise-swap descent."""
    K = A_est.shape[0]
    se, sr = np.sort(A_est, axis=0), np.sort(A_ref, axis=0)
    cost = ((sr[:, :, None] - se[:, None, :]) ** 2).sum(axis=0)
    _, perm = linear_sum_assignment(cost)
    perm = list(perm)

    def obj(p):
        return np.sum((A_est[np.ix_(p, p)] - A_ref) ** 2)

    cur = obj(perm)
    improved = True
    while improved:
        improved = False
        for a in range(K):
            for b in range(a + 1, K):
                p = perm.copy()
                p[a], p[b] = p[b], p[a]
                v = obj(p)
                if v < cur - 1e-15:
                    perm, cur, improved = p, v, True
    return tuple(int(x) for x in perm)


def transition_error(A_est, A_ref, norm="fro", permute=False, perm=None) -> TransitionError:
    """Matrix-norm distance between transition matrices.

    With ``permute`` the labels of ``A_est`` are chosen to minimize the
    Frobenius distance (exhaustively up to K = 8). ``perm`` applies a given
    relabeling, new state ``k`` being old state ``perm[k]``.
    """
    A_est = _check_stochastic(A_est, "A_est")
    A_ref = _check_stochastic(A_ref, "A_ref")
    if A_est.shape != A_ref.shape:
        raise ValidationError(f"shape mismatch {A_est.shape} vs {A_ref.shape}")
    if permute and perm is None:
        K = A_est.shape[0]
        perm = _best_perm_bruteforce(A_est, A_ref) if K <= BRUTE_FORCE_MAX_K else _best_perm_assignment(A_est, A_ref)
    if perm is not None:
        p = np.asarray(perm)
        A_est = A_est[np.ix_(p, p)]
        perm = tuple(int(x) for x in p)
    D = A_est - A_ref
    if norm == "fro":
        e = np.linalg.norm(D)
    elif norm == "max":
        e = np.max(np.abs(D))
    elif norm == "l1":
        e = np.max(np.abs(D).sum(axis=0))
    else:
        raise ValidationError(f"unknown norm {norm!r}")
    return TransitionError(float(e), norm, perm)


def align_states(est: HmmParams, ref: HmmParams):
    """Relabeling of ``est`` matching its emission locations to ``ref`` (Hungarian)."""
    m_est = np.array([np.atleast_1d(e.mu) for e in est.emissions])
    m_ref = np.array([np.atleast_1d(e.mu) for e in ref.emissions])
    cost = ((m_ref[:, None, :] - m_est[None, :, :]) ** 2).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    return tuple(int(c) for c in cols)


def iid_baseline_fit(y, K, config: SamplerConfig | None = None, prior=None, monitor=None) -> Trace:
    """Mixture model: every column of A equals one weight vector, no buffers."""
    config = config or SamplerConfig(K=K)
    cfg = dataclasses.replace(config, K=K, tied=True, buffer="fixed:0")
    return run_sg_mcmc(y, cfg, prior=prior, monitor=monitor)


def model_selection_score(y_test, trace: Trace, family=None, samples=None) -> float:
    """ln mean_s p(y_test | theta_s) over the trace samples (uniform initial state)."""
    if trace is None or len(trace) == 0:
        raise ValidationError("model selection needs a non-empty trace")
    idx = range(len(trace)) if samples is None else samples
    lls = []
    for i in idx:
        p = trace.params(i)
        if family is not None and p.family != family:
            raise ValidationError(f"trace holds {p.family} emissions, expected {family}")
        lls.append(log_marginal_likelihood(p, y_test))
    if not lls:
        raise ValidationError("no trace samples selected")
    return float(logsumexp(lls) - np.log(len(lls)))
