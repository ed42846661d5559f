"""Buffer length from the Lyapunov exponent, mixing-time gaps, gapped minibatches."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import CapacityError, ValidationError
from .gradients import Minibatch, SubsequenceWindow
from .hmm import HmmParams, as_array


@dataclass(frozen=True)
class LyapunovEstimate:
    exponent: float
    n_samples: int
    std_error: float

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if not self.std_error >= 0:
            raise ValidationError("std_error must be >= 0")


@dataclass(frozen=True)
class BufferPolicy:
    B: int
    delta: float = 1e-3
    delta0: float = 2.0
    warning: bool = False


@dataclass(frozen=True)
class GapPolicy:
    nu: int
    min_gap: int
    capped: bool = False


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _observation_stream(y, n, draw, rng, segment):
    T = len(y)
    if draw == "iid":
        return rng.integers(0, T, size=n)
    if draw == "contiguous":
        seg = max(1, min(segment, T))
        n_seg = -(-n // seg)
        starts = rng.integers(0, T - seg + 1, size=n_seg)
        return (starts[:, None] + np.arange(seg)[None, :]).ravel()[:n]
    raise ValidationError(f"unknown observation draw {draw!r}")


def _tangent_step(A, p, v, w):
    """Push (point v, tangent w) through v -> normalize(P A v).

    The differential applied to w is summed pairwise,
    (J w)_j = sum_i (u_j v'_i - u_i v'_j) with u = P A w / s and s = 1^T P A v,
    which avoids the cancellation of the textbook form when v' has entries
    many orders of magnitude apart.
    """
    x = p * (A @ v)
    s = x.sum()
    v_new = x / s
    u = p * (A @ w) / s
    pair = u[:, None] * v_new[None, :] - v_new[:, None] * u[None, :]
    return v_new, pair.sum(axis=1)


def _run_chain(params, y, n_iter, burn_in, rng, method, draw, segment, eta):
    K = params.K
    A = params.A
    order = _observation_stream(y, n_iter, draw, rng, segment)
    logp = params.log_densities(y[order])
    p_all = np.exp(logp - logp.max(axis=1, keepdims=True))
    v = np.full(K, 1.0 / K)
    w = rng.standard_normal(K)
    w -= w.mean()
    w /= np.abs(w).sum()
    tiny = np.finfo(float).tiny
    rates = np.empty(n_iter - burn_in)
    for s in range(n_iter):
        p = p_all[s]
        if not (A @ v * p).sum() > 0:
            # the filter lost all mass to underflow; restart it from the emission weights
            v = p / p.sum()
        if method == "two_trajectory":
            v2 = v + eta * w
            x = p * (A @ v)
            x2 = p * (A @ v2)
            v_new = x / x.sum()
            sep_vec = x2 / x2.sum() - v_new
            sep = np.abs(sep_vec).sum()
            if not np.isfinite(sep):
                sep = 0.0
            growth = max(sep, tiny) / eta
            w = sep_vec / sep if sep > 0 else _fresh_direction(rng, K)
        elif method == "jacobian":
            v_new, w_new = _tangent_step(A, p, v, w)
            sep = np.abs(w_new).sum()
            if not np.isfinite(sep):
                sep = 0.0
            growth = max(sep, tiny)
            w = w_new / sep if sep > 0 else _fresh_direction(rng, K)
        else:
            raise ValidationError(f"unknown Lyapunov method {method!r}")
        v = v_new
        if s >= burn_in:
            rates[s - burn_in] = np.log(growth)
    return rates


def _fresh_direction(rng, K):
    w = rng.standard_normal(K)
    w -= w.mean()
    return w / np.abs(w).sum()


def _batch_means_se(rates, n_batches):
    n_batches = max(2, min(n_batches, len(rates)))
    chunks = np.array_split(rates, n_batches)
    means = np.array([c.mean() for c in chunks])
    return float(means.std(ddof=1) / np.sqrt(len(means)))


def estimate_lyapunov(
    params: HmmParams,
    y,
    n_iter: int = 5000,
    rng_seed=0,
    *,
    method: str = "two_trajectory",
    burn_in: int | None = None,
    draw: str = "iid",
    segment: int = 1000,
    n_replicas: int = 1,
    n_batches: int = 20,
    eta: float = 1e-8,
) -> LyapunovEstimate:
    """Monte Carlo estimate of the exponential contraction rate of v -> normalize(P(y) A v).

    Observations drive the map either as independent draws from the data
    (``draw="iid"``) or along random contiguous stretches of it
    (``draw="contiguous"``). Distances are L1 on the simplex.
    """
    y = as_array(y)
    if params.K == 1:
        return LyapunovEstimate(-math.inf, max(1, n_iter), 0.0)
    burn_in = int(0.1 * n_iter) if burn_in is None else int(burn_in)
    if n_iter <= burn_in or n_iter < 2:
        raise ValidationError(f"n_iter={n_iter} must exceed the burn-in of {burn_in} steps")
    seeds = np.random.SeedSequence(rng_seed if isinstance(rng_seed, int) else None).spawn(n_replicas)
    all_rates = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        all_rates.append(_run_chain(params, y, n_iter, burn_in, rng, method, draw, segment, eta))
    rates = np.concatenate(all_rates)
    return LyapunovEstimate(float(rates.mean()), int(rates.size), _batch_means_se(rates, n_batches * n_replicas))


def buffer_length(est, delta: float = 1e-3, delta0: float = 2.0, B_max: int = 100) -> BufferPolicy:
    """B = ceil(ln(delta / delta0) / exponent), clamped to [1, B_max]."""
    if not 0 < delta <= delta0:
        raise ValidationError(f"need 0 < delta <= delta0, got delta={delta}, delta0={delta0}")
    exponent = est.exponent if isinstance(est, LyapunovEstimate) else float(est)
    if math.isnan(exponent) or exponent >= 0:
        return BufferPolicy(int(B_max), delta, delta0, warning=True)
    B = math.ceil(math.log(delta / delta0) / exponent)
    return BufferPolicy(int(min(max(B, 1), B_max)), delta, delta0)


def second_eigenvalue_modulus(A):
    mod = np.sort(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float))))[::-1]
    return float(mod[1]) if mod.size > 1 else 0.0


def mixing_time(A, T: int | None = None) -> float:
    """nu = 1 / (1 - |lambda_2|), capped at T / 10 when T is given."""
    lam2 = min(second_eigenvalue_modulus(A), 1.0)
    # 12 significant digits is below the eigen-solver's accuracy; it keeps exact cases exact
    nu = math.inf if lam2 >= 1.0 else float(f"{1.0 / (1.0 - lam2):.12g}")
    if T is not None and nu > T / 10:
        warnings.warn(f"mixing time {nu:.4g} capped at T/10 = {T / 10:g}", RuntimeWarning, stacklevel=2)
        return T / 10
    return nu


def gap_policy(A, L, B, T=None, count=None, fill=0.5) -> GapPolicy:
    """Integer mixing gap; with ``count`` the gap is also capped so that the
    batch's exclusion zones cover at most ``fill`` of the sequence."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        nu = mixing_time(A, T)
    capped = T is not None and nu >= T / 10
    nu = max(1, int(math.ceil(nu - 1e-9))) if math.isfinite(nu) else 1
    if count is not None and T is not None:
        limit = int(fill * T / count) - 2 * (L + B)
        if nu > limit:
            nu = max(1, limit)
            capped = True
    return GapPolicy(nu, 2 * (L + B) + nu, capped)


def max_batch_count(T, L, B, nu):
    lo, hi = L + B, T - 1 - L - B
    if hi < lo:
        return 0
    return (hi - lo) // (2 * (L + B) + nu) + 1


def _allowed_intervals(lo, hi, chosen, gap):
    intervals = [(lo, hi)]
    for c in chosen:
        a, b = c - gap + 1, c + gap - 1
        nxt = []
        for s, e in intervals:
            if e < a or s > b:
                nxt.append((s, e))
                continue
            if s < a:
                nxt.append((s, a - 1))
            if e > b:
                nxt.append((b + 1, e))
        intervals = nxt
    return intervals


def overlap_length(tau, T, L, B, nu, others):
    """Wasted-space correction for a newly placed window (1-based ``tau``).

    Sum of the distances to the sequence ends and to the nearest earlier
    windows on either side (minus L + B) that fall below 2 nu + 3L + 3B.
    """
    thresh = 2 * nu + 3 * L + 3 * B
    terms = [abs(tau), abs(T - tau)]
    left = [tau - o for o in others if o < tau]
    right = [o - tau for o in others if o > tau]
    if left:
        terms.append(min(left) - L - B)
    if right:
        terms.append(min(right) - L - B)
    if min(terms) >= thresh:
        return 0
    return int(sum(t for t in terms if t < thresh))


def minibatch_log_prob(centers, T, L, B, nu):
    """Sequential-selection probability of ``centers`` (0-based, in draw order).

    Returns ``(log_prob, per_draw_log_probs)`` with
    p = prod_n (2L+1) / |S_n|, |S_0| = T and
    |S_n| = |S_{n-1}| - (nu + 2B + 2L) - L_overlap(tau_n).
    """
    W = 2 * L + 1
    size = float(T)
    draws = []
    placed = []
    for n, c in enumerate(centers):
        if n > 0:
            tau_prev = centers[n - 1] + 1
            size = size - (nu + 2 * B + 2 * L) - overlap_length(tau_prev, T, L, B, nu, placed[:-1])
        draws.append(math.log(W / max(size, W)))
        placed.append(c + 1)
    return float(sum(draws)), tuple(draws)


def sample_minibatch(T, L, B, nu, count, rng_seed=None, max_attempts=20) -> Minibatch:
    """Draw ``count`` windows sequentially, each uniform over the centers that
    keep it at least 2(L+B)+nu away from every earlier window."""
    nu = int(math.ceil(nu))
    if count < 1:
        raise ValidationError("count must be >= 1")
    cap = max_batch_count(T, L, B, nu)
    if count > cap:
        raise CapacityError(
            f"sequence of length {T} holds at most {cap} windows with L={L}, B={B}, nu={nu}", max_count=cap
        )
    rng = _rng(rng_seed)
    gap = 2 * (L + B) + nu
    lo, hi = L + B, T - 1 - L - B
    for _ in range(max_attempts):
        chosen = []
        for _ in range(count):
            iv = _allowed_intervals(lo, hi, chosen, gap)
            sizes = np.array([e - s + 1 for s, e in iv])
            total = int(sizes.sum()) if sizes.size else 0
            if total == 0:
                break
            r = int(rng.integers(total))
            k = int(np.searchsorted(np.cumsum(sizes), r, side="right"))
            s, _ = iv[k]
            chosen.append(s + r - int(np.sum(sizes[:k])))
        if len(chosen) == count:
            log_prob, draws = minibatch_log_prob(chosen, T, L, B, nu)
            windows = [SubsequenceWindow(c, L, B) for c in chosen]
            return Minibatch(windows, log_prob, "gapped", T, draws)
    raise CapacityError(
        f"random placement of {count} windows jammed after {max_attempts} attempts (T={T}, gap={gap})",
        max_count=cap,
    )
