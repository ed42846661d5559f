"""HMM data model, normalized message passing and simulation.

Conventions used throughout the package:

* ``A[i, j] = Pr(x_t = i | x_{t-1} = j)``: columns of ``A`` sum to one.
* Observations are stored 0-based, ``y[0] .. y[T-1]``; the hidden state that
  precedes ``y[0]`` is drawn from ``pi0``.
* The marginal likelihood is ``1^T P(y[T-1]) A ... P(y[0]) A pi0`` where
  ``P(y)`` is the diagonal matrix of per-state emission densities.

Forward vectors are kept normalized to sum one, backward vectors are
max-normalized, and the discarded scale is accumulated in log space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emissions import emission_log_densities
from .exceptions import NumericalError, ValidationError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HmmParams:
    A: np.ndarray
    emissions: tuple
    pi0: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        pi0 = np.array(self.pi0, dtype=float)
        A.setflags(write=False)
        pi0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "emissions", tuple(self.emissions))
        self.validate()

    @property
    def K(self):
        return self.A.shape[0]

    @property
    def family(self):
        return self.emissions[0].family

    def validate(self):
        A, pi0 = self.A, self.pi0
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ValidationError(f"A must be a non-empty square matrix, got shape {A.shape}")
        K = A.shape[0]
        if not np.all(np.isfinite(A)) or np.any(A < 0):
            raise ValidationError("A must have finite, non-negative entries")
        colsum = A.sum(axis=0)
        if np.max(np.abs(colsum - 1.0)) > STOCHASTIC_TOL:
            bad = int(np.argmax(np.abs(colsum - 1.0)))
            raise ValidationError(f"A is not column-stochastic: column {bad} sums to {colsum[bad]!r}")
        if pi0.shape != (K,):
            raise ValidationError(f"pi0 must have length {K}")
        if np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValidationError("pi0 must be a probability vector")
        if len(self.emissions) != K:
            raise ValidationError(f"expected {K} emission records, got {len(self.emissions)}")
        families = {e.family for e in self.emissions}
        if len(families) != 1:
            raise ValidationError(f"mixed emission families {sorted(families)}")
        # emissions are immutable and checked when built

    def permute(self, perm):
        """Relabel states so that new state ``k`` is old state ``perm[k]``."""
        perm = np.asarray(perm)
        return HmmParams(self.A[np.ix_(perm, perm)], [self.emissions[p] for p in perm], self.pi0[perm])

    def log_densities(self, y):
        return emission_log_densities(self.emissions, as_array(y))


class ObservationSequence:
    """Immutable (T, d) block of observations."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"observations must be a non-empty (T, d) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("observations must be finite")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self):
        return self._data

    @property
    def T(self):
        return self._data.shape[0]

    @property
    def d(self):
        return self._data.shape[1]

    def __len__(self):
        return self.T

    def __getitem__(self, item):
        return self._data[item]

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def split(self, t):
        return ObservationSequence(self._data[:t]), ObservationSequence(self._data[t:])


def as_array(y):
    if isinstance(y, ObservationSequence):
        return y.data
    arr = np.asarray(y, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


@dataclass(frozen=True)
class MessagePair:
    """Boundary messages around a block of observations.

    ``pi`` is a probability vector for the state preceding the block;
    ``q`` is max-normalized, proportional to the likelihood of the data after
    the block given the last state inside it. Unnormalized quantities are
    ``exp(log_norm_pi) * pi`` and ``exp(log_norm_q) * q``.
    """

    pi: np.ndarray
    q: np.ndarray
    log_norm_pi: float = 0.0
    log_norm_q: float = 0.0


# -- array-level kernels ---------------------------------------------------

def _scaled(logp, offset):
    """Row-wise ``exp(logp - max)`` and the maxima."""
    m = np.max(logp, axis=1) if len(logp) else np.zeros(0)
    if not np.isfinite(m).all():
        bad = np.flatnonzero(~np.isfinite(m))
        raise NumericalError(f"observation at t={offset + bad[0]} has zero density under every state")
    return np.exp(logp - m[:, None]), m


def forward_pass(logp, A, init, offset=0):
    """Normalized forward recursion over the rows of ``logp``.

    Returns ``(alphas, log_norm)`` where ``alphas[0] = init`` and
    ``alphas[s + 1] = normalize(P(y_s) A alphas[s])``; ``log_norm`` is the log
    of the total mass discarded, so ``1^T P A ... P A init = exp(log_norm)``.
    """
    n, K = logp.shape
    alphas = np.empty((n + 1, K))
    a = np.asarray(init, dtype=float)
    alphas[0] = a
    cs = np.empty(n)
    P, M = _scaled(logp, offset)
    for s in range(n):
        v = P[s] * (A @ a)
        c = v.sum()
        if not c > 0:
            raise NumericalError(f"forward message vanished at t={offset + s}")
        a = v / c
        alphas[s + 1] = a
        cs[s] = c
    return alphas, float(np.log(cs).sum() + M.sum())


def backward_pass(logp, A, end=None, offset=0):
    """Max-normalized backward recursion.

    ``betas[n] = end`` (ones by default) and
    ``betas[s] = A^T (P(y_s) betas[s + 1])`` rescaled to max one, so
    ``betas[s]`` is proportional to p(y_s..y_{n-1}, end | state before y_s).
    """
    n, K = logp.shape
    betas = np.empty((n + 1, K))
    b = np.ones(K) if end is None else np.asarray(end, dtype=float)
    betas[n] = b
    cs = np.empty(n)
    At = A.T
    P, M = _scaled(logp, offset)
    for s in range(n - 1, -1, -1):
        v = At @ (P[s] * b)
        c = v.max()
        if not c > 0:
            raise NumericalError(f"backward message vanished at t={offset + s}")
        b = v / c
        betas[s] = b
        cs[s] = c
    return betas, float(np.log(cs).sum() + M.sum())

def _scaled_many(logp, offsets):
    n, m, K = logp.shape
    m_ = np.max(logp, axis=2, keepdims=True)
    if not np.isfinite(m_).all():
        w, t, _ = np.argwhere(~np.isfinite(m_))[0]
        raise NumericalError(f"observation at t={offsets[w] + t} has zero density under every state")
    return np.exp(logp - m_)


def forward_pass_many(logp, A, init, offsets):
    """``forward_pass`` run over ``n`` equal-length blocks at once.

    ``logp`` is (n, s, K), ``init`` is (K,) or (n, K); returns alphas (n, s+1, K).
    """
    n, m, K = logp.shape
    alphas = np.empty((n, m + 1, K))
    alphas[:, 0] = init
    P = _scaled_many(logp, offsets)
    a = alphas[:, 0]
    for s in range(m):
        v = P[:, s] * (a @ A.T)
        c = v.sum(axis=1)
        if not np.all(c > 0):
            raise NumericalError(f"forward message vanished at t={offsets[int(np.argmin(c))] + s}")
        a = v / c[:, None]
        alphas[:, s + 1] = a
    return alphas


def backward_pass_many(logp, A, end, offsets):
    """``backward_pass`` run over ``n`` equal-length blocks at once; betas (n, s+1, K)."""
    n, m, K = logp.shape
    betas = np.empty((n, m + 1, K))
    betas[:, m] = 1.0 if end is None else end
    P = _scaled_many(logp, offsets)
    b = betas[:, m]
    for s in range(m - 1, -1, -1):
        v = (P[:, s] * b) @ A
        c = v.max(axis=1)
        if not np.all(c > 0):
            raise NumericalError(f"backward message vanished at t={offsets[int(np.argmin(c))] + s}")
        b = v / c[:, None]
        betas[:, s] = b
    return betas



# -- public operations ------------------------------------------------------

def simulate(params: HmmParams, T: int, rng_seed: int):
    """Draw ``(ObservationSequence, states)`` from the generative model.

    ``states[t]`` is the hidden state that emitted ``y[t]``.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    params.validate()
    rng = np.random.default_rng(rng_seed)
    K = params.K
    cdf = np.cumsum(params.A, axis=0)
    cdf[-1] = 1.0
    u = rng.random(T + 1)
    states = np.empty(T, dtype=np.int64)
    x = int(np.searchsorted(np.cumsum(params.pi0), u[0], side="right"))
    x = min(x, K - 1)
    for t in range(T):
        x = min(int(np.searchsorted(cdf[:, x], u[t + 1], side="right")), K - 1)
        states[t] = x
    d = params.emissions[0].d
    y = np.empty((T, d))
    for k, e in enumerate(params.emissions):
        idx = np.flatnonzero(states == k)
        if idx.size:
            y[idx] = e.sample(rng, idx.size)
    return ObservationSequence(y), states


def log_marginal_likelihood(params: HmmParams, y) -> float:
    """ln p(y | theta) by a normalized forward recursion."""
    y = as_array(y)
    logp = params.log_densities(y)
    _, log_norm = forward_pass(logp, params.A, params.pi0)
    return float(log_norm)


def _check_range(start, stop, T):
    if not (0 <= start <= stop <= T):
        raise ValidationError(f"index range [{start}, {stop}) out of bounds for T={T}")


def forward_predictive(params: HmmParams, y, start: int, stop: int, init=None):
    """Propagate ``init`` through ``y[start:stop]``.

    Returns ``(pi, log_norm)`` with ``pi = normalize(P(y[stop-1]) A ... P(y[start]) A init)``.
    With ``start = 0`` and ``init = pi0`` this is the filter for the state that
    emitted ``y[stop-1]``, i.e. the distribution of the state preceding
    ``y[stop]`` before the next transition is applied.
    """
    y = as_array(y)
    _check_range(start, stop, len(y))
    init = params.pi0 if init is None else np.asarray(init, dtype=float)
    if stop == start:
        return init.copy(), 0.0
    logp = params.log_densities(y[start:stop])
    alphas, log_norm = forward_pass(logp, params.A, init, offset=start)
    return alphas[-1], float(log_norm)


def backward_likelihood(params: HmmParams, y, start: int, stop: int, end=None):
    """Row vector ``1^T P(y[stop-1]) A ... P(y[start]) A``, max-normalized.

    Entry ``i`` is proportional to p(y[start:stop] | state preceding y[start] = i).
    Returns ``(q, log_norm)``.
    """
    y = as_array(y)
    _check_range(start, stop, len(y))
    if stop == start:
        q = np.ones(params.K) if end is None else np.asarray(end, dtype=float).copy()
        return q, 0.0
    logp = params.log_densities(y[start:stop])
    betas, log_norm = backward_pass(logp, params.A, end, offset=start)
    return betas[0], float(log_norm)


def boundary_messages(params: HmmParams, y, start: int, stop: int) -> MessagePair:
    """Exact messages around ``y[start:stop]`` from the full sequence."""
    y = as_array(y)
    pi, lp = forward_predictive(params, y, 0, start)
    q, lq = backward_likelihood(params, y, stop, len(y))
    return MessagePair(pi, q, lp, lq)


def stationary_distribution(A):
    w, v = np.linalg.eig(A)
    k = int(np.argmin(np.abs(w - 1.0)))
    p = np.abs(np.real(v[:, k]))
    return p / p.sum()
