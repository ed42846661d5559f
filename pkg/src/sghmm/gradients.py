"""Gradients of the potential U = -ln p(y | theta) - ln p(theta).

Transition gradients are taken with respect to the expanded-mean matrix
``A_hat`` (``A = |A_hat| / column sums``); emission gradients are in each
family's exposed coordinates.

The per-timestep terms are pairwise-marginal analogues: for every ``t`` in a
window the left message is carried from the window's left boundary up to
``t - 1`` and the right message from the right boundary back to ``t + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emissions import GaussianEmission, LogNormalEmission
from .exceptions import NumericalError, ValidationError
from .hmm import HmmParams, as_array, backward_pass, backward_pass_many, forward_pass, forward_pass_many
from .priors import Prior


@dataclass(frozen=True)
class SubsequenceWindow:
    """Observations ``y[tau - L : tau + L + 1]`` with ``B`` buffer steps per side."""

    tau: int
    L: int
    B: int = 0

    @property
    def start(self):
        return self.tau - self.L

    @property
    def stop(self):
        return self.tau + self.L + 1

    @property
    def length(self):
        return 2 * self.L + 1

    @property
    def left(self):
        return self.start - self.B

    @property
    def right(self):
        return self.stop + self.B

    def check(self, T):
        if self.L < 0 or self.B < 0:
            raise ValidationError(f"window half-width and buffer must be >= 0, got L={self.L}, B={self.B}")
        if self.left < 0 or self.right > T:
            raise ValidationError(
                f"window tau={self.tau} (L={self.L}, B={self.B}) spans [{self.left}, {self.right}) outside [0, {T})"
            )


@dataclass(frozen=True)
class Minibatch:
    """Windows plus the probability bookkeeping of the scheme that drew them.

    ``log_prob`` is ln p(S~) as reported by the sampler. ``draw_log_probs``
    holds the per-draw inclusion rate of each window; the estimator scales
    window ``n`` by ``exp(-draw_log_probs[n]) / len(windows)``.

    ``scheme`` selects the weighting:

    * ``"uniform"``: independent uniform windows, with an exact coverage
      correction for timesteps near the ends of the legal range.
    * ``"gapped"``: sequential gap-respecting draws, per-draw scaling.
    * ``"fixed"``: every timestep scaled by ``exp(-log_prob)``.
    """

    windows: tuple
    log_prob: float
    scheme: str = "fixed"
    T: int | None = None
    draw_log_probs: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if not self.windows:
            raise ValidationError("minibatch has no windows")
        if not np.isfinite(self.log_prob):
            raise ValidationError("minibatch log probability must be finite")
        shapes = {(w.L, w.B) for w in self.windows}
        if len(shapes) != 1:
            raise ValidationError("all windows in a minibatch must share L and B")

    @property
    def L(self):
        return self.windows[0].L

    @property
    def B(self):
        return self.windows[0].B

    def __len__(self):
        return len(self.windows)

    def timestep_weights(self):
        """(n, 2L+1) multipliers applied to each window timestep's term."""
        n, L, B = len(self.windows), self.L, self.B
        W = 2 * L + 1
        if self.scheme == "fixed":
            return np.full((n, W), np.exp(-self.log_prob))
        if self.scheme == "gapped":
            lp = np.asarray(self.draw_log_probs, dtype=float)
            return np.repeat(np.exp(-lp)[:, None] / n, W, axis=1)
        if self.scheme == "uniform":
            T = self.T
            first, last = B, T - B - W
            n_pos = last - first + 1
            starts = np.array([w.start for w in self.windows])
            t = starts[:, None] + np.arange(W)[None, :]
            cover = np.minimum(t, last) - np.maximum(first, t - W + 1) + 1
            return n_pos / (n * cover)
        raise ValidationError(f"unknown minibatch scheme {self.scheme!r}")


def uniform_minibatch(T, L, B, count, rng):
    """Independent uniform window positions (with replacement)."""
    W = 2 * L + 1
    n_pos = T - 2 * B - W + 1
    if n_pos < 1:
        raise ValidationError(f"sequence of length {T} cannot host a window with L={L}, B={B}")
    starts = B + rng.integers(0, n_pos, size=count)
    windows = [SubsequenceWindow(int(s) + L, L, B) for s in starts]
    lp = np.log(count * W / n_pos)
    return Minibatch(windows, float(lp), "uniform", T, tuple([np.log(W / n_pos)] * count))


def single_window_batch(window, log_prob=0.0):
    return Minibatch((window,), log_prob, "fixed")


@dataclass(frozen=True)
class PotentialGradient:
    """Gradient of U in (A_hat, emission) coordinates.

    ``d_emissions[k]`` is ``(d_mu, d_Sigma)`` for Gaussian states and
    ``(d_mu, d_sigma)`` for log-normal ones. ``dA_hat`` is (K,) for the tied
    (mixture) transition model.
    """

    dA_hat: np.ndarray
    d_emissions: list
    window_dA_hat: np.ndarray | None = None
    window_d_emissions: list | None = None

    def flat(self):
        parts = [np.ravel(self.dA_hat)]
        for g in self.d_emissions:
            parts.extend(np.ravel(np.asarray(x, dtype=float)) for x in g)
        return np.concatenate(parts)


# -- shared kernel ----------------------------------------------------------

def _block_terms(logp, A, init, end, offset=0):
    """Per-timestep pairwise and single-site statistics for one block.

    Returns ``(left, right, gamma)``: the likelihood derivative with respect
    to ``A[i, j]`` at step ``s`` is ``right[s, i] * left[s, j]``; ``gamma[s]``
    is the posterior of the state emitting ``y_s`` given the block and its
    boundary messages.
    """
    alphas, _ = forward_pass(logp, A, init, offset)
    betas, _ = backward_pass(logp, A, end, offset)
    return _terms_from_messages(logp, A, alphas, betas, offset)


def _terms_from_messages(logp, A, alphas, betas, offset=0):
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    u = betas[1:] * p
    prev = alphas[:-1]
    Z = np.einsum("si,si->s", u, prev @ A.T)
    if not np.all(Z > 0):
        s = int(np.argmin(Z))
        raise NumericalError(f"window likelihood vanished at t={offset + s}")
    gamma = alphas[1:] * betas[1:]
    gamma /= gamma.sum(axis=1, keepdims=True)
    return prev, u / Z[:, None], gamma


def _chain_expanded(G, A_hat):
    """Map dl/dA to dl/dA_hat through A = |A_hat| / column sums."""
    absA = np.abs(A_hat)
    S = absA.sum(axis=0)
    A = absA / S
    return np.sign(A_hat) / S * (G - np.sum(G * A, axis=0, keepdims=True))


def _chain_tied(g, w_hat):
    absw = np.abs(w_hat)
    S = absw.sum()
    w = absw / S
    return np.sign(w_hat) / S * (g - np.dot(g, w))


def _emission_loglik_grads(emissions, y, gamma, weights):
    """Sum over timesteps of weight * gamma_k * grad log p_k(y_t), per state."""
    out = []
    for k, e in enumerate(emissions):
        c = weights * gamma[:, k]
        if isinstance(e, GaussianEmission):
            g_mu, g_Sigma = e.grad(y)
            out.append((c @ g_mu, np.einsum("t,tij->ij", c, g_Sigma)))
        elif isinstance(e, LogNormalEmission):
            g_mu, g_sigma = e.grad(y)
            out.append((float(c @ g_mu), float(c @ g_sigma)))
        else:
            raise ValidationError(f"unsupported emission family {e!r}")
    return out


def _resolve_hat(params, A_hat, tied):
    if A_hat is None:
        return params.A[:, 0].copy() if tied else params.A.copy()
    return np.asarray(A_hat, dtype=float)


def _transition_loglik(G, A_hat, tied):
    if tied:
        return _chain_tied(G.sum(axis=1), A_hat)
    return _chain_expanded(G, A_hat)


def _assemble(params, prior, A_hat, tied, G, em):
    prior = prior if prior is not None else Prior()
    dA = -_transition_loglik(G, A_hat, tied) - prior.transition.grad(A_hat)
    d_em = []
    for e, g in zip(params.emissions, em):
        pg = prior.emission.grad(e)
        d_em.append(tuple(-np.asarray(a, dtype=float) - np.asarray(b, dtype=float) for a, b in zip(g, pg)))
    for x in [dA, *[v for g in d_em for v in g]]:
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite gradient entry")
    return dA, d_em


# -- public operations --------------------------------------------------------

def full_gradient(params: HmmParams, prior: Prior | None, y, A_hat=None, L=None, tied=False):
    """Exact gradient of U from one forward and one backward pass.

    ``L`` groups the per-timestep terms into consecutive windows of length
    ``2L + 1`` (the last one possibly shorter) before summing; the result does
    not depend on it beyond floating-point rounding.
    """
    y = as_array(y)
    A_hat = _resolve_hat(params, A_hat, tied)
    logp = params.log_densities(y)
    left, right, gamma = _block_terms(logp, params.A, params.pi0, None)
    T = len(y)
    W = T if L is None else 2 * L + 1
    if W < 1:
        raise ValidationError("window length must be >= 1")
    K = params.K
    G = np.zeros((K, K))
    for a in range(0, T, W):
        G += right[a : a + W].T @ left[a : a + W]
    em = _emission_loglik_grads(params.emissions, y, gamma, np.ones(T))
    dA, d_em = _assemble(params, prior, A_hat, tied, G, em)
    return PotentialGradient(dA, d_em)


def _terms_many(logp, A, alphas, betas, offsets):
    """Batched ``_terms_from_messages``; returns a list of per-window tuples."""
    p = np.exp(logp - logp.max(axis=2, keepdims=True))
    u = betas[:, 1:] * p
    prev = alphas[:, :-1]
    Z = np.einsum("nsi,nsi->ns", u, prev @ A.T)
    if not np.all(Z > 0):
        n, s = np.unravel_index(int(np.argmin(Z)), Z.shape)
        raise NumericalError(f"window likelihood vanished at t={offsets[n] + s}")
    gamma = alphas[:, 1:] * betas[:, 1:]
    gamma /= gamma.sum(axis=2, keepdims=True)
    r = u / Z[..., None]
    return [(prev[n], r[n], gamma[n]) for n in range(len(logp))]


def window_statistics(params, y, batch: Minibatch, use_buffers=True, exact_boundaries=False):
    """Per-window (left, right, gamma) statistics plus the data they cover."""
    y = as_array(y)
    T = len(y)
    for w in batch.windows:
        w.check(T)
    mode = "exact" if exact_boundaries else ("buffer" if use_buffers else "none")
    span = batch.windows[0].right - batch.windows[0].left
    idx = np.array([np.arange(w.left, w.right) for w in batch.windows])
    logp_all = params.log_densities(y[idx.ravel()]).reshape(len(batch), span, params.K)
    B, W = batch.B, 2 * batch.L + 1
    A = params.A
    starts = np.array([w.start for w in batch.windows])
    core = logp_all[:, B : B + W]
    if mode == "buffer" and B > 0:
        # one pass through left buffer + core and one through core + right buffer
        # gives the same normalized messages as separate boundary and block passes
        alphas = forward_pass_many(logp_all[:, : B + W], A, params.pi0, starts - B)[:, B:]
        betas = backward_pass_many(logp_all[:, B:], A, None, starts)[:, : W + 1]
    else:
        init, end = params.pi0, None
        if mode == "exact":
            logp_full = params.log_densities(y)
            init = forward_pass(logp_full, A, params.pi0)[0][starts]
            end = backward_pass(logp_full, A, None)[0][starts + W]
        alphas = forward_pass_many(core, A, init, starts)
        betas = backward_pass_many(core, A, end, starts)
    stats = _terms_many(core, A, alphas, betas, starts)
    return stats, idx[:, B : B + W]


def stochastic_gradient(
    params: HmmParams,
    prior: Prior | None,
    y,
    batch: Minibatch,
    use_buffers=True,
    exact_boundaries=False,
    A_hat=None,
    tied=False,
    per_window=False,
):
    """Minibatch estimate of the gradient of U.

    Boundary messages come from the buffers (``pi0`` propagated through the
    left buffer, ones through the right one), from ``pi0`` and ones directly
    when ``use_buffers`` is off, or from full passes when ``exact_boundaries``.
    """
    y = as_array(y)
    A_hat = _resolve_hat(params, A_hat, tied)
    stats, core = window_statistics(params, y, batch, use_buffers, exact_boundaries)
    weights = batch.timestep_weights()
    K = params.K
    Gs = np.empty((len(stats), K, K))
    for n, (left, right, _) in enumerate(stats):
        Gs[n] = (right * weights[n][:, None]).T @ left
    gamma = np.concatenate([g for _, _, g in stats])
    y_core = y[core.ravel()]
    em = _emission_loglik_grads(params.emissions, y_core, gamma, weights.ravel())
    dA, d_em = _assemble(params, prior, A_hat, tied, Gs.sum(axis=0), em)
    if not per_window:
        return PotentialGradient(dA, d_em)
    n = len(stats)
    W = core.shape[1]
    win_dA = np.stack([-_transition_loglik(G * n, A_hat, tied) for G in Gs])
    win_em = []
    for i in range(n):
        sl = slice(i * W, (i + 1) * W)
        g = _emission_loglik_grads(params.emissions, y_core[sl], gamma[sl], weights.ravel()[sl] * n)
        win_em.append([tuple(-np.asarray(a, dtype=float) for a in gk) for gk in g])
    return PotentialGradient(dA, d_em, win_dA, win_em)


def _single(params, y, window, boundary):
    y = as_array(y)
    window.check(len(y))
    batch = single_window_batch(window)
    stats, core = window_statistics(
        params, y, batch, use_buffers=(boundary == "buffer"), exact_boundaries=(boundary == "exact")
    )
    return stats[0], y[core[0]]


def transition_gradient_term(params: HmmParams, y, window: SubsequenceWindow, A_hat=None, boundary="buffer"):
    """-d/dA_hat of the log window likelihood q^T P(y_window) pi (unweighted)."""
    A_hat = _resolve_hat(params, A_hat, False)
    (left, right, _), _ = _single(params, y, window, boundary)
    return -_chain_expanded(right.T @ left, A_hat)


def window_responsibilities(params: HmmParams, y, window: SubsequenceWindow, boundary="buffer"):
    """(2L+1, K) posterior of each window state given the boundary messages."""
    (_, _, gamma), _ = _single(params, y, window, boundary)
    return gamma


def emission_gradient_term(params: HmmParams, y, window: SubsequenceWindow, k: int, boundary="buffer"):
    """-d/dphi_k of the log window likelihood, responsibility-weighted."""
    (_, _, gamma), yw = _single(params, y, window, boundary)
    g = _emission_loglik_grads([params.emissions[k]], yw, gamma[:, k : k + 1], np.ones(len(yw)))[0]
    return tuple(-np.asarray(a, dtype=float) for a in g)
