"""SG-RLD updates for the expanded-mean transition matrix and emission
parameters, the minibatch outer loop, and a full-gradient batch baseline.

All update kernels follow

    theta <- theta - eps * (D grad U - Gamma) + N(0, eps * (2 D - eps * B_hat))

with the block-specific metric ``D`` and its divergence ``Gamma``.
"""
from __future__ import annotations

import dataclasses
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .adaptivity import buffer_length, estimate_lyapunov, gap_policy, sample_minibatch
from .emissions import GaussianEmission, LogNormalEmission
from .exceptions import NumericalError, SGHMMError, ValidationError
from .gradients import full_gradient, stochastic_gradient, uniform_minibatch
from .hmm import HmmParams, as_array
from .priors import Prior, default_prior

TINY = 1e-10


class NoiseGuardWarning(RuntimeWarning):
    """The step size was shrunk so that the injected noise covariance stays PSD."""


# -- state and trace ---------------------------------------------------------

@dataclass
class SamplerState:
    A_hat: np.ndarray
    emissions: list
    step_size: float
    rng: np.random.Generator
    noise_cov_estimate: dict = field(default_factory=dict)
    iteration: int = 0
    tied: bool = False
    n_rejected: int = 0
    n_shrunk: int = 0
    min_noise_var: float = np.inf

    def __post_init__(self):
        self.A_hat = np.asarray(self.A_hat, dtype=float)
        if not self.step_size > 0:
            raise ValidationError(f"step size must be positive, got {self.step_size}")

    @property
    def K(self):
        return self.A_hat.shape[0]

    @property
    def A(self):
        if self.tied:
            w = normalize_transition(self.A_hat[:, None])[:, 0]
            return np.repeat(w[:, None], len(w), axis=1)
        return normalize_transition(self.A_hat)

    def params(self):
        K = self.K
        return HmmParams(self.A, list(self.emissions), np.full(K, 1.0 / K))


@dataclass
class Trace:
    """Thinned samples with per-sample timing and diagnostics."""

    A: list = field(default_factory=list)
    emissions: list = field(default_factory=list)
    iteration: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    log_pred: list = field(default_factory=list)
    B: list = field(default_factory=list)
    nu: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.A)

    def append(self, A, emissions, iteration, wall_ms, log_pred=np.nan, B=0, nu=0):
        A = np.array(A, dtype=float)
        if np.max(np.abs(A.sum(axis=0) - 1.0)) > 1e-10 or np.any(A < 0):
            raise NumericalError(f"trace sample at iteration {iteration} is not column-stochastic")
        self.A.append(A)
        self.emissions.append(list(emissions))
        self.iteration.append(int(iteration))
        self.wall_ms.append(float(wall_ms))
        self.log_pred.append(float(log_pred))
        self.B.append(int(B))
        self.nu.append(int(nu))

    def params(self, i=-1):
        A = self.A[i]
        K = A.shape[0]
        return HmmParams(A, self.emissions[i], np.full(K, 1.0 / K))

    def A_array(self):
        return np.array(self.A)

    def tail(self, frac=0.5):
        """Indices of the last ``frac`` of the samples."""
        n = len(self)
        return range(int(n * (1 - frac)), n)

    def mean_A(self, frac=0.5):
        idx = list(self.tail(frac))
        return np.mean([self.A[i] for i in idx], axis=0)

    def mu_array(self, k=0):
        return np.array([np.atleast_1d(em[k].mu) for em in self.emissions])


# -- transition block --------------------------------------------------------

def normalize_transition(A_hat):
    """Column-normalize ``|A_hat|``."""
    a = np.abs(np.asarray(A_hat, dtype=float))
    S = a.sum(axis=0)
    if np.any(S <= 0):
        raise NumericalError(f"degenerate state: all-zero column {int(np.argmin(S))} in A_hat")
    return a / S


def _shrink_for(var_fn, eps, what):
    """Largest eps' <= eps (halving) for which var_fn(eps') is PSD."""
    e = eps
    for _ in range(60):
        if var_fn(e):
            if e < eps:
                warnings.warn(f"{what}: step size shrunk from {eps:g} to {e:g} to keep noise PSD", NoiseGuardWarning)
            return e
        e *= 0.5
    raise NumericalError(f"{what}: cannot find a step size with PSD noise covariance")


def transition_drift(A_hat, grad, eps):
    """Deterministic part of the expanded-mean update: -eps (A_hat * grad) + eps."""
    return -eps * (A_hat * grad) + eps


def sgld_step_transition(state: SamplerState, grad, B_hat=None, eps=None) -> SamplerState:
    """One SG-RLD step on ``A_hat`` with D = diag(A_hat) and Gamma = 1 per entry.

    Entries are stored as absolute values afterwards and exact zeros are
    moved to a tiny positive number.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.A_hat.shape or not np.all(np.isfinite(grad)):
        raise NumericalError("transition gradient must be finite and match A_hat")
    A_hat = state.A_hat
    eps = state.step_size if eps is None else eps
    Bh = np.zeros_like(A_hat) if B_hat is None else np.asarray(B_hat, dtype=float)
    eps = _shrink_for(lambda e: np.all(2 * A_hat - e * Bh >= 0), eps, "transition")
    var = eps * (2 * A_hat - eps * Bh)
    assert np.all(var >= 0)
    new = A_hat + transition_drift(A_hat, grad, eps) + np.sqrt(var) * state.rng.standard_normal(A_hat.shape)
    new = np.abs(new)
    new[new == 0] = TINY
    return dataclasses.replace(
        state,
        A_hat=new,
        n_shrunk=state.n_shrunk + (eps < state.step_size),
        min_noise_var=min(state.min_noise_var, float(var.min())),
    )


# -- emission blocks ---------------------------------------------------------

def _is_pd(S):
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def _psd_ok(M, tol=1e-12):
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return w.min() >= -tol * max(1.0, abs(w.max()))


def _sym_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def sgld_step_gaussian(e: GaussianEmission, g_mu, g_Sigma, eps, rng, B_hat_mu=None):
    """SG-RLD step for one Gaussian state.

    mu uses D = Sigma (Gamma = 0). Sigma is updated in half-vectorized
    coordinates with D(ij, kl) = (S_ik S_jl + S_il S_jk) / 2, whose divergence
    is (d + 1) Sigma; the noise ``sqrt(2 eps) sym(S^1/2 W S^1/2)`` has exactly
    covariance ``2 eps D``. A proposed Sigma that is not PD is rejected.

    Returns ``(emission, rejected, eps_used, min_noise_eig)``.
    """
    S = e.Sigma
    d = e.d
    g_mu = np.asarray(g_mu, dtype=float)
    g_Sigma = np.asarray(g_Sigma, dtype=float)
    if not (np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_Sigma))):
        raise NumericalError("Gaussian emission gradient is not finite")
    lam, V = np.linalg.eigh(S)
    R = (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T
    if B_hat_mu is None or not np.any(B_hat_mu):
        w_min = 2 * eps * float(lam.min())
        assert w_min > 0
        step_mu = np.sqrt(2 * eps) * R @ rng.standard_normal(d)
    else:
        Bm = np.asarray(B_hat_mu, dtype=float)
        eps = _shrink_for(lambda x: _psd_ok(2 * S - x * Bm), eps, "gaussian mean")
        cov_mu = eps * (2 * S - eps * Bm)
        cov_mu = 0.5 * (cov_mu + cov_mu.T)
        w_min = float(np.linalg.eigvalsh(cov_mu).min())
        assert w_min >= -1e-12 * abs(cov_mu).max()
        step_mu = _sym_sqrt(cov_mu) @ rng.standard_normal(d)
    mu = e.mu - eps * S @ g_mu + step_mu

    Gs = 0.5 * (g_Sigma + g_Sigma.T)
    W = R @ rng.standard_normal((d, d)) @ R
    noise = np.sqrt(2 * eps) * 0.5 * (W + W.T)
    prop = S - eps * S @ Gs @ S + eps * (d + 1) * S + noise
    prop = 0.5 * (prop + prop.T)
    rejected = not _is_pd(prop)
    Sigma = S if rejected else prop
    try:
        new = GaussianEmission(mu, Sigma)
    except SGHMMError:
        new, rejected = GaussianEmission(mu, S), True
    return new, rejected, eps, w_min


def sgld_step_lognormal(e: LogNormalEmission, g_mu, g_sigma, eps, rng, B_hat=None):
    """SG-RLD step for one log-normal state.

    Works in (mu, s = ln sigma) where the metric diag(sigma^2, sigma^2 / 2)
    becomes diag(sigma^2, 1/2). The s-potential gains the Jacobian term -s,
    so its gradient is ``sigma * dU/dsigma - 1``. No divergence term remains.

    Returns ``(emission, eps_used, min_noise_var)``.
    """
    if not (np.isfinite(g_mu) and np.isfinite(g_sigma)):
        raise NumericalError("log-normal emission gradient is not finite")
    sigma = e.sigma
    D = np.array([sigma**2, 0.5])
    Bh = np.zeros(2) if B_hat is None else np.asarray(B_hat, dtype=float)
    eps = _shrink_for(lambda x: np.all(2 * D - x * Bh >= 0), eps, "lognormal")
    var = eps * (2 * D - eps * Bh)
    assert np.all(var >= 0)
    g = np.array([g_mu, sigma * g_sigma - 1.0])
    z = np.sqrt(var) * rng.standard_normal(2)
    mu = e.mu - eps * D[0] * g[0] + z[0]
    s = np.log(sigma) - eps * D[1] * g[1] + z[1]
    return LogNormalEmission(float(mu), float(np.exp(s))), eps, float(var.min())


def _average_emissions(samples):
    first = samples[0]
    out = []
    for k in range(len(first)):
        es = [s[k] for s in samples]
        if isinstance(es[0], GaussianEmission):
            out.append(GaussianEmission(np.mean([x.mu for x in es], axis=0), np.mean([x.Sigma for x in es], axis=0)))
        else:
            out.append(LogNormalEmission(float(np.mean([x.mu for x in es])), float(np.mean([x.sigma for x in es]))))
    return out


# -- configuration -----------------------------------------------------------

@dataclass
class SamplerConfig:
    K: int = 8
    family: str = "gaussian"
    L: int = 2
    n_windows: int = 10
    step_size: float = 1e-4
    emission_step_size: float | None = None
    n_iter: int = 500
    n_steps: int = 1
    buffer: str = "adaptive"
    delta: float = 1e-3
    delta0: float = 2.0
    B_max: int = 100
    reestimate_every: int = 50
    lyapunov_iter: int = 2000
    lyapunov_draw: str = "contiguous"
    sampler: str = "gapped"
    fill: float = 0.5
    seed: int = 0
    thin: int = 1
    average_inner: bool = True
    noise_correction: bool = False
    decay: tuple | None = None
    max_seconds: float | None = None
    progress_every: int = 0
    eval_every: int = 0
    tied: bool = False
    init_subsample: int = 5000
    init_restarts: int = 10
    prior: Prior | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.family not in ("gaussian", "lognormal"):
            raise ValidationError(f"unknown emission family {self.family!r}")
        if self.L < 0 or self.n_windows < 1:
            raise ValidationError("need L >= 0 and n_windows >= 1")
        for name in ("step_size", "delta", "delta0"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.emission_step_size is not None and not self.emission_step_size > 0:
            raise ValidationError("emission_step_size must be positive")
        if self.delta > self.delta0:
            raise ValidationError("delta must not exceed delta0")
        if self.n_iter < 0 or self.n_steps < 1 or self.thin < 1 or self.reestimate_every < 1:
            raise ValidationError("need n_iter >= 0, n_steps >= 1, thin >= 1, reestimate_every >= 1")
        if self.sampler not in ("gapped", "uniform"):
            raise ValidationError(f"unknown minibatch sampler {self.sampler!r}")
        self.buffer_mode()
        if self.decay is not None and len(self.decay) != 2:
            raise ValidationError("decay must be (b, gamma) for eps_t = eps (1 + t / b)^-gamma")

    def buffer_mode(self):
        """``("adaptive", None)``, ``("none", 0)`` or ``("fixed", B)``."""
        b = str(self.buffer)
        if b == "adaptive":
            return "adaptive", None
        if b == "none":
            return "none", 0
        if b.startswith("fixed:"):
            try:
                B = int(b.split(":", 1)[1])
            except ValueError:
                raise ValidationError(f"bad buffer mode {b!r}") from None
            if B < 0:
                raise ValidationError("fixed buffer length must be >= 0")
            return "fixed", B
        raise ValidationError(f"buffer mode must be adaptive, none or fixed:B, got {b!r}")

    def step_at(self, t, base):
        if self.decay is None:
            return base
        b, gamma = self.decay
        return base * (1.0 + t / b) ** (-gamma)


# -- initialization -----------------------------------------------------------

def initialize(y, config: SamplerConfig, rng):
    """Best of several k-means runs on a subsample for emission locations; uniform A_hat."""
    y = as_array(y)
    K = config.K
    n = min(len(y), config.init_subsample)
    idx = np.sort(rng.choice(len(y), size=n, replace=False))
    x = y[idx]
    if config.family == "lognormal":
        if np.any(x <= 0):
            raise ValidationError("log-normal model requires positive observations")
        x = np.log(x)
    if K == 1:
        labels = np.zeros(n, dtype=int)
        centers = x.mean(axis=0, keepdims=True)
    else:
        best = None
        for _ in range(config.init_restarts):
            c, lab = kmeans2(x, K, minit="++", seed=rng)
            dist = float(np.sum((x - c[lab]) ** 2))
            if best is None or dist < best[0]:
                best = (dist, c, lab)
        _, centers, labels = best
    emissions = []
    pooled = np.cov(x.T, ddof=0).reshape(x.shape[1], x.shape[1])
    for k in range(K):
        xk = x[labels == k]
        if len(xk) > x.shape[1] + 1:
            C = np.cov(xk.T, ddof=0).reshape(x.shape[1], x.shape[1])
        else:
            C = pooled
        C = C + 1e-6 * max(np.trace(pooled) / x.shape[1], 1e-6) * np.eye(x.shape[1])
        if config.family == "lognormal":
            emissions.append(LogNormalEmission(float(centers[k, 0]), float(np.sqrt(C[0, 0]))))
        else:
            emissions.append(GaussianEmission(centers[k], C))
    A_hat = np.ones(K) if config.tied else np.ones((K, K))
    return A_hat, emissions


# -- noise estimates ------------------------------------------------------------

def _empirical_noise(g, state):
    """D V D from the spread of per-window gradient terms."""
    n = len(g.window_dA_hat)
    if n < 2:
        return {}
    out = {"A": state.A_hat**2 * g.window_dA_hat.var(axis=0, ddof=1) / n}
    for k, e in enumerate(state.emissions):
        terms = np.array([np.atleast_1d(w[k][0]) for w in g.window_d_emissions])
        if isinstance(e, GaussianEmission):
            V = np.atleast_2d(np.cov(terms.T, ddof=1)) / n
            out[("mu", k)] = e.Sigma @ V @ e.Sigma
        else:
            ts = np.array([float(w[k][1]) for w in g.window_d_emissions]) * e.sigma - 1.0
            out[("ln", k)] = np.array([e.sigma**4 * terms[:, 0].var(ddof=1), 0.25 * ts.var(ddof=1)]) / n
    return out


# -- shared inner loops ---------------------------------------------------------

def _transition_steps(state, grad_fn, n_steps, eps, noise_correction, average):
    samples = []
    for _ in range(n_steps):
        g = grad_fn(state)
        Bh = _empirical_noise(g, state).get("A") if noise_correction else None
        state = sgld_step_transition(state, g.dA_hat, Bh, eps)
        samples.append(state.A_hat)
    if average:
        state = dataclasses.replace(state, A_hat=np.mean(samples, axis=0))
    return state


def _emission_steps(state, grad_fn, n_steps, eps, noise_correction, average):
    samples = []
    for _ in range(n_steps):
        g = grad_fn(state)
        noise = _empirical_noise(g, state) if noise_correction else {}
        new = []
        for k, (e, ge) in enumerate(zip(state.emissions, g.d_emissions)):
            if isinstance(e, GaussianEmission):
                ne, rej, _, wmin = sgld_step_gaussian(e, ge[0], ge[1], eps, state.rng, noise.get(("mu", k)))
                state.n_rejected += int(rej)
                state.min_noise_var = min(state.min_noise_var, wmin)
            else:
                ne, _, vmin = sgld_step_lognormal(e, float(ge[0]), float(ge[1]), eps, state.rng, noise.get(("ln", k)))
                state.min_noise_var = min(state.min_noise_var, vmin)
            new.append(ne)
        state.emissions = new
        samples.append(new)
    if average:
        state.emissions = _average_emissions(samples)
    return state


def _tag(exc, outer, block):
    if isinstance(exc, SGHMMError):
        exc.args = (f"outer iteration {outer}, {block} block: {exc.args[0] if exc.args else exc}",)
    return exc


def _run(y, config, grad_for, batch_for, monitor, state=None):
    y = as_array(y)
    rng = np.random.default_rng(config.seed)
    if state is None:
        A_hat, emissions = initialize(y, config, rng)
        state = SamplerState(A_hat, emissions, config.step_size, rng, tied=config.tied)
    trace = Trace()
    eps_em = config.emission_step_size or config.step_size
    elapsed = 0.0
    ctx = {"B": 0, "nu": 0}
    for it in range(config.n_iter):
        t0 = time.perf_counter()
        try:
            batch_for(state, it, ctx, trace)
            eps_a = config.step_at(it, config.step_size)
            eps_e = config.step_at(it, eps_em)
            if state.K > 1:
                state = _transition_steps(
                    state, lambda s: grad_for(s, ctx), config.n_steps, eps_a, config.noise_correction, config.average_inner
                )
            state = _emission_steps(
                state, lambda s: grad_for(s, ctx), config.n_steps, eps_e, config.noise_correction, config.average_inner
            )
        except SGHMMError as exc:
            raise _tag(exc, it, "update") from exc
        state.iteration = it + 1
        elapsed += time.perf_counter() - t0
        if (it + 1) % config.thin == 0 or it + 1 == config.n_iter:
            lp = np.nan
            if monitor is not None and config.eval_every and ((it + 1) % config.eval_every == 0 or it + 1 == config.n_iter):
                lp = monitor(state.params())
            trace.append(state.A, state.emissions, it + 1, 1e3 * elapsed, lp, ctx["B"], ctx["nu"])
        if config.progress_every and (it + 1) % config.progress_every == 0:
            print(f"iter {it + 1} wall {elapsed:.1f}s B={ctx['B']} nu={ctx['nu']}", file=sys.stderr, flush=True)
        if config.max_seconds is not None and elapsed > config.max_seconds:
            break
    trace.stats = {
        "n_rejected": state.n_rejected,
        "min_noise_var": state.min_noise_var,
        "n_iter_run": state.iteration,
        "wall_ms": 1e3 * elapsed,
    }
    return trace


def run_sg_mcmc(y, config: SamplerConfig, prior: Prior | None = None, monitor=None, state=None) -> Trace:
    """Minibatch SG-RLD with buffered subsequences (Alg. 2 outer loop).

    Each outer iteration optionally re-estimates B and nu, draws a minibatch,
    takes ``n_steps`` transition updates (averaged) and then ``n_steps``
    emission updates (averaged). ``monitor(params)`` is called every
    ``eval_every`` iterations and excluded from the wall clock.
    """
    y = as_array(y)
    T = len(y)
    prior = prior or config.prior or default_prior(config.family)
    mode, B_fixed = config.buffer_mode()
    use_buffers = mode != "none"

    def batch_for(state, it, ctx, trace):
        if mode == "adaptive" and it % config.reestimate_every == 0:
            params = state.params()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                est = estimate_lyapunov(
                    params, y, config.lyapunov_iter, int(state.rng.integers(2**31)), draw=config.lyapunov_draw
                )
            pol = buffer_length(est, config.delta, config.delta0, config.B_max)
            ctx["B"] = pol.B
            ctx["exponent"] = est.exponent
            ctx["std_error"] = est.std_error
            ctx["gap"] = None
        elif mode != "adaptive" and "gap" not in ctx:
            ctx["B"] = B_fixed
            ctx["gap"] = None
        B = ctx["B"]
        if config.sampler == "gapped":
            if ctx["gap"] is None or (it % config.reestimate_every == 0):
                gp = gap_policy(state.A, config.L, B, T, config.n_windows, config.fill)
                ctx["nu"] = gp.nu
                ctx["gap"] = gp
                trace.epochs.append(
                    {
                        "iteration": it,
                        "B": B,
                        "nu": gp.nu,
                        "nu_capped": gp.capped,
                        "exponent": ctx.get("exponent"),
                        "std_error": ctx.get("std_error"),
                    }
                )
            ctx["batch"] = sample_minibatch(T, config.L, B, ctx["nu"], config.n_windows, state.rng)
        else:
            if it % config.reestimate_every == 0:
                trace.epochs.append({"iteration": it, "B": B, "nu": 0, "exponent": ctx.get("exponent")})
            ctx["batch"] = uniform_minibatch(T, config.L, B, config.n_windows, state.rng)

    def grad_for(state, ctx):
        return stochastic_gradient(
            state.params(),
            prior,
            y,
            ctx["batch"],
            use_buffers=use_buffers,
            A_hat=state.A_hat,
            tied=state.tied,
            per_window=config.noise_correction,
        )

    return _run(y, config, grad_for, batch_for, monitor, state)


def run_batch_rld(y, config: SamplerConfig, prior: Prior | None = None, monitor=None, state=None) -> Trace:
    """The same updates driven by the exact full-data gradient."""
    y = as_array(y)
    prior = prior or config.prior or default_prior(config.family)
    cfg = dataclasses.replace(config, noise_correction=False)

    def batch_for(state, it, ctx, trace):
        return None

    def grad_for(state, ctx):
        return full_gradient(state.params(), prior, y, A_hat=state.A_hat, tied=state.tied)

    return _run(y, cfg, grad_for, batch_for, monitor, state)


def run_prior_only(state: SamplerState, prior: Prior, n_iter: int, emission_eps=None, thin=1):
    """Chain driven only by the prior potential (no data term); for stationarity checks.

    Returns arrays of A_hat samples and emission samples.
    """
    A_hats, ems = [], []
    eps_e = emission_eps or state.step_size

    class _G:
        pass

    def grad_a(s):
        g = _G()
        g.dA_hat = -prior.transition.grad(s.A_hat)
        return g

    def grad_fn(s):
        g = _G()
        d = []
        for e in s.emissions:
            pg = prior.emission.grad(e)
            d.append(tuple(-np.asarray(x, dtype=float) for x in pg))
        g.d_emissions = d
        return g

    for it in range(n_iter):
        state = _transition_steps(state, grad_a, 1, state.step_size, False, False)
        state = _emission_steps(state, grad_fn, 1, eps_e, False, False)
        if it % thin == 0:
            A_hats.append(state.A_hat.copy())
            ems.append(list(state.emissions))
    return np.array(A_hats), ems, state
