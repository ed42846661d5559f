import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sghmm.emissions import GaussianEmission, LogNormalEmission
from sghmm.evaluation import iid_baseline_fit
from sghmm.exceptions import NumericalError, ValidationError
from sghmm.hmm import HmmParams, simulate
from sghmm.priors import (
    GammaTransitionPrior,
    GaussianEmissionPrior,
    LogNormalEmissionPrior,
    Prior,
    flat_prior,
)
from sghmm.samplers import (
    NoiseGuardWarning,
    SamplerConfig,
    SamplerState,
    Trace,
    normalize_transition,
    run_batch_rld,
    run_prior_only,
    run_sg_mcmc,
    sgld_step_gaussian,
    sgld_step_lognormal,
    sgld_step_transition,
    transition_drift,
)


def _state(A_hat, emissions=None, eps=1e-2, seed=0):
    emissions = emissions or [GaussianEmission([0.0], [[1.0]]) for _ in range(np.shape(A_hat)[0])]
    return SamplerState(np.asarray(A_hat, dtype=float), emissions, eps, np.random.default_rng(seed))


def _batch_means_se(x, n_batches=20):
    m = np.array([b.mean() for b in np.array_split(np.asarray(x), n_batches)])
    return m.std(ddof=1) / np.sqrt(n_batches)


# -- transition block ---------------------------------------------------------

def test_normalize_transition_values():
    A = normalize_transition(np.array([[2.0, -1.0], [2.0, 3.0]]))
    np.testing.assert_allclose(A, [[0.5, 0.25], [0.5, 0.75]])
    with pytest.raises(NumericalError, match="column 1"):
        normalize_transition(np.array([[1.0, 0.0], [1.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(1, 6), c=st.floats(1e-3, 1e3))
def test_normalize_transition_scale_invariant(seed, K, c):
    r = np.random.default_rng(seed)
    A_hat = r.normal(size=(K, K))
    A = normalize_transition(A_hat)
    np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(A >= 0)
    np.testing.assert_allclose(normalize_transition(c * A_hat), A, atol=1e-12)


def test_zero_gradient_drift_and_mean():
    A_hat = np.array([[1.0, 2.0], [0.5, 3.0]])
    np.testing.assert_allclose(transition_drift(A_hat, np.zeros_like(A_hat), 0.01), 0.01)
    g = np.array([[1.0, -2.0], [0.5, 0.0]])
    np.testing.assert_allclose(transition_drift(A_hat, g, 0.02), 2 * transition_drift(A_hat, g, 0.01))
    # E[A_hat'] = A_hat + eps when the gradient vanishes; no reflection at this scale
    eps = 1e-3
    draws = np.array([sgld_step_transition(_state(A_hat, eps=eps, seed=s), np.zeros((2, 2))).A_hat for s in range(4000)])
    se = np.sqrt(2 * eps * A_hat / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - (A_hat + eps)) < 4 * se)
    np.testing.assert_allclose(draws.var(axis=0), 2 * eps * A_hat, rtol=0.1)


def test_single_state_transition_stays_one():
    st_ = _state(np.array([[0.7]]))
    for _ in range(20):
        st_ = sgld_step_transition(st_, np.array([[3.0]]))
    assert st_.A.tolist() == [[1.0]]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(1, 5), eps=st.floats(1e-5, 0.5))
def test_transition_step_keeps_simplex(seed, K, eps):
    r = np.random.default_rng(seed)
    st_ = _state(r.uniform(1e-6, 3, size=(K, K)), eps=eps, seed=seed)
    st_ = sgld_step_transition(st_, r.normal(0, 10, size=(K, K)))
    assert np.all(st_.A_hat > 0)
    np.testing.assert_allclose(st_.A.sum(axis=0), 1.0, atol=1e-12)
    assert st_.min_noise_var >= 0


def test_noise_guard_shrinks_step():
    st_ = _state(np.full((2, 2), 0.01), eps=1.0)
    B_hat = np.full((2, 2), 1.0)
    with pytest.warns(NoiseGuardWarning):
        new = sgld_step_transition(st_, np.zeros((2, 2)), B_hat)
    assert new.n_shrunk == 1 and new.min_noise_var >= 0


def test_transition_gradient_must_be_finite():
    with pytest.raises(NumericalError):
        sgld_step_transition(_state(np.ones((2, 2))), np.array([[np.nan, 0], [0, 0]]))


# -- emission blocks ----------------------------------------------------------

def test_gaussian_mean_noise_moments():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    e = GaussianEmission(np.zeros(2), S)
    rng = np.random.default_rng(1)
    eps = 1e-2
    mus = np.array([sgld_step_gaussian(e, np.zeros(2), np.zeros((2, 2)), eps, rng)[0].mu for _ in range(6000)])
    np.testing.assert_allclose(np.cov(mus.T), 2 * eps * S, rtol=0.08, atol=2e-3)
    assert np.all(np.abs(mus.mean(axis=0)) < 4 * np.sqrt(2 * eps * np.diag(S) / len(mus)))


def test_gaussian_sigma_drift_and_rejection():
    e = GaussianEmission([0.0], [[1.0]])
    rng = np.random.default_rng(2)
    eps = 1e-3
    draws = np.array([sgld_step_gaussian(e, [0.0], [[0.0]], eps, rng)[0].Sigma[0, 0] for _ in range(6000)])
    # divergence term (d + 1) Sigma and noise variance 2 eps Sigma^2 in one dimension
    assert abs(draws.mean() - (1 + 2 * eps)) < 4 * np.sqrt(2 * eps / len(draws))
    np.testing.assert_allclose(draws.var(), 2 * eps, rtol=0.1)
    # a huge positive gradient pushes Sigma negative: the proposal is rejected
    new, rejected, _, _ = sgld_step_gaussian(e, [0.0], [[1e6]], eps, rng)
    assert rejected and new.Sigma[0, 0] == 1.0


def test_lognormal_step_moments():
    e = LogNormalEmission(1.0, 0.5)
    rng = np.random.default_rng(3)
    eps = 1e-2
    out = [sgld_step_lognormal(e, 0.0, 0.0, eps, rng)[0] for _ in range(6000)]
    mu = np.array([o.mu for o in out])
    s = np.log([o.sigma for o in out])
    np.testing.assert_allclose(mu.var(), 2 * eps * 0.25, rtol=0.1)
    np.testing.assert_allclose(s.var(), eps, rtol=0.1)
    # zero data gradient still drifts s by +eps/2 (Jacobian of the log map)
    assert abs(s.mean() - (np.log(0.5) + eps / 2)) < 4 * np.sqrt(eps / len(s))


def test_lognormal_guard_and_errors():
    e = LogNormalEmission(0.0, 1.0)
    rng = np.random.default_rng(0)
    with pytest.warns(NoiseGuardWarning):
        _, eps, vmin = sgld_step_lognormal(e, 0.0, 0.0, 1.0, rng, B_hat=np.array([10.0, 10.0]))
    assert eps < 1.0 and vmin >= 0
    with pytest.raises(NumericalError):
        sgld_step_lognormal(e, np.inf, 0.0, 0.1, rng)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 3), eps=st.floats(1e-5, 0.3))
def test_gaussian_step_keeps_sigma_pd(seed, d, eps):
    r = np.random.default_rng(seed)
    M = r.normal(size=(d, d))
    e = GaussianEmission(r.normal(size=d), M @ M.T + 0.1 * np.eye(d))
    G = r.normal(0, 5, size=(d, d))
    new, _, _, wmin = sgld_step_gaussian(e, r.normal(size=d), G + G.T, eps, r)
    assert np.linalg.eigvalsh(new.Sigma).min() > 0
    assert wmin > 0


# -- prior-only stationarity ----------------------------------------------------

def test_prior_only_transition_and_lognormal():
    K = 5
    st_ = SamplerState(np.ones((K, K)), [LogNormalEmission(0.0, 1.0) for _ in range(K)], 0.02, np.random.default_rng(7))
    prior = Prior(GammaTransitionPrior(1.0), LogNormalEmissionPrior())
    A_hats, ems, _ = run_prior_only(st_, prior, 100_000, emission_eps=0.02, thin=10)
    A_hats = A_hats[len(A_hats) // 5 :]
    ems = ems[len(ems) // 5 :]
    # Gamma(1, 1): mean 1, variance 1
    assert A_hats.mean() == pytest.approx(1.0, rel=0.05)
    assert A_hats.var() == pytest.approx(1.0, rel=0.05)
    A = A_hats / A_hats.sum(axis=1, keepdims=True)
    # flat Dirichlet column entry: mean 1/K, variance (K - 1) / (K^2 (K + 1))
    assert A.mean() == pytest.approx(1 / K, rel=0.05)
    assert A.var() == pytest.approx((K - 1) / (K * K * (K + 1)), rel=0.05)
    mu = np.array([[e.mu for e in row] for row in ems]).ravel()
    sig = np.array([[e.sigma for e in row] for row in ems]).ravel()
    assert np.mean(mu**2) == pytest.approx(1.0, rel=0.05)
    # half-normal scale: E sigma = sqrt(2 / pi), E sigma^2 = 1
    assert sig.mean() == pytest.approx(np.sqrt(2 / np.pi), rel=0.05)
    assert np.mean(sig**2) == pytest.approx(1.0, rel=0.05)


def test_prior_only_gaussian_emission():
    nu, d = 12.0, 2
    psi = (nu - d - 1) * np.eye(d)
    prior = Prior(GammaTransitionPrior(1.0), GaussianEmissionPrior(0.0, 1.0, nu, psi))
    st_ = SamplerState(np.ones((1, 1)), [GaussianEmission(np.zeros(d), np.eye(d)) for _ in range(4)], 0.02, np.random.default_rng(5))
    _, ems, st_ = run_prior_only(st_, prior, 25_000, emission_eps=0.02, thin=5)
    ems = ems[len(ems) // 5 :]
    mus = np.array([[e.mu for e in row] for row in ems]).reshape(-1, d)
    sig = np.array([[e.Sigma for e in row] for row in ems]).reshape(-1, d, d)
    assert np.mean(mus**2) == pytest.approx(1.0, rel=0.05)
    # inverse-Wishart mean psi / (nu - d - 1) = I
    np.testing.assert_allclose(sig.mean(axis=0), np.eye(d), atol=0.05)
    iw_var = 2 / ((nu - d - 1) ** 2 * (nu - d - 3)) * (nu - d - 1) ** 2
    assert sig[:, 0, 0].var() == pytest.approx(iw_var, rel=0.1)
    assert st_.n_rejected < 50


# -- K = 1 posteriors -----------------------------------------------------------

def test_single_state_gaussian_posterior_mean():
    rng = np.random.default_rng(11)
    T = 200
    y = rng.normal(3.0, 2.0, size=(T, 1))
    # eps * T well below one keeps the discretization inflation of the spread near 1%
    cfg = SamplerConfig(K=1, step_size=1e-4, n_iter=10_000, seed=1)
    tr = run_batch_rld(y, cfg, prior=flat_prior())
    mu = tr.mu_array(0)[1000:, 0]
    post_mean, post_sd = y.mean(), y.std() / np.sqrt(T)
    se = _batch_means_se(mu)
    assert abs(mu.mean() - post_mean) < 3 * max(se, 1e-12)
    assert mu.std() == pytest.approx(post_sd, rel=0.2)
    sig = np.array([e[0].Sigma[0, 0] for e in tr.emissions])[1000:]
    assert sig.mean() == pytest.approx(y.var(), rel=0.05)


def test_single_state_lognormal_concentrates_near_mle():
    rng = np.random.default_rng(12)
    y = np.exp(rng.normal(1.0, 0.7, size=(2000, 1)))
    cfg = SamplerConfig(K=1, family="lognormal", L=5, n_windows=20, step_size=1e-3, n_iter=1500, buffer="none", seed=2)
    tr = run_sg_mcmc(y, cfg)
    mu = tr.mu_array(0)[500:, 0]
    sig = np.array([e[0].sigma for e in tr.emissions])[500:]
    ly = np.log(y)
    assert mu.mean() == pytest.approx(ly.mean(), abs=0.1)
    assert sig.mean() == pytest.approx(ly.std(), abs=0.1)


# -- outer loop mechanics -------------------------------------------------------

@pytest.fixture(scope="module")
def two_state_data():
    p = HmmParams(
        np.array([[0.9, 0.2], [0.1, 0.8]]),
        [GaussianEmission([-2.0], [[1.0]]), GaussianEmission([2.0], [[1.0]])],
        np.array([0.5, 0.5]),
    )
    y, _ = simulate(p, 1000, 3)
    return y, p


def test_one_iteration_and_empty_runs(two_state_data):
    y, _ = two_state_data
    tr = run_sg_mcmc(y, SamplerConfig(K=2, n_iter=1, n_steps=1, seed=0))
    assert len(tr) == 1 and tr.iteration == [1]
    np.testing.assert_allclose(tr.A[0].sum(axis=0), 1.0, atol=1e-12)
    empty = run_batch_rld(y, SamplerConfig(K=2, n_iter=0))
    assert len(empty) == 0 and empty.stats["n_iter_run"] == 0


def test_runs_are_deterministic(two_state_data):
    y, _ = two_state_data
    cfg = SamplerConfig(K=2, n_iter=30, seed=4, reestimate_every=10, lyapunov_iter=200)
    a, b = run_sg_mcmc(y, cfg), run_sg_mcmc(y, cfg)
    np.testing.assert_array_equal(a.A_array(), b.A_array())
    assert [e["B"] for e in a.epochs] == [e["B"] for e in b.epochs]
    assert all(e["nu"] >= 1 for e in a.epochs)


def test_iid_and_hmm_coincide_for_one_state(two_state_data):
    y, _ = two_state_data
    cfg = SamplerConfig(K=1, n_iter=20, seed=9)
    hmm = run_sg_mcmc(y, dataclasses.replace(cfg, buffer="none"))
    iid = iid_baseline_fit(y, 1, cfg)
    for a, b in zip(hmm.emissions, iid.emissions):
        np.testing.assert_allclose(a[0].mu, b[0].mu)
        np.testing.assert_allclose(a[0].Sigma, b[0].Sigma)


def test_tied_fit_has_identical_columns(two_state_data):
    y, _ = two_state_data
    tr = iid_baseline_fit(y, 2, SamplerConfig(K=2, n_iter=20, seed=1))
    A = tr.A[-1]
    np.testing.assert_allclose(A[:, 0], A[:, 1])


def test_batch_recovers_two_state_chain(two_state_data):
    y, truth = two_state_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tr = run_batch_rld(y, SamplerConfig(K=2, step_size=2e-4, n_iter=800, seed=0))
    A = tr.mean_A(0.5)
    order = np.argsort([e.mu[0] for e in tr.params().emissions])
    A = A[np.ix_(order, order)]
    assert np.max(np.abs(A - truth.A)) < 0.05
    sg = run_sg_mcmc(y, SamplerConfig(K=2, step_size=2e-4, n_iter=1500, seed=0, buffer="fixed:4", n_windows=20))
    o = np.argsort([e.mu[0] for e in sg.params().emissions])
    assert np.max(np.abs(sg.mean_A(0.5)[np.ix_(o, o)] - A)) < 0.08


def test_time_budget_stops_run(two_state_data):
    y, _ = two_state_data
    tr = run_sg_mcmc(y, SamplerConfig(K=2, n_iter=10**6, max_seconds=0.3, seed=0))
    assert 0 < tr.stats["n_iter_run"] < 10**6
    assert np.all(np.diff(tr.wall_ms) >= 0)


@pytest.mark.parametrize(
    "kw",
    [
        {"K": 0},
        {"family": "poisson"},
        {"step_size": 0.0},
        {"buffer": "sometimes"},
        {"buffer": "fixed:-1"},
        {"sampler": "stratified"},
        {"delta": 3.0},
        {"n_steps": 0},
        {"decay": (1.0,)},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        SamplerConfig(**kw)


def test_buffer_modes():
    assert SamplerConfig().buffer_mode() == ("adaptive", None)
    assert SamplerConfig(buffer="none").buffer_mode() == ("none", 0)
    assert SamplerConfig(buffer="fixed:7").buffer_mode() == ("fixed", 7)
    cfg = SamplerConfig(decay=(10.0, 0.5))
    assert cfg.step_at(30, 1.0) == pytest.approx(0.5)


def test_trace_rejects_non_stochastic_sample():
    tr = Trace()
    with pytest.raises(NumericalError):
        tr.append(np.array([[0.5, 0.5], [0.6, 0.5]]), [], 1, 0.0)


def test_lognormal_needs_positive_data():
    with pytest.raises(ValidationError):
        run_sg_mcmc(np.array([[1.0], [-1.0], [2.0]] * 10), SamplerConfig(K=1, family="lognormal", n_iter=1))


def test_sampled_sigmas_pd_and_columns_stochastic(two_state_data):
    y, _ = two_state_data
    tr = run_sg_mcmc(y, SamplerConfig(K=3, n_iter=200, seed=5, step_size=1e-3, reestimate_every=50, lyapunov_iter=200))
    for A, ems in zip(tr.A, tr.emissions):
        np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-10)
        assert all(np.linalg.eigvalsh(e.Sigma).min() > 0 for e in ems)
    assert tr.stats["min_noise_var"] >= 0
