"""Emission families: log-density, score, natural metric and sampling.

Every family exposes the same small interface so the HMM code never needs to
know which one it is handling:

    log_density(y)   -> (...,) log p(y | phi), -inf outside the support
    grad(y)          -> tuple of per-parameter partials, leading axes of y kept
    metric()         -> inverse Fisher information, used as the SG-RLD metric
    sample(rng, n)   -> (n, d) draws
    to_dict()        -> JSON-ready record with a "family" discriminator
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .exceptions import NumericalError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)


def _as_obs(y, d):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y.reshape(1)
    if y.shape[-1] != d:
        if d == 1:
            y = y[..., None]
        else:
            raise ValidationError(f"observation dimension {y.shape[-1]} != {d}")
    return y


@dataclass(frozen=True, eq=False)
class GaussianEmission:
    mu: np.ndarray
    Sigma: np.ndarray
    family: str = field(default="gaussian", init=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.array(self.mu, dtype=float))
        Sigma = np.atleast_2d(np.array(self.Sigma, dtype=float))
        mu.setflags(write=False)
        Sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)
        self.validate()

    @property
    def d(self):
        return self.mu.shape[0]

    def validate(self):
        d = self.mu.shape[0]
        if self.Sigma.shape != (d, d):
            raise ValidationError(f"Sigma shape {self.Sigma.shape} does not match mean dimension {d}")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.Sigma))):
            raise ValidationError("Gaussian emission parameters must be finite")
        if np.max(np.abs(self.Sigma - self.Sigma.T)) > 1e-12 * max(1.0, np.max(np.abs(self.Sigma))):
            raise ValidationError("Sigma is not symmetric")
        try:
            c = np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            raise ValidationError("Sigma is not positive definite") from None
        if not np.all(np.diag(c) > 0):
            raise ValidationError("Sigma is not positive definite")
        # reuse the factor for densities
        self.__dict__["_chol"] = c

    @cached_property
    def _chol(self):
        try:
            return linalg.cholesky(self.Sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("singular covariance in Gaussian emission") from exc

    @cached_property
    def _precision(self):
        c = self._chol
        inv_c = linalg.solve_triangular(c, np.eye(self.d), lower=True)
        return inv_c.T @ inv_c

    def log_density(self, y):
        y = _as_obs(y, self.d)
        diff = y - self.mu
        z = linalg.solve_triangular(self._chol, diff.reshape(-1, self.d).T, lower=True, check_finite=False)
        maha = np.sum(z * z, axis=0).reshape(diff.shape[:-1])
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * (maha + logdet + self.d * LOG_2PI)

    def in_support(self, y):
        y = _as_obs(y, self.d)
        return np.all(np.isfinite(y), axis=-1)

    def grad(self, y):
        """Partials of log p(y) in (mu, Sigma).

        ``d/dmu = Sigma^-1 (y - mu)`` and
        ``d/dSigma = 1/2 Sigma^-1 ((y - mu)(y - mu)^T - Sigma) Sigma^-1``,
        the symmetric matrix gradient (d log p = tr(G dSigma)).
        """
        y = _as_obs(y, self.d)
        P = self._precision
        r = (y - self.mu) @ P
        g_mu = r
        g_Sigma = 0.5 * (r[..., :, None] * r[..., None, :] - P)
        return g_mu, g_Sigma

    def metric(self):
        """(D_mu, D_Sigma) with D_mu = Sigma and D_Sigma = Sigma (x) Sigma."""
        return self.Sigma.copy(), np.kron(self.Sigma, self.Sigma)

    def sample(self, rng, n):
        z = rng.standard_normal((n, self.d))
        return self.mu + z @ self._chol.T

    def to_dict(self):
        return {"family": self.family, "mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}


@dataclass(frozen=True, eq=False)
class LogNormalEmission:
    mu: float
    sigma: float
    family: str = field(default="lognormal", init=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        self.validate()

    d = 1

    def validate(self):
        if not np.isfinite(self.mu):
            raise ValidationError("log-normal location must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"log-normal scale must be > 0, got {self.sigma}")

    @property
    def log_sigma(self):
        return np.log(self.sigma)

    def in_support(self, y):
        y = _as_obs(y, 1)[..., 0]
        return np.isfinite(y) & (y > 0)

    def log_density(self, y):
        y = _as_obs(y, 1)[..., 0]
        ok = self.in_support(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            ly = np.log(np.where(ok, y, 1.0))
            out = -ly - np.log(self.sigma) - 0.5 * LOG_2PI - (ly - self.mu) ** 2 / (2.0 * self.sigma**2)
        return np.where(ok, out, -np.inf)

    def grad(self, y):
        """Partials in the exposed (mu, sigma) coordinates."""
        y = _as_obs(y, 1)[..., 0]
        if not np.all(self.in_support(y)):
            raise ValidationError("log-normal score requested outside the support y > 0")
        r = np.log(y) - self.mu
        s2 = self.sigma**2
        return r / s2, -1.0 / self.sigma + r * r / (s2 * self.sigma)

    def metric(self):
        """Inverse Fisher information in (mu, sigma): diag(sigma^2, sigma^2 / 2)."""
        s2 = self.sigma**2
        return np.diag([s2, s2 / 2.0])

    def sample(self, rng, n):
        return np.exp(self.mu + self.sigma * rng.standard_normal((n, 1)))

    def to_dict(self):
        return {"family": self.family, "mu": self.mu, "sigma": self.sigma}


FAMILIES = {"gaussian": GaussianEmission, "lognormal": LogNormalEmission}


def emission_from_dict(record):
    family = record.get("family")
    if family == "gaussian":
        return GaussianEmission(record["mu"], record["Sigma"])
    if family == "lognormal":
        return LogNormalEmission(record["mu"], record["sigma"])
    raise ValidationError(f"unknown emission family {family!r}")


def log_density(emission, y):
    """Scalar log-density; -inf for observations outside the support."""
    return float(np.asarray(emission.log_density(y)).reshape(-1)[0])


def grad_log_density(emission, y):
    return emission.grad(y)


def natural_metric(emission):
    return emission.metric()


def emission_log_densities(emissions, y):
    """(T, K) matrix of log p(y_t | state k)."""
    return np.stack([np.asarray(e.log_density(y), dtype=float).reshape(len(y)) for e in emissions], axis=1)
