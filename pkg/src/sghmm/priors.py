"""Prior log-densities and their gradients, one object per parameter block.

Priors are specified on the sampled coordinates: the expanded-mean matrix
``A_hat`` for transitions and the exposed emission parameters for emissions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emissions import GaussianEmission, LogNormalEmission


@dataclass(frozen=True)
class GammaTransitionPrior:
    """Independent Gamma(alpha, 1) on every entry of ``A_hat``.

    The induced prior on each column of ``A = |A_hat| / sum |A_hat|`` is
    Dirichlet(alpha, ..., alpha); ``alpha = 1`` is the flat prior on the simplex.
    """

    alpha: float = 1.0

    def log_density(self, A_hat):
        a = np.abs(A_hat)
        return float(np.sum((self.alpha - 1.0) * np.log(a) - a))

    def grad(self, A_hat):
        a = np.abs(A_hat)
        return np.sign(A_hat) * ((self.alpha - 1.0) / a - 1.0)


@dataclass(frozen=True)
class FlatTransitionPrior:
    """Improper flat density on ``A_hat``; the column scale is then unconstrained."""

    def log_density(self, A_hat):
        return 0.0

    def grad(self, A_hat):
        return np.zeros_like(A_hat, dtype=float)


@dataclass(frozen=True)
class FlatEmissionPrior:
    def log_density(self, emission):
        return 0.0

    def grad(self, emission):
        if isinstance(emission, LogNormalEmission):
            return 0.0, 0.0
        return np.zeros(emission.d), np.zeros((emission.d, emission.d))


@dataclass(frozen=True)
class GaussianEmissionPrior:
    """mu ~ N(mean_loc, mean_scale^2 I) and Sigma ~ InvWishart(iw_df, iw_scale).

    Either part may be left as ``None`` for a flat prior on that parameter.
    """

    mean_loc: float | np.ndarray | None = None
    mean_scale: float | None = None
    iw_df: float | None = None
    iw_scale: np.ndarray | float | None = None

    def _psi(self, d):
        psi = np.asarray(self.iw_scale, dtype=float)
        return psi * np.eye(d) if psi.ndim == 0 else psi

    def log_density(self, e: GaussianEmission):
        out = 0.0
        if self.mean_scale is not None:
            r = e.mu - (0.0 if self.mean_loc is None else self.mean_loc)
            out += -0.5 * float(r @ r) / self.mean_scale**2
        if self.iw_df is not None:
            d = e.d
            _, logdet = np.linalg.slogdet(e.Sigma)
            out += -0.5 * (self.iw_df + d + 1) * logdet - 0.5 * np.trace(self._psi(d) @ np.linalg.inv(e.Sigma))
        return float(out)

    def grad(self, e: GaussianEmission):
        d = e.d
        g_mu = np.zeros(d)
        g_Sigma = np.zeros((d, d))
        if self.mean_scale is not None:
            g_mu = -(e.mu - (0.0 if self.mean_loc is None else self.mean_loc)) / self.mean_scale**2
        if self.iw_df is not None:
            Si = np.linalg.inv(e.Sigma)
            g_Sigma = -0.5 * (self.iw_df + d + 1) * Si + 0.5 * Si @ self._psi(d) @ Si
            g_Sigma = 0.5 * (g_Sigma + g_Sigma.T)
        return g_mu, g_Sigma


@dataclass(frozen=True)
class LogNormalEmissionPrior:
    """Independent normal priors on the location and (positive) scale."""

    mu_loc: float = 0.0
    mu_scale: float = 1.0
    sigma_loc: float = 0.0
    sigma_scale: float = 1.0

    def log_density(self, e: LogNormalEmission):
        return float(
            -0.5 * ((e.mu - self.mu_loc) / self.mu_scale) ** 2
            - 0.5 * ((e.sigma - self.sigma_loc) / self.sigma_scale) ** 2
        )

    def grad(self, e: LogNormalEmission):
        return (
            -(e.mu - self.mu_loc) / self.mu_scale**2,
            -(e.sigma - self.sigma_loc) / self.sigma_scale**2,
        )


@dataclass(frozen=True)
class Prior:
    transition: object = field(default_factory=GammaTransitionPrior)
    emission: object = field(default_factory=FlatEmissionPrior)

    def log_density(self, A_hat, emissions):
        return self.transition.log_density(A_hat) + sum(self.emission.log_density(e) for e in emissions)


def flat_prior():
    """No information about either block."""
    return Prior(FlatTransitionPrior(), FlatEmissionPrior())


def default_prior(family):
    """Flat on the simplex for transitions; N(0, 1) priors for log-normal emissions."""
    if family == "lognormal":
        return Prior(GammaTransitionPrior(1.0), LogNormalEmissionPrior())
    return Prior(GammaTransitionPrior(1.0), FlatEmissionPrior())
