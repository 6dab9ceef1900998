"""Bundled benchmark models and their closed-form oracles.

Three models cover the estimator test surface: a conjugate linear-Gaussian
model with exact EIG/posterior (the oracle model), a two-source location
finding model whose EIG surface is multimodal, and a binary probit
threshold model exercising the finite-outcome paths. Each model implements
the batched contract from :mod:`eiglab.core` plus, where training needs
gradients, tape-building counterparts of its likelihood and sampler.
"""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import log_ndtr, ndtr

from . import autodiff as ad
from . import kernels
from .core import History, ModelSpec, OutcomeKind
from .errors import CapabilityError, ConfigError, InvalidDesignError
from .rng import RngStream

__all__ = [
    "BallConstraint",
    "BoxConstraint",
    "LinearGaussianModel",
    "LocationFindingModel",
    "ProbitThresholdModel",
    "enumerate_outcomes",
    "build_model",
    "model_catalog",
    "MODEL_IDS",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def binary_entropy(p) -> np.ndarray:
    """Entropy in nats of a Bernoulli(p), elementwise, 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(q > 0, q * np.log(q), 0.0)
    return h


# ---------------------------------------------------------------------------
# design constraints
# ---------------------------------------------------------------------------


class BallConstraint:
    """Euclidean ball of radius rho."""

    kind = "ball"

    def __init__(self, rho: float, dim: int):
        if rho <= 0:
            raise ConfigError(f"ball radius must be positive, got {rho}")
        self.rho = float(rho)
        self.dim = int(dim)

    def contains(self, x: np.ndarray, rtol: float = 1e-9) -> bool:
        return float(np.linalg.norm(x)) <= self.rho * (1.0 + rtol)

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        norm = float(np.linalg.norm(x))
        if norm <= self.rho:
            return x.copy()
        return x * (self.rho / norm)

    def sample_point(self, rng: RngStream) -> np.ndarray:
        gen = rng.generator
        z = gen.standard_normal(self.dim)
        r = gen.random() ** (1.0 / self.dim)
        return self.rho * r * z / np.linalg.norm(z)

    def grid(self, points_per_dim: int) -> np.ndarray:
        axes = [np.linspace(-self.rho, self.rho, points_per_dim)] * self.dim
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        keep = np.linalg.norm(mesh, axis=1) <= self.rho * (1 + 1e-12)
        return mesh[keep]

    def squash(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        r = np.sqrt(np.sum(u * u, axis=1) + 1e-12)
        return u * (self.rho * np.tanh(r) / r)[:, None]

    def squash_t(self, u: ad.Tensor) -> ad.Tensor:
        r = ad.sqrt(ad.add(ad.tsum(ad.mul(u, u), axis=1), 1e-12))
        scale = ad.mul(ad.exp(ad.sub(ad.log(ad.tanh(r)), ad.log(r))), self.rho)
        return ad.mul(u, ad.reshape(scale, (-1, 1)))


class BoxConstraint:
    """Axis-aligned box [lo, hi] per dimension."""

    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64).reshape(-1)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(-1)
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ConfigError(f"invalid box bounds lo={lo} hi={hi}")
        self.dim = self.lo.size
        self._center = 0.5 * (self.lo + self.hi)
        self._half = 0.5 * (self.hi - self.lo)

    def contains(self, x: np.ndarray, rtol: float = 1e-9) -> bool:
        pad = rtol * (self.hi - self.lo)
        return bool(np.all(x >= self.lo - pad) and np.all(x <= self.hi + pad))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)

    def sample_point(self, rng: RngStream) -> np.ndarray:
        return self.lo + rng.generator.random(self.dim) * (self.hi - self.lo)

    def grid(self, points_per_dim: int) -> np.ndarray:
        axes = [np.linspace(self.lo[i], self.hi[i], points_per_dim) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def squash(self, u: np.ndarray) -> np.ndarray:
        return self._center + self._half * np.tanh(np.atleast_2d(u))

    def squash_t(self, u: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.mul(ad.tanh(u), self._half), self._center)


# ---------------------------------------------------------------------------
# Gaussian tape helper
# ---------------------------------------------------------------------------


def _normal_logpdf_t(y, mu, sigma: float) -> ad.Tensor:
    z = ad.mul(ad.sub(y, mu), 1.0 / sigma)
    const = -_HALF_LOG_2PI - math.log(sigma)
    return ad.add(ad.mul(ad.mul(z, z), -0.5), const)


# ---------------------------------------------------------------------------
# linear-Gaussian model
# ---------------------------------------------------------------------------


class LinearGaussianModel(ModelSpec):
    """Gaussian prior, scalar observation y = xi . theta + noise.

    The conjugate structure gives every quantity of interest in closed
    form, which makes this the oracle model for the whole test suite.
    """

    model_id = "lg"
    has_closed_form_eig = True
    has_closed_form_posterior = True

    def __init__(self, mu0, Sigma0, sigma2: float, rho: float):
        self.mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
        d = self.mu0.size
        self.Sigma0 = np.asarray(Sigma0, dtype=np.float64).reshape(d, d)
        if not np.allclose(self.Sigma0, self.Sigma0.T, atol=1e-12):
            raise ConfigError("prior covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.Sigma0)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("prior covariance must be positive-definite") from exc
        if sigma2 <= 0:
            raise ConfigError(f"noise variance must be positive, got {sigma2}")
        self.sigma2 = float(sigma2)
        self.sigma = math.sqrt(self.sigma2)
        self.theta_dim = d
        self.design_dim = d
        self.outcome_kind = OutcomeKind.continuous(1)
        self.constraint = BallConstraint(rho, d)
        self._prior_logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    # -- contract ------------------------------------------------------------

    def validate_design(self, xi: np.ndarray) -> None:
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        if xi.size != self.design_dim or not np.all(np.isfinite(xi)):
            raise InvalidDesignError(f"design must be a finite vector of dim {self.design_dim}")
        if not self.constraint.contains(xi):
            raise InvalidDesignError(
                f"design norm {np.linalg.norm(xi):.6g} exceeds radius {self.constraint.rho}"
            )

    def sample_prior_n(self, n: int, rng: RngStream) -> np.ndarray:
        z = rng.generator.standard_normal((n, self.theta_dim))
        return self.mu0 + z @ self._chol.T

    def log_prior_n(self, thetas: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(thetas) - self.mu0
        sol = np.linalg.solve(self._chol, diff.T)
        quad = np.sum(sol * sol, axis=0)
        return -self.theta_dim * _HALF_LOG_2PI - 0.5 * self._prior_logdet - 0.5 * quad

    def sample_outcomes_n(self, thetas: np.ndarray, xi: np.ndarray, rng: RngStream) -> np.ndarray:
        mean = np.atleast_2d(thetas) @ np.asarray(xi, dtype=np.float64)
        return mean + self.sigma * rng.generator.standard_normal(mean.shape[0])

    def sample_outcomes_rowwise(self, thetas: np.ndarray, xis: np.ndarray, rng: RngStream) -> np.ndarray:
        xis = np.asarray(xis, dtype=np.float64)
        if xis.ndim == 1:
            return self.sample_outcomes_n(thetas, xis, rng)
        mean = np.sum(np.atleast_2d(thetas) * xis, axis=1)
        return mean + self.sigma * rng.generator.standard_normal(mean.shape[0])

    def loglik_pairs(self, ys, thetas, xi) -> np.ndarray:
        mu = np.atleast_2d(thetas) @ np.asarray(xi, dtype=np.float64)
        return kernels.normal_logpdf_mat(ys, mu, self.sigma)

    def loglik_rowwise(self, ys, thetas, xi) -> np.ndarray:
        mu = thetas @ np.asarray(xi, dtype=np.float64)
        return kernels.normal_logpdf_mat(ys, mu, self.sigma)

    def loglik_cross(self, ys, thetas, xis) -> np.ndarray:
        mu = np.atleast_2d(xis) @ np.atleast_2d(thetas).T
        return kernels.normal_logpdf_mat(ys, mu, self.sigma)

    def loglik_elementwise(self, ys, thetas, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim == 1:
            mu = np.atleast_2d(thetas) @ xi
        else:
            mu = np.sum(np.atleast_2d(thetas) * xi, axis=1)
        return kernels.normal_logpdf_vec(ys, mu, self.sigma)

    # -- closed forms ----------------------------------------------------------

    def closed_form_eig(self, xi) -> float:
        """Reduction in posterior entropy from one observation at ``xi``."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        quad = float(xi @ self.Sigma0 @ xi)
        return 0.5 * math.log1p(quad / self.sigma2)

    def posterior(self, history: History) -> Tuple[np.ndarray, np.ndarray]:
        """Exact conjugate posterior (mean, covariance) after a history."""
        precision = np.linalg.inv(self.Sigma0)
        shift = precision @ self.mu0
        for design, outcome in history:
            xi = design.values
            precision = precision + np.outer(xi, xi) / self.sigma2
            shift = shift + xi * outcome.raw() / self.sigma2
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        return cov @ shift, cov

    def total_eig(self, designs: np.ndarray) -> float:
        """Joint EIG of a whole design sequence, rows of ``designs``."""
        designs = np.atleast_2d(designs)
        info = designs.T @ designs / self.sigma2
        inner = self._chol.T @ info @ self._chol
        sign, logdet = np.linalg.slogdet(np.eye(self.theta_dim) + inner)
        return 0.5 * float(logdet)

    def fim(self, xi) -> np.ndarray:
        """Fisher information of one observation; design-only for this model."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        return np.outer(xi, xi) / self.sigma2

    def d_optimality(self, xi) -> float:
        """log det of prior precision plus single-observation information."""
        total = np.linalg.inv(self.Sigma0) + self.fim(xi)
        sign, logdet = np.linalg.slogdet(total)
        return float(logdet)

    def marginal_params(self, xi) -> Tuple[float, float]:
        """Mean and variance of the outcome marginal at ``xi``."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        return float(xi @ self.mu0), float(xi @ self.Sigma0 @ xi + self.sigma2)

    def posterior_after_one(self, xi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Posterior covariance and the affine map y -> posterior mean."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        precision = np.linalg.inv(self.Sigma0) + np.outer(xi, xi) / self.sigma2
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        base = cov @ np.linalg.solve(self.Sigma0, self.mu0)
        gain = cov @ xi / self.sigma2
        return cov, base, gain

    # -- tape facets -----------------------------------------------------------

    differentiable = True

    def log_prior_t(self, thetas: ad.Tensor) -> ad.Tensor:
        diff = ad.sub(thetas, self.mu0)
        z = ad.matmul(diff, ad.Tensor(np.linalg.inv(self._chol).T))
        quad = ad.tsum(ad.mul(z, z), axis=1)
        const = -self.theta_dim * _HALF_LOG_2PI - 0.5 * self._prior_logdet
        return ad.add(ad.mul(quad, -0.5), const)

    def outcome_t(self, theta: np.ndarray, xi: ad.Tensor, eps: np.ndarray) -> ad.Tensor:
        """Reparameterized outcome: xi . theta + sigma * eps."""
        if xi.data.ndim == 1:
            mean = ad.matmul(ad.Tensor(theta), xi)
        else:
            mean = ad.tsum(ad.mul(xi, theta), axis=1)
        return ad.add(mean, self.sigma * eps)

    def ll_t(self, y, theta, xi) -> ad.Tensor:
        xi_t = xi if isinstance(xi, ad.Tensor) else ad.Tensor(xi)
        if xi_t.data.ndim == 1:
            mean = ad.matmul(theta if isinstance(theta, ad.Tensor) else ad.Tensor(theta), xi_t)
        else:
            mean = ad.tsum(ad.mul(xi_t, theta), axis=1)
        return _normal_logpdf_t(y, mean, self.sigma)

    def ll_cross_t(self, y: ad.Tensor, thetas: np.ndarray, xi: ad.Tensor) -> ad.Tensor:
        """(B, L) log-likelihood of each y_b under fixed contrast rows."""
        if xi.data.ndim == 1:
            mu = ad.reshape(ad.matmul(ad.Tensor(np.atleast_2d(thetas)), xi), (1, -1))
        else:
            mu = ad.matmul(xi, ad.Tensor(np.atleast_2d(thetas).T))
        y_col = ad.reshape(y, (-1, 1))
        return _normal_logpdf_t(y_col, mu, self.sigma)


class ExactLgPosteriorProposal:
    """The exact conjugate posterior of a linear-Gaussian model as a proposal.

    With this proposal every importance weight collapses to the outcome
    marginal, which is what makes it the equality oracle for the
    proposal-driven estimators.
    """

    def __init__(self, model: LinearGaussianModel, xi):
        self.model = model
        self.xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        cov, base, gain = model.posterior_after_one(self.xi)
        self._chol = np.linalg.cholesky(cov)
        self._base = base
        self._gain = gain
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def sample_batch(self, ys: np.ndarray, xi, m: int, rng: RngStream) -> np.ndarray:
        n = ys.shape[0]
        z = rng.generator.standard_normal((n, m, self.model.theta_dim))
        means = self._base + ys[:, None] * self._gain
        return means[:, None, :] + z @ self._chol.T

    def logpdf_batch(self, thetas: np.ndarray, ys: np.ndarray, xi) -> np.ndarray:
        means = self._base + ys[:, None] * self._gain
        diff = thetas - means[:, None, :]
        sol = np.linalg.solve(self._chol, diff.reshape(-1, diff.shape[-1]).T)
        quad = np.sum(sol * sol, axis=0).reshape(diff.shape[:2])
        d = self.model.theta_dim
        return -d * _HALF_LOG_2PI - 0.5 * self._logdet - 0.5 * quad


# ---------------------------------------------------------------------------
# location finding model
# ---------------------------------------------------------------------------


class LocationFindingModel(ModelSpec):
    """Hidden acoustic-style sources in the plane, probed pointwise.

    Each of K sources sits at a standard-normal location; a probe at xi
    measures total signal strength b + sum_k alpha_k / (m + |theta_k - xi|^2)
    observed with log-normal noise. The EIG surface over the probe box is
    multimodal, which is what policy-versus-random comparisons need.
    """

    model_id = "location"
    has_closed_form_eig = False
    has_closed_form_posterior = False

    def __init__(self, k_sources: int = 2, alpha=1.0, background: float = 0.1,
                 damping: float = 1e-4, sigma_log: float = 0.5, box=(-4.0, 4.0)):
        if k_sources < 1:
            raise ConfigError("need at least one source")
        self.k_sources = int(k_sources)
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (self.k_sources,)).copy()
        if np.any(self.alpha <= 0) or background <= 0 or damping <= 0 or sigma_log <= 0:
            raise ConfigError("alpha, background, damping and sigma_log must be positive")
        self.background = float(background)
        self.damping = float(damping)
        self.sigma_log = float(sigma_log)
        lo, hi = float(box[0]), float(box[1])
        self.theta_dim = 2 * self.k_sources
        self.design_dim = 2
        self.outcome_kind = OutcomeKind.continuous(1)
        self.constraint = BoxConstraint([lo, lo], [hi, hi])

    def validate_design(self, xi: np.ndarray) -> None:
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        if xi.size != 2 or not np.all(np.isfinite(xi)):
            raise InvalidDesignError("design must be a finite point in the plane")
        if not self.constraint.contains(xi):
            raise InvalidDesignError(f"probe point {xi} outside the design box")

    def total_intensity(self, thetas: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Strictly positive mean signal for each latent row."""
        thetas = np.atleast_2d(thetas)
        pts = thetas.reshape(thetas.shape[0], self.k_sources, 2)
        d2 = np.sum((pts - np.asarray(xi, dtype=np.float64)) ** 2, axis=2)
        return self.background + np.sum(self.alpha / (self.damping + d2), axis=1)

    def sample_prior_n(self, n: int, rng: RngStream) -> np.ndarray:
        return rng.generator.standard_normal((n, self.theta_dim))

    def log_prior_n(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        return -self.theta_dim * _HALF_LOG_2PI - 0.5 * np.sum(thetas * thetas, axis=1)

    def sample_outcomes_n(self, thetas, xi, rng: RngStream) -> np.ndarray:
        mu = self.total_intensity(thetas, xi)
        z = rng.generator.standard_normal(mu.shape[0])
        return np.exp(np.log(mu) + self.sigma_log * z)

    def sample_outcomes_rowwise(self, thetas, xis, rng: RngStream) -> np.ndarray:
        xis = np.asarray(xis, dtype=np.float64)
        if xis.ndim == 1:
            return self.sample_outcomes_n(thetas, xis, rng)
        pts = np.atleast_2d(thetas).reshape(-1, self.k_sources, 2)
        d2 = np.sum((pts - xis[:, None, :]) ** 2, axis=2)
        mu = self.background + np.sum(self.alpha / (self.damping + d2), axis=1)
        z = rng.generator.standard_normal(mu.shape[0])
        return np.exp(np.log(mu) + self.sigma_log * z)

    def loglik_pairs(self, ys, thetas, xi) -> np.ndarray:
        logmu = np.log(self.total_intensity(thetas, xi))
        with np.errstate(divide="ignore", invalid="ignore"):
            logy = np.log(np.asarray(ys, dtype=np.float64))
            return kernels.normal_logpdf_mat(logy, logmu, self.sigma_log) - logy[:, None]

    def loglik_rowwise(self, ys, thetas, xi) -> np.ndarray:
        n, m = thetas.shape[0], thetas.shape[1]
        logmu = np.log(self.total_intensity(thetas.reshape(n * m, -1), xi)).reshape(n, m)
        logy = np.log(np.asarray(ys, dtype=np.float64))
        return kernels.normal_logpdf_mat(logy, logmu, self.sigma_log) - logy[:, None]

    def loglik_cross(self, ys, thetas, xis, chunk: int = 512) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64)
        thetas = np.atleast_2d(thetas)
        xis = np.atleast_2d(xis)
        pts = thetas.reshape(thetas.shape[0], self.k_sources, 2)
        logy = np.log(ys)
        out = np.empty((ys.shape[0], thetas.shape[0]))
        for start in range(0, ys.shape[0], chunk):
            stop = min(start + chunk, ys.shape[0])
            d2 = np.sum((pts[None, :, :, :] - xis[start:stop, None, None, :]) ** 2, axis=3)
            mu = self.background + np.sum(self.alpha / (self.damping + d2), axis=2)
            out[start:stop] = (
                kernels.normal_logpdf_mat(logy[start:stop], np.log(mu), self.sigma_log)
                - logy[start:stop, None]
            )
        return out

    def loglik_elementwise(self, ys, thetas, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim == 1:
            mu = self.total_intensity(thetas, xi)
        else:
            pts = np.atleast_2d(thetas).reshape(-1, self.k_sources, 2)
            d2 = np.sum((pts - xi[:, None, :]) ** 2, axis=2)
            mu = self.background + np.sum(self.alpha / (self.damping + d2), axis=1)
        logy = np.log(np.asarray(ys, dtype=np.float64))
        return kernels.normal_logpdf_vec(logy, np.log(mu), self.sigma_log) - logy

    # -- tape facets -----------------------------------------------------------

    differentiable = True

    def log_prior_t(self, thetas: ad.Tensor) -> ad.Tensor:
        quad = ad.tsum(ad.mul(thetas, thetas), axis=1)
        return ad.add(ad.mul(quad, -0.5), -self.theta_dim * _HALF_LOG_2PI)

    def _intensity_t(self, theta, xi) -> ad.Tensor:
        """Tape version of total_intensity for theta rows paired with xi rows."""
        is_tensor = isinstance(theta, ad.Tensor)
        if not is_tensor:
            theta = np.atleast_2d(theta)
        mu = None
        for k in range(self.k_sources):
            pk = ad.slice_cols(theta, 2 * k, 2 * k + 2) if is_tensor else theta[:, 2 * k : 2 * k + 2]
            diff = ad.sub(pk, xi)
            d2 = ad.tsum(ad.mul(diff, diff), axis=1)
            inv = ad.exp(ad.mul(ad.log(ad.add(d2, self.damping)), -1.0))
            term = ad.mul(inv, float(self.alpha[k]))
            mu = term if mu is None else ad.add(mu, term)
        return ad.add(mu, self.background)

    def outcome_t(self, theta: np.ndarray, xi: ad.Tensor, eps: np.ndarray) -> ad.Tensor:
        logmu = ad.log(self._intensity_t(theta, xi))
        return ad.exp(ad.add(logmu, self.sigma_log * eps))

    def ll_t(self, y, theta, xi) -> ad.Tensor:
        xi_t = xi if isinstance(xi, ad.Tensor) else ad.Tensor(xi)
        logmu = ad.log(self._intensity_t(theta, xi_t))
        logy = ad.log(y if isinstance(y, ad.Tensor) else ad.Tensor(y))
        return ad.sub(_normal_logpdf_t(logy, logmu, self.sigma_log), logy)

    def ll_cross_t(self, y: ad.Tensor, thetas: np.ndarray, xi: ad.Tensor) -> ad.Tensor:
        """(B, L) log-likelihood via the expanded-square distance identity."""
        thetas = np.atleast_2d(thetas)
        logy = ad.log(y)
        logy_col = ad.reshape(logy, (-1, 1))
        mu = None
        x2 = ad.reshape(ad.tsum(ad.mul(xi, xi), axis=1), (-1, 1))
        for k in range(self.k_sources):
            pk = thetas[:, 2 * k : 2 * k + 2]
            t2 = np.sum(pk * pk, axis=1)
            cross = ad.matmul(xi, ad.Tensor(pk.T))
            d2 = ad.add(ad.sub(ad.add(x2, t2), ad.mul(cross, 2.0)), self.damping)
            term = ad.mul(ad.exp(ad.mul(ad.log(d2), -1.0)), float(self.alpha[k]))
            mu = term if mu is None else ad.add(mu, term)
        logmu = ad.log(ad.add(mu, self.background))
        return ad.sub(_normal_logpdf_t(logy_col, logmu, self.sigma_log), logy_col)


# ---------------------------------------------------------------------------
# probit threshold model
# ---------------------------------------------------------------------------


class ProbitThresholdModel(ModelSpec):
    """Scalar threshold with a binary response through a probit link."""

    model_id = "probit"
    has_closed_form_eig = True  # Gauss-Hermite quadrature, exact to tolerance
    has_closed_form_posterior = False

    def __init__(self, mu_theta: float = 0.0, sigma_theta: float = 2.0,
                 slope: float = 1.0, xi_range=(-6.0, 6.0)):
        if sigma_theta <= 0 or slope <= 0:
            raise ConfigError("sigma_theta and slope must be positive")
        self.mu_theta = float(mu_theta)
        self.sigma_theta = float(sigma_theta)
        self.slope = float(slope)
        lo, hi = float(xi_range[0]), float(xi_range[1])
        self.theta_dim = 1
        self.design_dim = 1
        self.outcome_kind = OutcomeKind.finite(2)
        self.constraint = BoxConstraint([lo], [hi])

    def validate_design(self, xi: np.ndarray) -> None:
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        if xi.size != 1 or not np.all(np.isfinite(xi)):
            raise InvalidDesignError("design must be a finite scalar stimulus")
        if not self.constraint.contains(xi):
            raise InvalidDesignError(
                f"stimulus {xi[0]:.6g} outside [{self.constraint.lo[0]}, {self.constraint.hi[0]}]"
            )

    def sample_prior_n(self, n: int, rng: RngStream) -> np.ndarray:
        z = rng.generator.standard_normal((n, 1))
        return self.mu_theta + self.sigma_theta * z

    def log_prior_n(self, thetas: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(thetas)[:, 0] - self.mu_theta) / self.sigma_theta
        return -_HALF_LOG_2PI - math.log(self.sigma_theta) - 0.5 * z * z

    def _z(self, thetas: np.ndarray, xi) -> np.ndarray:
        xi = float(np.asarray(xi).reshape(-1)[0])
        return (xi - np.atleast_2d(thetas)[:, 0]) / self.slope

    def sample_outcomes_n(self, thetas, xi, rng: RngStream) -> np.ndarray:
        p1 = ndtr(self._z(thetas, xi))
        u = rng.generator.random(p1.shape[0])
        return (u < p1).astype(np.float64)

    def sample_outcomes_rowwise(self, thetas, xis, rng: RngStream) -> np.ndarray:
        xis = np.asarray(xis, dtype=np.float64)
        if xis.ndim == 1:
            return self.sample_outcomes_n(thetas, xis, rng)
        z = (xis[:, 0] - np.atleast_2d(thetas)[:, 0]) / self.slope
        u = rng.generator.random(z.shape[0])
        return (u < ndtr(z)).astype(np.float64)

    def likelihood_table_n(self, thetas: np.ndarray, xi) -> np.ndarray:
        z = self._z(thetas, xi)
        return np.stack([ndtr(-z), ndtr(z)], axis=1)

    def loglik_pairs(self, ys, thetas, xi) -> np.ndarray:
        z = self._z(thetas, xi)
        logp1 = log_ndtr(z)
        logp0 = log_ndtr(-z)
        ys = np.asarray(ys, dtype=np.float64)
        self._check_indices(ys)
        return np.where(ys[:, None] == 1.0, logp1[None, :], logp0[None, :])

    def loglik_cross(self, ys, thetas, xis) -> np.ndarray:
        z = (np.atleast_2d(xis)[:, :1] - np.atleast_2d(thetas)[:, 0][None, :]) / self.slope
        ys = np.asarray(ys, dtype=np.float64)
        self._check_indices(ys)
        return np.where(ys[:, None] == 1.0, log_ndtr(z), log_ndtr(-z))

    def loglik_elementwise(self, ys, thetas, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64)
        stim = xi[:, 0] if xi.ndim == 2 else float(xi.reshape(-1)[0])
        z = (stim - np.atleast_2d(thetas)[:, 0]) / self.slope
        ys = np.asarray(ys, dtype=np.float64)
        self._check_indices(ys)
        return np.where(ys == 1.0, log_ndtr(z), log_ndtr(-z))

    def _check_indices(self, ys: np.ndarray) -> None:
        if not np.all((ys == 0.0) | (ys == 1.0)):
            raise InvalidDesignError("probit outcomes must be indices in {0, 1}")

    def response_probability(self, xi) -> float:
        """Marginal P(y=1) at ``xi``; Gaussian threshold integrates exactly."""
        xi = float(np.asarray(xi).reshape(-1)[0])
        return float(ndtr((xi - self.mu_theta) / math.hypot(self.slope, self.sigma_theta)))

    def closed_form_eig(self, xi, n_quad: int = 201) -> float:
        """Mutual information by Gauss-Hermite quadrature over the prior."""
        nodes, weights = np.polynomial.hermite.hermgauss(n_quad)
        thetas = (self.mu_theta + math.sqrt(2.0) * self.sigma_theta * nodes).reshape(-1, 1)
        cond = binary_entropy(ndtr(self._z(thetas, xi)))
        expected_cond = float(weights @ cond) / math.sqrt(math.pi)
        return float(binary_entropy(self.response_probability(xi)) - expected_cond)

    # -- tape facets -----------------------------------------------------------

    differentiable = True

    def log_prior_t(self, thetas: ad.Tensor) -> ad.Tensor:
        z = ad.mul(ad.sub(thetas, self.mu_theta), 1.0 / self.sigma_theta)
        quad = ad.tsum(ad.mul(z, z), axis=1)
        return ad.add(ad.mul(quad, -0.5), -_HALF_LOG_2PI - math.log(self.sigma_theta))

    def log_table_t(self, theta, xi) -> Tuple[ad.Tensor, ad.Tensor]:
        """Tape (log p0, log p1) for theta rows against xi rows or a scalar."""
        if isinstance(theta, ad.Tensor):
            t = ad.reshape(theta, (-1,)) if theta.data.ndim == 2 else theta
        else:
            t = np.atleast_2d(theta)[:, 0]
        z = ad.mul(ad.sub(xi, t), 1.0 / self.slope)
        return ad.normal_log_cdf(ad.mul(z, -1.0)), ad.normal_log_cdf(z)

    def ll_t(self, y, theta, xi) -> ad.Tensor:
        """Tape log-likelihood of fixed outcomes under tape latents/designs."""
        logp0, logp1 = self.log_table_t(theta, xi)
        y_arr = np.asarray(y.data if isinstance(y, ad.Tensor) else y, dtype=np.float64)
        self._check_indices(y_arr)
        return ad.add(ad.mul(logp1, y_arr), ad.mul(logp0, 1.0 - y_arr))


def enumerate_outcomes(model: ModelSpec) -> List[int]:
    """The finite outcome set in fixed order; continuous models have none."""
    if not model.outcome_kind.is_finite:
        raise CapabilityError(f"{model.model_id} has a continuous outcome space")
    return list(range(model.outcome_kind.size))


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_SCHEMAS = {
    "lg": {
        "mu0": "prior mean vector",
        "Sigma0": "prior covariance matrix (positive-definite)",
        "sigma2": "observation noise variance",
        "rho": "design norm bound",
    },
    "location": {
        "K": "number of sources",
        "alpha": "per-source intensity (scalar or list)",
        "b": "background signal",
        "m": "damping constant",
        "sigma_log": "log-scale observation noise",
        "box": "[lo, hi] probe bounds per axis",
    },
    "probit": {
        "mu_theta": "threshold prior mean",
        "sigma_theta": "threshold prior std",
        "slope": "link slope",
        "xi_range": "[lo, hi] stimulus bounds",
    },
}

_DEFAULTS = {
    "lg": {"mu0": [0.0], "Sigma0": [[1.0]], "sigma2": 1.0, "rho": 1.0},
    "location": {"K": 2, "alpha": 1.0, "b": 0.1, "m": 1e-4, "sigma_log": 0.5, "box": [-4.0, 4.0]},
    "probit": {"mu_theta": 0.0, "sigma_theta": 2.0, "slope": 1.0, "xi_range": [-6.0, 6.0]},
}

MODEL_IDS = tuple(_SCHEMAS)


def build_model(model_id: str, params: Optional[dict] = None) -> ModelSpec:
    """Instantiate a bundled model from its JSON parameter object.

    Parsing is strict: any key outside the model's schema fails fast.
    """
    if model_id not in _SCHEMAS:
        raise ConfigError(f"unknown model id {model_id!r}; known: {sorted(_SCHEMAS)}")
    params = dict(params or {})
    unknown = set(params) - set(_SCHEMAS[model_id])
    if unknown:
        raise ConfigError(f"unknown parameter key(s) for {model_id}: {sorted(unknown)}")
    merged = {**_DEFAULTS[model_id], **params}
    try:
        if model_id == "lg":
            return LinearGaussianModel(merged["mu0"], merged["Sigma0"], merged["sigma2"], merged["rho"])
        if model_id == "location":
            return LocationFindingModel(
                merged["K"], merged["alpha"], merged["b"], merged["m"],
                merged["sigma_log"], merged["box"],
            )
        return ProbitThresholdModel(
            merged["mu_theta"], merged["sigma_theta"], merged["slope"], merged["xi_range"]
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for {model_id}: {exc}") from exc


def model_catalog() -> List[dict]:
    """Model ids with parameter schemas and outcome kinds, for discovery."""
    out = []
    for mid in MODEL_IDS:
        model = build_model(mid)
        out.append(
            {
                "id": mid,
                "outcome_kind": model.outcome_kind.kind,
                "n_outcomes": model.outcome_kind.size if model.outcome_kind.is_finite else None,
                "theta_dim": model.theta_dim,
                "design_dim": model.design_dim,
                "params_schema": _SCHEMAS[mid],
                "defaults": _DEFAULTS[mid],
            }
        )
    return out
