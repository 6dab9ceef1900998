"""Variational EIG bounds and the trainers for their approximations.

Upper bounds come from approximating the outcome marginal (directly, or
implicitly through inner importance sampling); lower bounds come from
scoring an amortized posterior approximation against the prior, or from a
contrastive denominator that includes the outer latent sample. The
prior-contrastive special case (no trainable part) is what the policy
module builds on.

All trainers are momentum-free first-order ascent/descent with
reparameterized sampling, so training traces are reproducible bit for bit
under a fixed seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from . import kernels
from .core import ModelSpec
from .errors import ConfigError, NumericError, TrainingError
from .estimators import EigEstimate, _estimate_from_terms, draw_joint, inner_logweights
from .rng import RngStream

__all__ = [
    "GaussianMarginal",
    "LogitsMarginal",
    "ConditionalGaussianPosterior",
    "BoundConfig",
    "TrainResult",
    "marginal_bound",
    "ba_bound",
    "vnmc_bound",
    "ace_bound",
    "train_variational",
    "sgd_step",
    "trace_csv",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
    """In-place plain gradient step (ascent handled by the caller's sign)."""
    for p, g in zip(params, grads):
        p -= lr * g


def _glorot(rng_gen, fan_in: int, fan_out: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (fan_in + fan_out))
    return scale * rng_gen.standard_normal((fan_in, fan_out))


# ---------------------------------------------------------------------------
# variational families
# ---------------------------------------------------------------------------


class GaussianMarginal:
    """Trainable Gaussian over a scalar outcome at a fixed design."""

    def __init__(self, mean: float = 0.0, log_scale: float = 0.0):
        self.params = [np.array([mean]), np.array([log_scale])]

    def log_density(self, ys: np.ndarray) -> np.ndarray:
        mean, log_scale = self.params[0][0], self.params[1][0]
        z = (np.asarray(ys) - mean) * math.exp(-log_scale)
        return -_HALF_LOG_2PI - log_scale - 0.5 * z * z

    def log_density_t(self, ys: np.ndarray, leaves: Sequence[ad.Tensor]) -> ad.Tensor:
        mean, log_scale = leaves
        z = ad.mul(ad.sub(ad.Tensor(ys), mean), ad.exp(ad.mul(log_scale, -1.0)))
        return ad.sub(ad.mul(ad.mul(z, z), -0.5) + (-_HALF_LOG_2PI), log_scale)


class LogitsMarginal:
    """Trainable categorical over a finite outcome set at a fixed design."""

    def __init__(self, n_outcomes: int):
        self.params = [np.zeros(n_outcomes)]

    def log_density(self, ys: np.ndarray) -> np.ndarray:
        logits = self.params[0]
        logp = logits - kernels.logmeanexp_1d(logits) - math.log(logits.size)
        return logp[np.asarray(ys, dtype=np.int64)]

    def log_density_t(self, ys: np.ndarray, leaves: Sequence[ad.Tensor]) -> ad.Tensor:
        (logits,) = leaves
        logp = ad.sub(logits, ad.logsumexp(logits))
        return ad.gather(logp, np.asarray(ys, dtype=np.int64))


class ConditionalGaussianPosterior:
    """Amortized Gaussian posterior: a small tanh network maps (y, xi) to
    per-dimension mean and log-scale over the latent vector.

    Doubles as the inner-sample proposal for the importance-sampled
    estimators; for the conjugate oracle model the family contains the true
    posterior, which is what makes the equality cases testable.
    """

    def __init__(self, theta_dim: int, design_dim: int, rng: RngStream, hidden: int = 64):
        gen = rng.generator
        in_dim = 1 + design_dim
        out_dim = 2 * theta_dim
        self.theta_dim = theta_dim
        self.design_dim = design_dim
        self.hidden = hidden
        self.params = [
            _glorot(gen, in_dim, hidden), np.zeros(hidden),
            _glorot(gen, hidden, hidden), np.zeros(hidden),
            0.01 * gen.standard_normal((hidden, out_dim)), np.zeros(out_dim),
        ]

    def _inputs(self, ys: np.ndarray, xi: np.ndarray) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64).reshape(-1, 1)
        xi_rows = np.broadcast_to(np.asarray(xi, dtype=np.float64), (ys.shape[0], self.design_dim))
        return np.concatenate([ys, xi_rows], axis=1)

    def forward(self, ys: np.ndarray, xi) -> Tuple[np.ndarray, np.ndarray]:
        w1, b1, w2, b2, w3, b3 = self.params
        h = np.tanh(self._inputs(ys, xi) @ w1 + b1)
        h = np.tanh(h @ w2 + b2)
        out = h @ w3 + b3
        return out[:, : self.theta_dim], out[:, self.theta_dim :]

    # -- proposal protocol ---------------------------------------------------

    def sample_batch(self, ys: np.ndarray, xi, m: int, rng: RngStream) -> np.ndarray:
        mean, log_scale = self.forward(ys, xi)
        z = rng.generator.standard_normal((ys.shape[0], m, self.theta_dim))
        return mean[:, None, :] + np.exp(log_scale)[:, None, :] * z

    def logpdf_batch(self, thetas: np.ndarray, ys: np.ndarray, xi) -> np.ndarray:
        mean, log_scale = self.forward(ys, xi)
        z = (thetas - mean[:, None, :]) * np.exp(-log_scale)[:, None, :]
        per_dim = -_HALF_LOG_2PI - log_scale[:, None, :] - 0.5 * z * z
        return np.sum(per_dim, axis=2)

    def log_density(self, thetas: np.ndarray, ys: np.ndarray, xi) -> np.ndarray:
        """log q(theta_i | y_i, xi) for matched rows."""
        return self.logpdf_batch(np.atleast_2d(thetas)[:, None, :], ys, xi)[:, 0]


# ---------------------------------------------------------------------------
# bound evaluation (sampling paths, no tapes)
# ---------------------------------------------------------------------------


def marginal_bound(model: ModelSpec, xi, q, n: int, rng: RngStream) -> EigEstimate:
    """Upper bound: joint-sample average of log p(y|theta,xi) - log q(y|xi).

    Tight exactly when q matches the outcome marginal; any normalized q is
    valid, looser q only raises the value.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    thetas, ys = draw_joint(model, xi, n, rng.child("outer"))
    loglik = model.loglik_elementwise(ys, thetas, xi)
    logq = q.log_density(ys)
    if not np.all(np.isfinite(logq)):
        bad = int(np.argwhere(~np.isfinite(logq))[0][0])
        raise NumericError(f"marginal approximation vanished at sample {bad}", term=bad)
    return _estimate_from_terms(loglik - logq, n)


def ba_bound(model: ModelSpec, xi, q: ConditionalGaussianPosterior, n: int,
             rng: RngStream) -> EigEstimate:
    """Lower bound: joint-sample average of log q(theta|y,xi) - log p(theta)."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    thetas, ys = draw_joint(model, xi, n, rng.child("outer"))
    logq = q.log_density(thetas, ys, xi)
    if not np.all(np.isfinite(logq)):
        bad = int(np.argwhere(~np.isfinite(logq))[0][0])
        raise NumericError(f"posterior approximation vanished at sample {bad}", term=bad)
    return _estimate_from_terms(logq - model.log_prior_n(thetas), n)


def _contrastive_parts(model: ModelSpec, xi: np.ndarray, q, n: int, m: int,
                       rng: RngStream, shared_contrasts: bool):
    """Joint draws plus the (n, m) inner log-weight matrix and the outer
    self-weight column shared by the nested upper bound and the contrastive
    lower bound."""
    thetas, ys = draw_joint(model, xi, n, rng.child("outer"))
    loglik0 = model.loglik_elementwise(ys, thetas, xi)
    if shared_contrasts:
        if q is not None:
            raise ConfigError("shared contrasts require prior contrasts (q=None)")
        contrasts = model.sample_prior_n(m, rng.child("inner"))
        logw = model.loglik_pairs(ys, contrasts, xi)
    else:
        logw = inner_logweights(model, xi, ys, q, m, rng.child("inner"))
    if q is None:
        w0 = loglik0
    else:
        lq0 = q.log_density(thetas, ys, xi)
        if not np.all(np.isfinite(lq0)):
            bad = int(np.argwhere(~np.isfinite(lq0))[0][0])
            raise NumericError(f"proposal density vanished at outer sample {bad}", term=bad)
        w0 = loglik0 + model.log_prior_n(thetas) - lq0
    return loglik0, w0, logw


def vnmc_bound(model: ModelSpec, xi, q, n: int, m: int, rng: RngStream) -> EigEstimate:
    """Upper bound: the expectation of the single-outer-sample importance
    NMC estimator; tightens monotonically in the inner sample count."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    if m < 1:
        raise ConfigError("m must be at least 1")
    loglik0, _, logw = _contrastive_parts(model, xi, q, n, m, rng, shared_contrasts=False)
    terms = loglik0 - kernels.logmeanexp_2d(logw)
    return _estimate_from_terms(terms, n * (m + 1))


def ace_bound(model: ModelSpec, xi, q, n: int, m: int, rng: RngStream,
              shared_contrasts: bool = False) -> EigEstimate:
    """Lower bound: the contrastive denominator includes the outer latent.

    With ``q=None`` the contrasts come from the prior and every weight
    collapses to a likelihood (the prior-contrastive variant); each term is
    then capped at log(m+1) and that cap is checked on every term.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    if m < 1:
        raise ConfigError("m must be at least 1")
    loglik0, w0, logw = _contrastive_parts(model, xi, q, n, m, rng, shared_contrasts)
    denom = kernels.logmeanexp_2d(np.column_stack([w0, logw]))
    terms = loglik0 - denom
    if q is None:
        cap = math.log(m + 1)
        if np.any(terms > cap + 1e-9):
            worst = float(np.max(terms))
            raise AssertionError(
                f"prior-contrastive term {worst:.6g} exceeds its log(m+1) cap {cap:.6g}"
            )
    return _estimate_from_terms(terms, n * (m + 2))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundConfig:
    """What to train and how long; lr may be a schedule step -> float."""

    bound: str  # marginal | ba | vnmc | ace | pce
    m_contrastive: int = 16
    batch_size: int = 128
    steps: int = 2000
    lr: Union[float, Callable[[int], float]] = 1e-2

    def __post_init__(self):
        if self.bound not in ("marginal", "ba", "vnmc", "ace", "pce"):
            raise ConfigError(f"unknown bound id {self.bound!r}")
        if self.bound in ("vnmc", "ace") and self.m_contrastive < 1:
            raise ConfigError("m_contrastive must be at least 1")
        if self.batch_size < 2 or self.steps < 0:
            raise ConfigError("batch_size must be >= 2 and steps >= 0")

    def lr_at(self, step: int) -> float:
        return self.lr(step) if callable(self.lr) else float(self.lr)


@dataclass
class TrainResult:
    approx: object
    trace: List[Tuple[int, float, float]]  # (step, bound_estimate, std_error)


def trace_csv(trace: Sequence[Tuple[int, float, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "bound_estimate", "std_error"])
    for step, value, se in trace:
        writer.writerow([step, f"{value:.17g}", f"{se:.17g}"])
    return buf.getvalue()


def _fresh_approx(model: ModelSpec, bound: str, rng: RngStream):
    if bound == "marginal":
        if model.outcome_kind.is_finite:
            return LogitsMarginal(model.outcome_kind.size)
        return GaussianMarginal()
    return ConditionalGaussianPosterior(model.theta_dim, model.design_dim, rng.child("init"))


def train_variational(model: ModelSpec, xi, config: BoundConfig, rng: RngStream) -> TrainResult:
    """Fit the bound's approximation by stochastic gradient on the bound.

    Lower bounds are ascended, upper bounds descended, always with respect
    to the approximation parameters only. Returns the fitted approximation
    together with the per-step bound estimates from the training batches.
    """
    if config.bound == "pce":
        raise ConfigError("the prior-contrastive bound has nothing to train")
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    approx = _fresh_approx(model, config.bound, rng)
    direction = -1.0 if config.bound in ("marginal", "vnmc") else +1.0  # descend uppers
    trace: List[Tuple[int, float, float]] = []
    for step in range(config.steps):
        step_rng = rng.child("step", step)
        value, se, bound_grads = _bound_step(model, xi, approx, config, step_rng)
        if not math.isfinite(value):
            raise TrainingError("bound estimate diverged", step)
        sgd_step(approx.params, [-direction * g for g in bound_grads], config.lr_at(step))
        trace.append((step, value, se))
    return TrainResult(approx, trace)


def _step_draws(model: ModelSpec, xi: np.ndarray, config: BoundConfig, rng: RngStream):
    """All randomness for one training step, drawn up front (common random
    numbers for gradient checking)."""
    thetas, ys = draw_joint(model, xi, config.batch_size, rng.child("outer"))
    eps = None
    if config.bound in ("vnmc", "ace"):
        eps = rng.child("inner").generator.standard_normal(
            (config.batch_size, config.m_contrastive, model.theta_dim)
        )
    return thetas, ys, eps


def _bound_objective_t(model: ModelSpec, xi: np.ndarray, approx, config: BoundConfig,
                       draws, leaves) -> Tuple[ad.Tensor, np.ndarray]:
    """Tape scalar whose gradient is d(bound)/d(params), plus the per-sample
    bound terms; constant-in-q pieces are dropped from the recorded scalar."""
    thetas, ys, eps = draws
    b = config.batch_size
    if config.bound == "marginal":
        logq = approx.log_density_t(ys, leaves)
        loglik = model.loglik_elementwise(ys, thetas, xi)
        return ad.mul(ad.tmean(logq), -1.0), loglik - logq.data
    if config.bound == "ba":
        logq = _posterior_logpdf_t(approx, thetas, ys, xi, leaves)
        return ad.tmean(logq), logq.data - model.log_prior_n(thetas)
    m = config.m_contrastive
    loglik0 = model.loglik_elementwise(ys, thetas, xi)
    mean_t, ls_t = _posterior_forward_t(approx, ys, xi, leaves)
    theta_p = ad.add(
        ad.reshape(mean_t, (b, 1, -1)),
        ad.mul(ad.reshape(ad.exp(ls_t), (b, 1, -1)), eps),
    )
    theta_flat = ad.reshape(theta_p, (b * m, model.theta_dim))
    y_rep = np.repeat(ys, m)
    ll = ad.reshape(model.ll_t(y_rep, theta_flat, xi), (b, m))
    lp = model.log_prior_t(theta_flat)
    lq = _gauss_logpdf_rows_t(theta_p, mean_t, ls_t)
    logw = ad.add(ll, ad.sub(ad.reshape(lp, (b, m)), lq))
    if config.bound == "vnmc":
        denom = ad.sub(ad.logsumexp(logw, axis=1), math.log(m))
        terms = ad.sub(ad.Tensor(loglik0), denom)
    else:
        lq0 = _posterior_logpdf_t(approx, thetas, ys, xi, leaves)
        w0 = ad.sub(ad.Tensor(loglik0 + model.log_prior_n(thetas)), lq0)
        mat = ad.concat([ad.reshape(w0, (b, 1)), logw], axis=1)
        denom = ad.sub(ad.logsumexp(mat, axis=1), math.log(m + 1))
        terms = ad.sub(ad.Tensor(loglik0), denom)
    return ad.tmean(terms), terms.data


def _bound_step(model: ModelSpec, xi: np.ndarray, approx, config: BoundConfig,
                rng: RngStream):
    """One batch: bound estimate, standard error, and d(bound)/d(params)."""
    tape = ad.Tape()
    leaves = [tape.leaf(p) for p in approx.params]
    draws = _step_draws(model, xi, config, rng)
    objective, terms_np = _bound_objective_t(model, xi, approx, config, draws, leaves)
    grads = ad.grad(objective, leaves)
    value = float(np.mean(terms_np))
    se = float(np.std(terms_np, ddof=1) / math.sqrt(terms_np.shape[0]))
    return value, se, grads


def _posterior_forward_t(q: ConditionalGaussianPosterior, ys, xi, leaves):
    w1, b1, w2, b2, w3, b3 = leaves
    h = ad.tanh(ad.affine(ad.Tensor(q._inputs(ys, xi)), w1, b1))
    h = ad.tanh(ad.affine(h, w2, b2))
    out = ad.affine(h, w3, b3)
    d = q.theta_dim
    return ad.slice_cols(out, 0, d), ad.slice_cols(out, d, 2 * d)


def _posterior_logpdf_t(q: ConditionalGaussianPosterior, thetas: np.ndarray, ys, xi, leaves) -> ad.Tensor:
    mean, log_scale = _posterior_forward_t(q, ys, xi, leaves)
    z = ad.mul(ad.sub(ad.Tensor(np.atleast_2d(thetas)), mean), ad.exp(ad.mul(log_scale, -1.0)))
    per_dim = ad.sub(ad.add(ad.mul(ad.mul(z, z), -0.5), -_HALF_LOG_2PI), log_scale)
    return ad.tsum(per_dim, axis=1)


def _gauss_logpdf_rows_t(theta_p: ad.Tensor, mean: ad.Tensor, log_scale: ad.Tensor) -> ad.Tensor:
    """log q of reparameterized draws theta_p (b, m, d) under their own q."""
    b, m, d = theta_p.data.shape
    mean3 = ad.reshape(mean, (b, 1, d))
    ls3 = ad.reshape(log_scale, (b, 1, d))
    z = ad.mul(ad.sub(theta_p, mean3), ad.exp(ad.mul(ls3, -1.0)))
    per = ad.sub(ad.add(ad.mul(ad.mul(z, z), -0.5), -_HALF_LOG_2PI), ls3)
    return ad.reshape(ad.tsum(ad.reshape(per, (b * m, d)), axis=1), (b, m))
