"""Point estimators of expected information gain.

Four estimators with exact cost accounting: enumeration over finite
outcome sets, nested Monte Carlo with and without an importance proposal
for the inner marginal, and the randomized-truncation multilevel scheme
that removes nesting bias entirely by telescoping the infinite-inner-sample
limit over levels and importance-sampling the level.

Replicates and outer samples draw from disjoint child streams and results
are merged in stream order, so parallel and serial runs agree bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .core import ModelSpec
from .errors import CapabilityError, ConfigError, NumericError
from .rng import RngStream

__all__ = [
    "EigEstimate",
    "NmcConfig",
    "MlmcConfig",
    "PriorProposal",
    "rb_eig",
    "nmc_eig",
    "mlmc_eig",
    "convergence_study",
    "ConvergenceStudy",
    "resolve_threads",
]


@dataclass(frozen=True)
class EigEstimate:
    """A point estimate with its standard error and exact evaluation cost."""

    value: float
    std_error: float
    replicates: int
    likelihood_evals: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")
        if self.likelihood_evals <= 0:
            raise ValueError("likelihood_evals must be positive")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "replicates": self.replicates,
            "likelihood_evals": self.likelihood_evals,
        }


def _estimate_from_terms(terms: np.ndarray, likelihood_evals: int) -> EigEstimate:
    n = terms.shape[0]
    se = float(np.std(terms, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EigEstimate(float(np.mean(terms)), se, n, int(likelihood_evals))


class PriorProposal:
    """The prior as an inner-sample proposal; weights reduce to likelihoods."""

    def __init__(self, model: ModelSpec):
        self.model = model

    def sample_batch(self, ys: np.ndarray, xi, m: int, rng: RngStream) -> np.ndarray:
        n = ys.shape[0]
        return self.model.sample_prior_n(n * m, rng).reshape(n, m, self.model.theta_dim)

    def logpdf_batch(self, thetas: np.ndarray, ys: np.ndarray, xi) -> np.ndarray:
        n, m = thetas.shape[0], thetas.shape[1]
        return self.model.log_prior_n(thetas.reshape(n * m, -1)).reshape(n, m)


@dataclass(frozen=True)
class NmcConfig:
    """Outer/inner sample sizes and inner-sampling policy.

    ``inner_sampling`` is "fresh" (independent inner draws per outer sample,
    the default) or "shared" (the first ``m_inner`` outer latents are reused
    as a common inner pool; kept as a diagnostic hook).
    """

    n_outer: int
    m_inner: int
    proposal: Optional[object] = None
    inner_sampling: str = "fresh"

    def __post_init__(self):
        if self.n_outer < 1 or self.m_inner < 1:
            raise ConfigError("n_outer and m_inner must be at least 1")
        if self.inner_sampling not in ("fresh", "shared"):
            raise ConfigError(f"unknown inner_sampling {self.inner_sampling!r}")
        if self.inner_sampling == "shared" and self.proposal is not None:
            raise ConfigError("shared inner sampling does not take a proposal")


def draw_joint(model: ModelSpec, xi: np.ndarray, n: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """n outer draws (theta_i, y_i) from prior times likelihood at ``xi``."""
    thetas = model.sample_prior_n(n, rng)
    ys = model.sample_outcomes_n(thetas, xi, rng)
    return thetas, ys


def inner_logweights(model: ModelSpec, xi: np.ndarray, ys: np.ndarray,
                     proposal: Optional[object], m: int, rng: RngStream) -> np.ndarray:
    """(n, m) log importance weights for the inner marginal estimates.

    Without a proposal these are plain likelihoods of fresh prior draws;
    with one they are log p(y|theta') + log p(theta') - log q(theta'|y).
    """
    n = ys.shape[0]
    if proposal is None:
        inner = model.sample_prior_n(n * m, rng).reshape(n, m, model.theta_dim)
        return model.loglik_rowwise(ys, inner, xi)
    inner = proposal.sample_batch(ys, xi, m, rng)
    ll = model.loglik_rowwise(ys, inner, xi)
    lp = model.log_prior_n(inner.reshape(n * m, -1)).reshape(n, m)
    lq = proposal.logpdf_batch(inner, ys, xi)
    logw = ll + lp - lq
    if not np.all(np.isfinite(logw)):
        bad = np.argwhere(~np.isfinite(logw))[0]
        raise NumericError(
            f"proposal produced a non-finite weight at outer={bad[0]}, inner={bad[1]}",
            term=(int(bad[0]), int(bad[1])),
        )
    return logw


def rb_eig(model: ModelSpec, xi, n: int, rng: RngStream, bootstrap: int = 200) -> EigEstimate:
    """Enumeration estimator for finite outcome sets.

    Averages p(y|theta) log p(y|theta) and the plug-in marginal entropy over
    prior draws, summed over the outcome set; no outcome sampling at all.
    Standard error by nonparametric bootstrap over the latent draws
    (``bootstrap=0`` skips it and reports 0, for bulk studies).
    """
    if not model.outcome_kind.is_finite:
        raise CapabilityError("rb_eig requires a finite outcome set")
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    if n < 2:
        raise ConfigError("rb_eig needs at least 2 prior draws")
    thetas = model.sample_prior_n(n, rng.child("theta"))
    table = model.likelihood_table_n(thetas, xi)
    value = _rb_value(table)
    se = 0.0
    if bootstrap > 0:
        gen = rng.child("bootstrap").generator
        boot = np.empty(bootstrap)
        for b in range(bootstrap):
            idx = gen.integers(0, n, size=n)
            boot[b] = _rb_value(table[idx])
        se = float(np.std(boot, ddof=1))
    return EigEstimate(value, se, n, n * model.outcome_kind.size)


def _rb_value(table: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(table > 0, table * np.log(table), 0.0)
    cond = np.mean(plogp, axis=0)
    phat = np.mean(table, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        marg = np.where(phat > 0, phat * np.log(phat), 0.0)
    return float(np.sum(cond - marg))


def nmc_eig(model: ModelSpec, xi, config: NmcConfig, rng: RngStream) -> EigEstimate:
    """Nested Monte Carlo: inner sample mean estimates the outcome marginal.

    Cost is exactly n_outer * (m_inner + 1) likelihood evaluations. The
    estimator is biased upward for finite inner sample sizes and consistent
    as both sizes grow.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    n, m = config.n_outer, config.m_inner
    thetas, ys = draw_joint(model, xi, n, rng.child("outer"))
    loglik0 = model.loglik_elementwise(ys, thetas, xi)
    if config.inner_sampling == "shared":
        if m > n:
            raise ConfigError("shared inner sampling requires m_inner <= n_outer")
        logw = model.loglik_pairs(ys, thetas[:m], xi)
    else:
        logw = inner_logweights(model, xi, ys, config.proposal, m, rng.child("inner"))
    terms = loglik0 - kernels.logmeanexp_2d(logw)
    return _estimate_from_terms(terms, n * (m + 1))


@dataclass(frozen=True)
class MlmcConfig:
    """Multilevel debiasing parameters.

    Level ell uses m0 * 2^ell inner samples; levels are drawn with
    probability proportional to 2^(-tau * ell), truncated at ``level_cap``
    and renormalized. ``force_level`` degenerates the level distribution to
    a single level (diagnostic hook for the telescoping base case).
    """

    m0: int = 4
    tau: float = 1.5
    level_cap: int = 12
    replicates: int = 1000
    force_level: Optional[int] = None

    def __post_init__(self):
        if self.m0 < 2 or self.m0 % 2 != 0:
            raise ConfigError("m0 must be an even integer >= 2")
        if not (1.0 < self.tau < 2.0):
            raise ConfigError("tau must lie strictly between 1 and 2")
        if self.level_cap < 0:
            raise ConfigError("level_cap must be non-negative")
        if self.m0 * (1 << self.level_cap) > (1 << 26):
            raise ConfigError(
                f"inner sample count m0 * 2^{self.level_cap} overflows the "
                f"per-replicate budget (2^26)"
            )
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.force_level is not None and not (0 <= self.force_level <= self.level_cap):
            raise ConfigError("force_level must lie within [0, level_cap]")

    def level_probs(self) -> np.ndarray:
        if self.force_level is not None:
            p = np.zeros(self.level_cap + 1)
            p[self.force_level] = 1.0
            return p
        raw = 2.0 ** (-self.tau * np.arange(self.level_cap + 1))
        return raw / raw.sum()

    def expected_cost(self) -> float:
        probs = self.level_probs()
        return float(np.sum(probs * (self.m0 * 2.0 ** np.arange(probs.size) + 1.0)))


def _mlmc_delta(model: ModelSpec, xi: np.ndarray, proposal, m0: int, level: int,
                rng: RngStream) -> Tuple[float, int]:
    """One coupled level difference and its likelihood-evaluation cost.

    The level-ell inner samples are split into halves that share the outer
    draw, an antithetic coupling that keeps the difference variance summable
    across levels.
    """
    m = m0 << level
    thetas, ys = draw_joint(model, xi, 1, rng.child("outer"))
    logw = inner_logweights(model, xi, ys, proposal, m, rng.child("inner"))
    lme_all = float(kernels.logmeanexp_2d(logw)[0])
    if level == 0:
        loglik0 = float(model.loglik_elementwise(ys, thetas, xi)[0])
        return loglik0 - lme_all, m + 1
    half = m // 2
    lme_a = float(kernels.logmeanexp_2d(np.ascontiguousarray(logw[:, :half]))[0])
    lme_b = float(kernels.logmeanexp_2d(np.ascontiguousarray(logw[:, half:]))[0])
    # the outer log-likelihood cancels in the coupled difference
    return 0.5 * (lme_a + lme_b) - lme_all, m + 1


def mlmc_eig(model: ModelSpec, xi, config: MlmcConfig, rng: RngStream,
             proposal: Optional[object] = None, threads: int = 1) -> EigEstimate:
    """Unbiased EIG estimate by randomized level truncation.

    Each replicate samples a level, computes the antithetically coupled
    difference at that level, and divides by the level probability; the
    replicate mean is unbiased for the EIG and costs are accounted exactly.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    model.validate_design(xi)
    probs = config.level_probs()
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    u = rng.child("levels").generator.random(config.replicates)
    levels = np.searchsorted(cum, u, side="right")

    def one(r: int) -> Tuple[float, int]:
        delta, cost = _mlmc_delta(
            model, xi, proposal, config.m0, int(levels[r]), rng.child("rep", r)
        )
        return delta / probs[levels[r]], cost

    results = _pmap(one, config.replicates, threads)
    values = np.array([v for v, _ in results])
    evals = int(sum(c for _, c in results))
    return _estimate_from_terms(values, evals)


def resolve_threads(threads: Optional[int]) -> int:
    """Explicit value, else the EIGLAB_THREADS environment variable, else 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("EIGLAB_THREADS", "").strip()
    return max(1, int(env)) if env else 1


def _pmap(fn: Callable[[int], object], n: int, threads: int) -> list:
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceStudy:
    """Cost-versus-MSE table with the fitted log-log slope."""

    rows: Tuple[Tuple[float, float], ...]  # (mean realized cost, empirical mse)
    slope: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["cost", "mse", "slope_fit"])
        for cost, mse in self.rows:
            writer.writerow([f"{cost:.17g}", f"{mse:.17g}", f"{self.slope:.17g}"])
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _nmc_sizes(cost: int) -> Tuple[int, int]:
    """Pair outer and inner sizes with m = round(sqrt(n)) for a target cost."""
    n = max(2, round(cost ** (2.0 / 3.0)))
    m = max(1, round(math.sqrt(n)))
    return n, m


def convergence_study(estimator_id: str, model: ModelSpec, xi, costs: Sequence[int],
                      replicates: int, rng: RngStream, pairing: str = "sqrt",
                      mlmc: Optional[MlmcConfig] = None,
                      threads: int = 1) -> ConvergenceStudy:
    """Empirical MSE against the model's oracle EIG over a cost grid.

    For the nested estimator the pairing rule fixes m = round(sqrt(n));
    the multilevel estimator spends the budget on replicates instead. MSE
    uses `replicates` independent estimates per cost point and the slope is
    a least-squares fit in log-log space.
    """
    if not model.has_closed_form_eig:
        raise CapabilityError("convergence_study requires a model with an EIG oracle")
    if estimator_id not in ("nmc", "mlmc", "rb"):
        raise ConfigError(f"unknown estimator id {estimator_id!r}")
    if pairing != "sqrt":
        raise ConfigError(f"unknown pairing rule {pairing!r}")
    if not costs:
        raise ConfigError("cost grid is empty")
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    oracle = model.closed_form_eig(xi)
    base = mlmc or MlmcConfig()

    def run_one(cost: int, stream: RngStream) -> EigEstimate:
        if estimator_id == "nmc":
            n, m = _nmc_sizes(cost)
            return nmc_eig(model, xi, NmcConfig(n, m), stream)
        if estimator_id == "mlmc":
            reps = max(2, round(cost / base.expected_cost()))
            return mlmc_eig(model, xi, replace(base, replicates=reps), stream)
        n = max(2, cost // model.outcome_kind.size)
        return rb_eig(model, xi, n, stream, bootstrap=0)

    rows = []
    for ci, cost in enumerate(costs):
        def one(j: int, _ci=ci, _cost=cost) -> Tuple[float, int]:
            est = run_one(_cost, rng.child("cost", _ci, "rep", j))
            return est.value, est.likelihood_evals

        results = _pmap(one, replicates, threads)
        values = np.array([v for v, _ in results])
        mean_cost = float(np.mean([c for _, c in results]))
        mse = float(np.mean((values - oracle) ** 2))
        rows.append((mean_cost, mse))

    logc = np.log([c for c, _ in rows])
    logm = np.log([m for _, m in rows])
    slope = float(np.polyfit(logc, logm, 1)[0])
    return ConvergenceStudy(tuple(rows), slope)
