"""Static design optimization.

Projected stochastic-gradient ascent of EIG lower bounds with respect to
the design, with restarts against multimodality and a grid-search fallback
for low-dimensional design spaces. Gradients flow through reparameterized
outcomes for continuous models and through enumerated outcome sums for
finite ones, never through a score-function term.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .bounds import ConditionalGaussianPosterior, ace_bound, ba_bound, sgd_step
from .core import ModelSpec
from .errors import CapabilityError, ConfigError, OptimizationError
from .estimators import EigEstimate, NmcConfig, nmc_eig, rb_eig
from .rng import RngStream

__all__ = [
    "OptConfig",
    "OptResult",
    "sga_optimize",
    "grid_search",
    "project",
    "make_design_objective",
    "opt_trace_csv",
]


def project(xi: np.ndarray, constraint) -> np.ndarray:
    """Euclidean projection of a design onto its constraint set."""
    return constraint.project(np.asarray(xi, dtype=np.float64))


@dataclass(frozen=True)
class OptConfig:
    """Objective, step sizes, and restart budget for design ascent."""

    objective: str = "pce"  # pce | ace | ba
    m_contrastive: int = 16
    steps: int = 300
    lr_design: float = 0.05
    lr_q: float = 0.01
    batch_size: int = 64
    restarts: int = 8
    mode: str = "alternating"  # alternating | joint
    eval_n: int = 4096
    eval_m: int = 511

    def __post_init__(self):
        if self.objective not in ("pce", "ace", "ba"):
            raise ConfigError(f"unknown design objective {self.objective!r}")
        if self.steps < 0 or self.restarts < 1:
            raise ConfigError("steps must be >= 0 and restarts >= 1")
        if self.mode not in ("alternating", "joint"):
            raise ConfigError(f"unknown update mode {self.mode!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")


@dataclass
class OptResult:
    design: np.ndarray
    trace: List[Tuple[int, np.ndarray, float]]  # (step, xi, batch bound value)
    final: EigEstimate
    restart: int


def make_design_objective(model: ModelSpec, objective: str, approx, batch: int,
                          m: int, rng: RngStream) -> Callable[[ad.Tensor], ad.Tensor]:
    """A frozen-noise objective xi -> scalar bound estimate on a tape.

    All randomness is drawn up front, so repeated evaluation at different
    designs uses common random numbers; this is what both the ascent steps
    and the finite-difference checks call.
    """
    thetas = model.sample_prior_n(batch, rng.child("outer"))
    if objective == "pce":
        contrasts = model.sample_prior_n(m, rng.child("inner"))
        if model.outcome_kind.is_finite:
            return lambda xi_t: _pce_finite_t(model, xi_t, thetas, contrasts)
        eps = rng.child("noise").generator.standard_normal(batch)
        return lambda xi_t: _pce_continuous_t(model, xi_t, thetas, contrasts, eps)
    if objective == "ba":
        if model.outcome_kind.is_finite:
            return lambda xi_t, leaves=None: _ba_finite_t(model, xi_t, thetas, approx, leaves)
        eps = rng.child("noise").generator.standard_normal(batch)
        return lambda xi_t, leaves=None: _ba_continuous_t(model, xi_t, thetas, eps, approx, leaves)
    # ace
    if model.outcome_kind.is_finite:
        raise CapabilityError("the ace design objective requires continuous outcomes; use pce or ba")
    eps = rng.child("noise").generator.standard_normal(batch)
    eps_q = rng.child("proposal").generator.standard_normal((batch, m, model.theta_dim))
    return lambda xi_t, leaves=None: _ace_continuous_t(model, xi_t, thetas, eps, eps_q, approx, leaves)


def _contrastive_terms_t(ll0: ad.Tensor, cross: ad.Tensor, m: int) -> ad.Tensor:
    b = ll0.data.shape[0]
    mat = ad.concat([ad.reshape(ll0, (b, 1)), cross], axis=1)
    denom = ad.sub(ad.logsumexp(mat, axis=1), math.log(m + 1))
    return ad.sub(ll0, denom)


def _pce_continuous_t(model, xi_t, thetas, contrasts, eps) -> ad.Tensor:
    y_t = model.outcome_t(thetas, xi_t, eps)
    ll0 = model.ll_t(y_t, thetas, xi_t)
    cross = model.ll_cross_t(y_t, contrasts, xi_t)
    return ad.tmean(_contrastive_terms_t(ll0, cross, contrasts.shape[0]))


def _pce_finite_t(model, xi_t, thetas, contrasts) -> ad.Tensor:
    """Outcome sum replaces sampling: sum_y p(y|theta0) * term_y."""
    b, m = thetas.shape[0], contrasts.shape[0]
    out_logs = model.log_table_t(thetas, xi_t)            # tuple over outcomes, each (b,)
    con_logs = model.log_table_t(contrasts, xi_t)         # each (m,)
    total = None
    for ll0, llc in zip(out_logs, con_logs):
        row = ad.add(ad.reshape(llc, (1, m)), np.zeros((b, 1)))  # broadcast to (b, m)
        terms = _contrastive_terms_t(ll0, row, m)
        weighted = ad.mul(ad.exp(ll0), terms)
        total = weighted if total is None else ad.add(total, weighted)
    return ad.tmean(total)


def _q_forward_t(approx: ConditionalGaussianPosterior, y_t: ad.Tensor, xi_t: ad.Tensor,
                 leaves) -> Tuple[ad.Tensor, ad.Tensor]:
    b = y_t.data.shape[0]
    if xi_t.data.ndim == 1:
        xi_rows = ad.add(ad.reshape(xi_t, (1, -1)), np.zeros((b, 1)))
    else:
        xi_rows = xi_t
    inp = ad.concat([ad.reshape(y_t, (b, 1)), xi_rows], axis=1)
    w1, b1, w2, b2, w3, b3 = leaves
    h = ad.tanh(ad.affine(inp, w1, b1))
    h = ad.tanh(ad.affine(h, w2, b2))
    out = ad.affine(h, w3, b3)
    d = approx.theta_dim
    return ad.slice_cols(out, 0, d), ad.slice_cols(out, d, 2 * d)


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _gauss_logpdf_t(theta_rows: np.ndarray, mean: ad.Tensor, log_scale: ad.Tensor) -> ad.Tensor:
    z = ad.mul(ad.sub(ad.Tensor(np.atleast_2d(theta_rows)), mean), ad.exp(ad.mul(log_scale, -1.0)))
    per = ad.sub(ad.add(ad.mul(ad.mul(z, z), -0.5), -_HALF_LOG_2PI), log_scale)
    return ad.tsum(per, axis=1)


def _ba_continuous_t(model, xi_t, thetas, eps, approx, leaves) -> ad.Tensor:
    leaves = leaves or [ad.Tensor(p) for p in approx.params]
    y_t = model.outcome_t(thetas, xi_t, eps)
    mean, ls = _q_forward_t(approx, y_t, xi_t, leaves)
    logq = _gauss_logpdf_t(thetas, mean, ls)
    return ad.sub(ad.tmean(logq), float(np.mean(model.log_prior_n(thetas))))


def _ba_finite_t(model, xi_t, thetas, approx, leaves) -> ad.Tensor:
    leaves = leaves or [ad.Tensor(p) for p in approx.params]
    b = thetas.shape[0]
    out_logs = model.log_table_t(thetas, xi_t)
    total = None
    lp_mean = float(np.mean(model.log_prior_n(thetas)))
    for y_val, ll_y in enumerate(out_logs):
        y_const = ad.Tensor(np.full(b, float(y_val)))
        mean, ls = _q_forward_t(approx, y_const, xi_t, leaves)
        logq = _gauss_logpdf_t(thetas, mean, ls)
        weighted = ad.mul(ad.exp(ll_y), logq)
        total = weighted if total is None else ad.add(total, weighted)
    return ad.sub(ad.tmean(total), lp_mean)


def _ace_continuous_t(model, xi_t, thetas, eps, eps_q, approx, leaves) -> ad.Tensor:
    leaves = leaves or [ad.Tensor(p) for p in approx.params]
    b, m, d = eps_q.shape
    y_t = model.outcome_t(thetas, xi_t, eps)
    mean, ls = _q_forward_t(approx, y_t, xi_t, leaves)
    theta_p = ad.add(ad.reshape(mean, (b, 1, d)), ad.mul(ad.reshape(ad.exp(ls), (b, 1, d)), eps_q))
    theta_flat = ad.reshape(theta_p, (b * m, d))
    y_rep = _repeat_rows_t(y_t, m)
    xi_rep = xi_t if xi_t.data.ndim == 1 else _repeat_rows_t(xi_t, m)
    ll = ad.reshape(model.ll_t(y_rep, theta_flat, xi_rep), (b, m))
    lp = model.log_prior_t(theta_flat)
    z = ad.mul(ad.sub(theta_p, ad.reshape(mean, (b, 1, d))), ad.exp(ad.mul(ad.reshape(ls, (b, 1, d)), -1.0)))
    per = ad.sub(ad.add(ad.mul(ad.mul(z, z), -0.5), -_HALF_LOG_2PI), ad.reshape(ls, (b, 1, d)))
    lq = ad.reshape(ad.tsum(ad.reshape(per, (b * m, d)), axis=1), (b, m))
    logw = ad.add(ll, ad.sub(ad.reshape(lp, (b, m)), lq))
    ll0 = model.ll_t(y_t, thetas, xi_t)
    lq0 = _gauss_logpdf_t(thetas, mean, ls)
    w0 = ad.sub(ad.add(ll0, model.log_prior_n(thetas)), lq0)
    mat = ad.concat([ad.reshape(w0, (b, 1)), logw], axis=1)
    denom = ad.sub(ad.logsumexp(mat, axis=1), math.log(m + 1))
    return ad.tmean(ad.sub(ll0, denom))


def _repeat_rows_t(t: ad.Tensor, m: int) -> ad.Tensor:
    """(b, ...) -> (b*m, ...) by repeating each row m times, on the tape."""
    b = t.data.shape[0]
    sel = np.zeros((b * m, b))
    sel[np.arange(b * m), np.repeat(np.arange(b), m)] = 1.0
    if t.data.ndim == 1:
        return ad.reshape(ad.matmul(ad.Tensor(sel), ad.reshape(t, (b, 1))), (b * m,))
    return ad.matmul(ad.Tensor(sel), t)


def sga_optimize(model: ModelSpec, config: OptConfig, rng: RngStream) -> OptResult:
    """Projected stochastic-gradient design ascent from random restarts.

    Returns the restart whose final held-out bound estimate (fresh streams)
    is highest, with that restart's per-step trace. Every iterate satisfies
    the design constraint exactly.
    """
    if not getattr(model, "differentiable", False):
        raise CapabilityError(f"{model.model_id} does not expose design gradients")
    constraint = model.constraint
    needs_q = config.objective in ("ba", "ace")
    best: Optional[OptResult] = None
    for k in range(config.restarts):
        r = rng.child("restart", k)
        xi = constraint.project(constraint.sample_point(r.child("init")))
        approx = (
            ConditionalGaussianPosterior(model.theta_dim, model.design_dim, r.child("qinit"))
            if needs_q
            else None
        )
        trace: List[Tuple[int, np.ndarray, float]] = []
        for step in range(config.steps):
            objective = make_design_objective(
                model, config.objective, approx, config.batch_size,
                config.m_contrastive, r.child("step", step),
            )
            tape = ad.Tape()
            xi_leaf = tape.leaf(xi)
            if needs_q:
                q_leaves = [tape.leaf(p) for p in approx.params]
                value_t = objective(xi_leaf, q_leaves)
                grads = ad.grad(value_t, [xi_leaf] + q_leaves)
            else:
                value_t = objective(xi_leaf)
                grads = ad.grad(value_t, [xi_leaf])
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise OptimizationError("non-finite design gradient", step)
            update_xi = (not needs_q) or config.mode == "joint" or step % 2 == 0
            update_q = needs_q and (config.mode == "joint" or step % 2 == 1)
            if update_xi:
                xi = constraint.project(xi + config.lr_design * grads[0])
                if not constraint.contains(xi):
                    raise OptimizationError("iterate left the constraint set", step)
            if update_q:
                sgd_step(approx.params, [-g for g in grads[1:]], config.lr_q)
            trace.append((step, xi.copy(), float(value_t.data)))
        final = _final_estimate(model, config, xi, approx, r.child("eval"))
        if best is None or final.value > best.final.value:
            best = OptResult(xi.copy(), trace, final, k)
    return best


def _final_estimate(model, config: OptConfig, xi, approx, rng: RngStream) -> EigEstimate:
    if config.objective == "ba":
        return ba_bound(model, xi, approx, config.eval_n, rng)
    q = approx if config.objective == "ace" else None
    m_eval = max(config.m_contrastive, config.eval_m)
    return ace_bound(model, xi, q, config.eval_n, m_eval, rng)


def grid_search(model: ModelSpec, estimator_id: str, grid, n: int,
                rng: RngStream, m_inner: Optional[int] = None, rb_bootstrap: int = 200):
    """Evaluate an estimator over a grid on common random numbers.

    The grid is sorted lexicographically first and ties are broken by the
    lowest index, so the result does not depend on input ordering. Returns
    the winning design and the full (design, estimate) table.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] == 0:
        raise ConfigError("grid_search requires a non-empty grid")
    if grid.shape[1] > 2:
        raise ConfigError("grid_search supports design dimension <= 2")
    order = np.lexsort(grid.T[::-1])
    grid = grid[order]
    crn = rng.child("crn")

    def evaluate(xi: np.ndarray, bootstrap: int) -> EigEstimate:
        fresh = RngStream(crn.seed, crn.stream_id)  # identical stream per point
        if estimator_id == "rb":
            return rb_eig(model, xi, n, fresh, bootstrap=bootstrap)
        if estimator_id == "nmc":
            m = m_inner or max(1, round(math.sqrt(n)))
            return nmc_eig(model, xi, NmcConfig(n, m), fresh)
        if estimator_id == "pce":
            return ace_bound(model, xi, None, n, m_inner or 16, fresh)
        raise ConfigError(f"unknown estimator id {estimator_id!r} for grid search")

    # scan without bootstrap noise costs, then price the winner properly
    rows = [(grid[i].copy(), evaluate(grid[i], 0)) for i in range(grid.shape[0])]
    values = np.array([est.value for _, est in rows])
    best = int(np.argmax(values))
    if estimator_id == "rb" and rb_bootstrap > 0:
        rows[best] = (rows[best][0], evaluate(rows[best][0], rb_bootstrap))
    return rows[best][0], rows


def opt_trace_csv(trace: Sequence[Tuple[int, np.ndarray, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    dim = len(trace[0][1]) if trace else 0
    writer.writerow(["step", *[f"xi{i}" for i in range(dim)], "bound_estimate"])
    for step, xi, value in trace:
        writer.writerow([step, *[f"{v:.17g}" for v in xi], f"{value:.17g}"])
    return buf.getvalue()
