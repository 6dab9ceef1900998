"""Greedy sequential adaptive design with a particle belief.

The loop alternates choosing the design that maximizes the incremental
EIG under the current belief, ingesting the outcome, and reweighting the
particles. Incremental estimation reuses the static estimators verbatim:
the belief stands in for the prior as a sampler, and since outcomes are
conditionally independent of the history given the latent, nothing else
changes. A belief that has seen no data delegates sampling straight to the
prior, so the empty-history case reproduces the static estimators exactly.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .core import Design, History, ModelSpec, Outcome
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateBeliefError,
    ImpossibleOutcomeError,
)
from .estimators import EigEstimate, NmcConfig, nmc_eig, rb_eig
from .bounds import ace_bound
from .rng import RngStream

__all__ = [
    "ParticleBelief",
    "SessionState",
    "incremental_eig",
    "choose_design",
    "update_belief",
    "run_sequential",
    "StepRecord",
    "Transcript",
]

STRATEGIES = ("greedy-grid", "greedy-sga", "policy")


@dataclass
class ParticleBelief:
    """Weighted latent particles; weights kept normalized in log space."""

    particles: np.ndarray    # (P, theta_dim)
    log_weights: np.ndarray  # logsumexp == 0
    is_prior: bool = False   # still exactly the prior: delegate sampling to it

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=np.float64))
        lw = np.asarray(self.log_weights, dtype=np.float64).reshape(-1)
        if lw.shape[0] != self.particles.shape[0]:
            raise ConfigError("one log-weight per particle required")
        norm = kernels.logmeanexp_1d(lw) + math.log(lw.size)
        if not math.isfinite(norm):
            raise ImpossibleOutcomeError("all particle weights vanished")
        self.log_weights = lw - norm

    @staticmethod
    def from_prior(model: ModelSpec, n_particles: int, rng: RngStream) -> "ParticleBelief":
        particles = model.sample_prior_n(n_particles, rng)
        lw = np.full(n_particles, -math.log(n_particles))
        return ParticleBelief(particles, lw, is_prior=True)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def std(self) -> np.ndarray:
        mu = self.mean()
        var = self.weights @ (self.particles - mu) ** 2
        return np.sqrt(var)

    def mean_std_error(self) -> np.ndarray:
        """Monte Carlo standard error of the weighted mean, per dimension."""
        mu = self.mean()
        return np.sqrt(np.sum((self.weights[:, None] * (self.particles - mu)) ** 2, axis=0))

    def sample_n(self, n: int, rng: RngStream, model: Optional[ModelSpec] = None) -> np.ndarray:
        if self.is_prior and model is not None:
            return model.sample_prior_n(n, rng)
        cumw = np.cumsum(self.weights)
        cumw[-1] = 1.0
        idx = np.searchsorted(cumw, rng.generator.random(n), side="right")
        return self.particles[idx]

    def updated(self, model: ModelSpec, xi: np.ndarray, y_raw: float, rng: RngStream,
                resample_fraction: float = 0.5, jitter_scale: float = 0.5) -> "ParticleBelief":
        """Reweight by the likelihood; resample-and-jitter when degenerate."""
        loglik = model.loglik_pairs(np.array([y_raw]), self.particles, xi)[0]
        lw = self.log_weights + loglik
        if not np.any(np.isfinite(lw)):
            raise ImpossibleOutcomeError(
                f"outcome {y_raw!r} has zero likelihood under every particle"
            )
        belief = ParticleBelief(self.particles, lw, is_prior=False)
        if belief.ess < resample_fraction * belief.n_particles:
            bandwidth = jitter_scale * belief.std()
            gen = rng.generator
            idx = kernels.systematic_resample(belief.weights, float(gen.random()))
            jitter = gen.standard_normal(belief.particles.shape) * bandwidth
            particles = belief.particles[idx] + jitter
            lw = np.full(belief.n_particles, -math.log(belief.n_particles))
            belief = ParticleBelief(particles, lw, is_prior=False)
        return belief


class _BeliefModel:
    """The wrapped model with its prior replaced by a particle belief.

    Sampling draws particles by weight (or delegates to the true prior when
    the belief has seen no data); the prior density is unavailable, which
    restricts belief-conditioned estimation to the density-free estimators.
    """

    def __init__(self, model: ModelSpec, belief: ParticleBelief):
        self._model = model
        self._belief = belief

    def sample_prior_n(self, n: int, rng: RngStream) -> np.ndarray:
        return self._belief.sample_n(n, rng, self._model)

    def log_prior_n(self, thetas: np.ndarray) -> np.ndarray:
        if self._belief.is_prior:
            return self._model.log_prior_n(thetas)
        raise CapabilityError("a particle belief has no tractable density")

    def __getattr__(self, name):
        return getattr(self._model, name)


@dataclass
class SessionState:
    """One adaptive experiment session; single-owner, mutated serially."""

    model: ModelSpec
    belief: ParticleBelief
    history: History
    t: int
    strategy: str
    rng: RngStream
    policy: Optional[object] = None
    n_particles: int = 2**14
    grid_points: int = 121
    est_n: int = 1024
    est_m: int = 64
    ess_floor: float = 16.0

    @staticmethod
    def new(model: ModelSpec, rng: RngStream, strategy: str = "greedy-grid",
            policy: Optional[object] = None, n_particles: int = 2**14,
            **knobs) -> "SessionState":
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        if strategy == "policy" and policy is None:
            raise ConfigError("the policy strategy needs a loaded policy")
        belief = ParticleBelief.from_prior(model, n_particles, rng.child("belief"))
        return SessionState(model, belief, History(), 0, strategy, rng, policy,
                            n_particles, **knobs)

    @staticmethod
    def from_history(model: ModelSpec, history: History, rng: RngStream,
                     strategy: str = "greedy-grid", n_particles: int = 2**14,
                     **knobs) -> "SessionState":
        """Rebuild a session by replaying a history from the prior."""
        state = SessionState.new(model, rng, strategy, n_particles=n_particles, **knobs)
        for design, outcome in history:
            state = update_belief(state, design, outcome)
        return state

    def belief_model(self) -> _BeliefModel:
        return _BeliefModel(self.model, self.belief)


def incremental_eig(state: SessionState, xi, rng: RngStream,
                    estimator_id: Optional[str] = None, n: Optional[int] = None,
                    m: Optional[int] = None) -> EigEstimate:
    """A static estimator evaluated with the prior swapped for the belief.

    Outcomes are conditionally independent of the history given the latent,
    so only the latent source changes. With an empty history this is the
    static estimator on the same streams, exactly.
    """
    if state.belief.ess < state.ess_floor:
        raise DegenerateBeliefError(
            f"belief ess {state.belief.ess:.1f} below floor {state.ess_floor}; "
            f"resample or rejuvenate before estimating"
        )
    model = state.belief_model()
    n = n or state.est_n
    if estimator_id is None:
        estimator_id = "rb" if state.model.outcome_kind.is_finite else "nmc"
    if estimator_id == "rb":
        return rb_eig(model, xi, n, rng)
    if estimator_id == "nmc":
        return nmc_eig(model, xi, NmcConfig(n, m or state.est_m), rng)
    if estimator_id == "pce":
        return ace_bound(model, xi, None, n, m or state.est_m, rng)
    raise ConfigError(
        f"estimator {estimator_id!r} cannot run against a particle belief; "
        f"use rb, nmc, or pce"
    )


def choose_design(state: SessionState) -> Tuple[Design, Optional[EigEstimate]]:
    """Next design per the session strategy; deterministic given the seed."""
    rng = state.rng.child("design", state.t)
    if state.strategy == "policy":
        return state.policy.deploy_step(state.history), None
    if state.strategy == "greedy-grid":
        if state.model.design_dim > 2:
            raise CapabilityError("grid strategy supports design dimension <= 2")
        from .design_opt import grid_search

        if state.model.outcome_kind.is_finite:
            grid = state.model.constraint.grid(state.grid_points)
            best, rows = grid_search(state.belief_model(), "rb", grid, state.est_n, rng)
            est = next(e for x, e in rows if np.array_equal(x, best))
            return Design(best), est
        # continuous outcomes: scan the grid cheaply on common random
        # numbers, then re-price only the winner at full quality
        points = state.grid_points if state.model.design_dim == 1 else 11
        grid = state.model.constraint.grid(points)
        scan_n = min(256, state.est_n)
        best, _ = grid_search(state.belief_model(), "pce", grid, scan_n, rng, m_inner=32)
        est = incremental_eig(state, best, rng.child("refine"), "pce",
                              n=state.est_n, m=state.est_m)
        return Design(best), est
    # greedy-sga
    from .design_opt import OptConfig, sga_optimize

    result = sga_optimize(
        state.belief_model(),
        OptConfig(objective="pce", m_contrastive=16, steps=120, restarts=2,
                  batch_size=48, lr_design=0.08, eval_n=512, eval_m=255),
        rng,
    )
    return Design(result.design), result.final


def update_belief(state: SessionState, design: Design, outcome: Outcome) -> SessionState:
    """Ingest one observed outcome: reweight, maybe rejuvenate, extend history."""
    state.model.validate_outcome(outcome)
    xi = design.values if isinstance(design, Design) else np.asarray(design, dtype=np.float64)
    belief = state.belief.updated(
        state.model, xi, outcome.raw(), state.rng.child("rejuvenate", state.t)
    )
    if not (1.0 - 1e-9 <= belief.ess <= belief.n_particles * (1 + 1e-9)):
        raise AssertionError(f"ess {belief.ess} left [1, P]")
    state.belief = belief
    state.history = state.history.extended(
        design if isinstance(design, Design) else Design(xi), outcome
    )
    state.t += 1
    return state


@dataclass
class StepRecord:
    t: int
    xi: List[float]
    y: float
    eig_estimate: float
    eig_std_error: float
    belief_mean: List[float]
    belief_std: List[float]
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "xi": self.xi,
            "y": self.y,
            "eig_estimate": self.eig_estimate,
            "eig_std_error": self.eig_std_error,
            "belief_mean": self.belief_mean,
            "belief_std": self.belief_std,
            "wall_ms": self.wall_ms,
        }


@dataclass
class Transcript:
    steps: List[StepRecord]
    theta_star: Optional[List[float]] = None

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.steps], indent=2)


def run_sequential(model: ModelSpec, T: int, strategy: str, rng: RngStream,
                   theta_star: Optional[np.ndarray] = None,
                   policy: Optional[object] = None, n_particles: int = 2**14,
                   **knobs) -> Tuple[Transcript, SessionState]:
    """Run the full loop against a hidden truth, recording each step.

    The truth is drawn from the prior unless supplied. Per-step wall time
    is recorded so strategy latency comparisons come for free.
    """
    if T < 1:
        raise ConfigError("T must be at least 1")
    if theta_star is None:
        theta_star = model.sample_prior_n(1, rng.child("truth"))[0]
    theta_star = np.asarray(theta_star, dtype=np.float64).reshape(1, -1)
    state = SessionState.new(model, rng.child("session"), strategy, policy,
                             n_particles, **knobs)
    records: List[StepRecord] = []
    for t in range(T):
        start = time.perf_counter()
        design, est = choose_design(state)
        if est is None:
            est = incremental_eig(state, design.values, state.rng.child("est", t))
        y_raw = model.sample_outcomes_n(theta_star, design.values, rng.child("outcome", t))[0]
        outcome = model.raw_to_outcome(y_raw)
        state = update_belief(state, design, outcome)
        wall_ms = 1000.0 * (time.perf_counter() - start)
        records.append(
            StepRecord(
                t=t + 1,
                xi=[float(v) for v in design.values],
                y=float(y_raw),
                eig_estimate=est.value,
                eig_std_error=est.std_error,
                belief_mean=[float(v) for v in state.belief.mean()],
                belief_std=[float(v) for v in state.belief.std()],
                wall_ms=wall_ms,
            )
        )
    return Transcript(records, [float(v) for v in theta_star[0]]), state
