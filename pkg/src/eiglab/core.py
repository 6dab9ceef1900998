"""Domain types and the model contract every estimator consumes.

A model couples a prior over a latent vector with an outcome simulator and
its density. Estimators only ever touch models through this contract, so
new models plug in without touching estimation code. All densities are
handled in log space; probabilities are exponentiated only at output
boundaries.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import CapabilityError, InvalidDesignError, NumericError
from .rng import RngStream

__all__ = [
    "Design",
    "LatentSample",
    "Outcome",
    "History",
    "OutcomeKind",
    "ModelSpec",
    "sample_joint",
    "log_joint",
]


def _as_finite_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class Design:
    """A controllable experiment setting: a finite real vector."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_finite_vector(self.values, "design"))

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class LatentSample:
    """One draw of the quantity information is being gathered about."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_finite_vector(self.values, "latent"))

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Outcome:
    """An observed outcome: either a real vector or a finite-set index."""

    continuous: Optional[np.ndarray] = None
    discrete: Optional[int] = None

    def __post_init__(self):
        if (self.continuous is None) == (self.discrete is None):
            raise ValueError("exactly one of continuous/discrete must be set")
        if self.continuous is not None:
            object.__setattr__(
                self, "continuous", _as_finite_vector(self.continuous, "outcome")
            )
        else:
            idx = int(self.discrete)
            if idx < 0:
                raise ValueError(f"discrete outcome index must be >= 0, got {idx}")
            object.__setattr__(self, "discrete", idx)

    @property
    def is_discrete(self) -> bool:
        return self.discrete is not None

    def raw(self) -> float:
        """Scalar wire value: the single continuous entry or the index."""
        if self.is_discrete:
            return float(self.discrete)
        if self.continuous.size != 1:
            raise ValueError("raw() only defined for scalar outcomes")
        return float(self.continuous[0])


@dataclass(frozen=True)
class History:
    """Ordered (design, outcome) pairs; the empty history is permitted."""

    steps: Tuple[Tuple[Design, Outcome], ...] = ()

    def __post_init__(self):
        dims = {d.dim for d, _ in self.steps}
        if len(dims) > 1:
            raise ValueError(f"history designs disagree on dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def extended(self, design: Design, outcome: Outcome) -> "History":
        return History(self.steps + ((design, outcome),))

    @property
    def designs(self) -> np.ndarray:
        return np.array([d.values for d, _ in self.steps], dtype=np.float64)

    @property
    def raw_outcomes(self) -> np.ndarray:
        return np.array([y.raw() for _, y in self.steps], dtype=np.float64)


@dataclass(frozen=True)
class OutcomeKind:
    """Outcome space descriptor: continuous vectors or a finite set."""

    kind: str  # "continuous" | "finite"
    size: int  # outcome dimension, or |Y| for finite

    @staticmethod
    def continuous(dim: int = 1) -> "OutcomeKind":
        return OutcomeKind("continuous", dim)

    @staticmethod
    def finite(n: int) -> "OutcomeKind":
        return OutcomeKind("finite", n)

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"


class ModelSpec(ABC):
    """Contract between models and everything downstream.

    Scalar methods (`sample_prior`, `log_prior`, `sample_outcome`,
    `log_likelihood`, `likelihood_table`) define the model. The batched
    methods have generic loop implementations here; bundled models override
    them with vectorized versions since estimation cost is dominated by
    likelihood evaluations. Raw outcome arrays are float64 vectors holding
    either the scalar outcome value or the finite-set index.

    Implementations must be immutable after construction and safe for
    concurrent read-only use.
    """

    model_id: str = "model"
    theta_dim: int
    design_dim: int
    outcome_kind: OutcomeKind
    has_closed_form_eig: bool = False
    has_closed_form_posterior: bool = False

    # -- scalar contract ----------------------------------------------------

    def sample_prior(self, rng: RngStream) -> LatentSample:
        return LatentSample(self.sample_prior_n(1, rng)[0])

    def log_prior(self, theta) -> float:
        arr = theta.values if isinstance(theta, LatentSample) else np.asarray(theta)
        return float(self.log_prior_n(arr.reshape(1, -1))[0])

    def sample_outcome(self, theta, xi, rng: RngStream) -> Outcome:
        t = theta.values if isinstance(theta, LatentSample) else np.asarray(theta)
        x = xi.values if isinstance(xi, Design) else np.asarray(xi)
        self.validate_design(x)
        raw = self.sample_outcomes_n(t.reshape(1, -1), x, rng)[0]
        return self.raw_to_outcome(raw)

    def log_likelihood(self, y, theta, xi) -> float:
        raw = y.raw() if isinstance(y, Outcome) else float(y)
        t = theta.values if isinstance(theta, LatentSample) else np.asarray(theta)
        x = xi.values if isinstance(xi, Design) else np.asarray(xi)
        return float(
            self.loglik_pairs(np.array([raw]), t.reshape(1, -1), x)[0, 0]
        )

    def likelihood_table(self, theta, xi) -> np.ndarray:
        """Probability vector over the finite outcome set; finite models only."""
        if not self.outcome_kind.is_finite:
            raise CapabilityError(
                f"{self.model_id}: likelihood_table requires a finite outcome set"
            )
        t = theta.values if isinstance(theta, LatentSample) else np.asarray(theta)
        x = xi.values if isinstance(xi, Design) else np.asarray(xi)
        return self.likelihood_table_n(t.reshape(1, -1), x)[0]

    # -- batched contract ---------------------------------------------------

    @abstractmethod
    def sample_prior_n(self, n: int, rng: RngStream) -> np.ndarray:
        """Draw ``n`` latent vectors, shape (n, theta_dim)."""

    @abstractmethod
    def log_prior_n(self, thetas: np.ndarray) -> np.ndarray:
        """Prior log-density of each row of ``thetas``."""

    @abstractmethod
    def sample_outcomes_n(self, thetas: np.ndarray, xi: np.ndarray, rng: RngStream) -> np.ndarray:
        """One raw outcome per latent row, all at design ``xi``."""

    def sample_outcomes_rowwise(self, thetas: np.ndarray, xis: np.ndarray, rng: RngStream) -> np.ndarray:
        """One raw outcome per (latent row, design row) pair."""
        out = np.empty(thetas.shape[0])
        for i in range(thetas.shape[0]):
            out[i] = self.sample_outcomes_n(thetas[i : i + 1], xis[i], rng)[0]
        return out

    @abstractmethod
    def loglik_pairs(self, ys: np.ndarray, thetas: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """log p(y_i | theta_j, xi) for all pairs, shape (len(ys), len(thetas))."""

    def loglik_rowwise(self, ys: np.ndarray, thetas: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """log p(y_i | theta_ij, xi) with per-row latents, thetas (n, m, theta_dim)."""
        n, m = thetas.shape[0], thetas.shape[1]
        out = np.empty((n, m))
        for i in range(n):
            out[i] = self.loglik_pairs(ys[i : i + 1], thetas[i], xi)[0]
        return out

    def loglik_cross(self, ys: np.ndarray, thetas: np.ndarray, xis: np.ndarray) -> np.ndarray:
        """log p(y_i | theta_j, xi_i) with a per-observation design row."""
        out = np.empty((ys.shape[0], thetas.shape[0]))
        for i in range(ys.shape[0]):
            out[i] = self.loglik_pairs(ys[i : i + 1], thetas, xis[i])[0]
        return out

    def loglik_elementwise(self, ys: np.ndarray, thetas: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """log p(y_i | theta_i, xi), matching rows of ``ys`` and ``thetas``."""
        out = np.empty(ys.shape[0])
        for i in range(ys.shape[0]):
            out[i] = self.loglik_pairs(ys[i : i + 1], thetas[i : i + 1], xi)[0, 0]
        return out

    def likelihood_table_n(self, thetas: np.ndarray, xi: np.ndarray) -> np.ndarray:
        raise CapabilityError(
            f"{self.model_id}: likelihood_table requires a finite outcome set"
        )

    # -- designs and outcomes -----------------------------------------------

    @abstractmethod
    def validate_design(self, xi: np.ndarray) -> None:
        """Raise InvalidDesignError unless ``xi`` satisfies the constraint."""

    def raw_to_outcome(self, raw: float) -> Outcome:
        if self.outcome_kind.is_finite:
            return Outcome(discrete=int(raw))
        return Outcome(continuous=np.array([raw]))

    def validate_outcome(self, y: Outcome) -> None:
        if self.outcome_kind.is_finite:
            if not y.is_discrete or y.discrete >= self.outcome_kind.size:
                raise InvalidDesignError(
                    f"outcome {y} outside the model's finite outcome set "
                    f"of size {self.outcome_kind.size}"
                )
        elif y.is_discrete:
            raise InvalidDesignError(f"{self.model_id} has continuous outcomes")


def sample_joint(model: ModelSpec, xi: Design, rng: RngStream) -> Tuple[LatentSample, Outcome]:
    """Draw (theta, y) from prior times likelihood at design ``xi``."""
    x = xi.values if isinstance(xi, Design) else np.asarray(xi, dtype=np.float64)
    model.validate_design(x)
    theta = model.sample_prior_n(1, rng)[0]
    raw = model.sample_outcomes_n(theta.reshape(1, -1), x, rng)[0]
    return LatentSample(theta), model.raw_to_outcome(raw)


def log_joint(model: ModelSpec, theta, y, xi) -> float:
    """log p(theta) + log p(y | theta, xi), with non-finite terms rejected."""
    lp = model.log_prior(theta)
    if not np.isfinite(lp):
        raise NumericError(f"non-finite log_prior: {lp}", term="log_prior")
    ll = model.log_likelihood(y, theta, xi)
    if not np.isfinite(ll):
        raise NumericError(f"non-finite log_likelihood: {ll}", term="log_likelihood")
    return lp + ll
