"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EiglabError(Exception):
    """Base class for all package errors."""


class ConfigError(EiglabError):
    """Invalid or inconsistent configuration (bad keys, bad ranges)."""


class InvalidDesignError(EiglabError):
    """A design violates the model's constraint or dimension."""


class CapabilityError(EiglabError):
    """An operation requires a model capability that is absent."""


class NumericError(EiglabError):
    """A non-finite intermediate was produced; carries the offending term."""

    def __init__(self, message: str, term=None):
        super().__init__(message)
        self.term = term


class DegenerateBeliefError(EiglabError):
    """Particle belief too degenerate for estimation; resample first."""


class ImpossibleOutcomeError(EiglabError):
    """An observed outcome has zero likelihood under every particle."""


class TrainingError(EiglabError):
    """Training diverged; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class OptimizationError(EiglabError):
    """Design optimization produced a non-finite iterate or gradient."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class PolicyError(EiglabError):
    """A policy emitted an invalid design during rollout or deployment."""
