"""Numpy implementations of the hot kernels; always available."""

from __future__ import annotations

import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def normal_logpdf_mat(y: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian log-density matrix log N(y_i; mu_ij, sigma).

    ``mu`` may be (n, m) with one mean per cell, or (m,) shared across rows.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim == 1:
        z = (y[:, None] - mu[None, :]) / sigma
    else:
        z = (y[:, None] - mu) / sigma
    return -_HALF_LOG_2PI - math.log(sigma) - 0.5 * z * z


def normal_logpdf_vec(y: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    """Elementwise Gaussian log-density log N(y_i; mu_i, sigma)."""
    z = (np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) / sigma
    return -_HALF_LOG_2PI - math.log(sigma) - 0.5 * z * z


def logmeanexp_2d(a: np.ndarray) -> np.ndarray:
    """Row-wise log(mean(exp(a))) with max-shift stabilization."""
    a = np.asarray(a, dtype=np.float64)
    hi = np.max(a, axis=1)
    with np.errstate(invalid="ignore"):
        shifted = np.exp(a - hi[:, None])
        out = hi + np.log(np.mean(shifted, axis=1))
    # rows that are entirely -inf stay -inf instead of nan
    dead = ~np.isfinite(hi)
    if np.any(dead):
        out[dead] = hi[dead]
    return out


def logmeanexp_1d(a: np.ndarray) -> float:
    return float(logmeanexp_2d(np.asarray(a, dtype=np.float64)[None, :])[0])


def systematic_resample(weights: np.ndarray, u: float) -> np.ndarray:
    """Systematic resampling indices for normalized ``weights``, u in [0, 1)."""
    w = np.asarray(weights, dtype=np.float64)
    p = w.shape[0]
    positions = (u + np.arange(p)) / p
    cumw = np.cumsum(w)
    cumw[-1] = 1.0  # guard against rounding in the final bin
    return np.searchsorted(cumw, positions, side="right").astype(np.int64)
