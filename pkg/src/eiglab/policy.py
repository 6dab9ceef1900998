"""Amortized design policies.

A policy is a deterministic map from the experiment history to the next
design: each (design, outcome) step is encoded by a small tanh network,
the encodings are sum-pooled (exactly permutation invariant), and a head
network maps the pooled code through the model's constraint squash. The
policy is trained offline by ascending a sequential prior-contrastive
lower bound on the total EIG of whole rollouts, then deployed with one
forward pass per step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import kernels
from .bounds import sgd_step
from .core import Design, History, ModelSpec
from .errors import CapabilityError, ConfigError, PolicyError, TrainingError
from .estimators import EigEstimate, _estimate_from_terms
from .rng import RngStream

__all__ = [
    "PolicyNetwork",
    "RandomPolicy",
    "RolloutBatch",
    "rollout",
    "spce_total_bound",
    "PolicyTrainConfig",
    "train_policy",
    "save_policy",
    "load_policy",
    "GreedyPolicyAdapter",
]

ENC_WIDTH = 64
ENC_OUT = 32
HEAD_WIDTH = 64


def _glorot(gen, fan_in: int, fan_out: int) -> np.ndarray:
    return math.sqrt(2.0 / (fan_in + fan_out)) * gen.standard_normal((fan_in, fan_out))


class PolicyNetwork:
    """History-conditioned design network with sum-pooled step encodings."""

    deterministic = True

    def __init__(self, model: ModelSpec, rng: RngStream):
        self.model_id = model.model_id
        self.design_dim = model.design_dim
        self.constraint = model.constraint
        gen = rng.generator
        step_dim = self.design_dim + 1
        # small random biases keep the empty-history design away from the
        # squash center, where several test identities would degenerate
        self.params: List[np.ndarray] = [
            _glorot(gen, step_dim, ENC_WIDTH), 0.05 * gen.standard_normal(ENC_WIDTH),
            _glorot(gen, ENC_WIDTH, ENC_WIDTH), 0.05 * gen.standard_normal(ENC_WIDTH),
            _glorot(gen, ENC_WIDTH, ENC_OUT), 0.05 * gen.standard_normal(ENC_OUT),
            _glorot(gen, ENC_OUT, HEAD_WIDTH), 0.05 * gen.standard_normal(HEAD_WIDTH),
            _glorot(gen, HEAD_WIDTH, HEAD_WIDTH), 0.05 * gen.standard_normal(HEAD_WIDTH),
            0.05 * gen.standard_normal((HEAD_WIDTH, self.design_dim)),
            0.05 * gen.standard_normal(self.design_dim),
        ]

    # -- numpy forward --------------------------------------------------------

    def encode_batch(self, xis: np.ndarray, ys: np.ndarray) -> np.ndarray:
        we1, be1, we2, be2, we3, be3 = self.params[:6]
        inp = np.concatenate([np.atleast_2d(xis), np.asarray(ys).reshape(-1, 1)], axis=1)
        h = np.tanh(inp @ we1 + be1)
        h = np.tanh(h @ we2 + be2)
        return h @ we3 + be3

    def design_batch(self, pooled: np.ndarray, rng: Optional[RngStream] = None) -> np.ndarray:
        wh1, bh1, wh2, bh2, wh3, bh3 = self.params[6:]
        h = np.tanh(pooled @ wh1 + bh1)
        h = np.tanh(h @ wh2 + bh2)
        return self.constraint.squash(h @ wh3 + bh3)

    def deploy_step(self, history: History) -> Design:
        """One forward pass; exact permutation invariance via canonical
        ordering of the step encodings before pooling."""
        if len(history) == 0:
            pooled = np.zeros((1, ENC_OUT))
        else:
            enc = self.encode_batch(history.designs, history.raw_outcomes)
            order = np.lexsort(enc.T[::-1])
            pooled = np.sum(enc[order], axis=0, keepdims=True)
        return Design(self.design_batch(pooled)[0])

    # -- tape forward ----------------------------------------------------------

    def encode_t(self, xi_t: ad.Tensor, y_t: ad.Tensor, leaves: Sequence[ad.Tensor]) -> ad.Tensor:
        we1, be1, we2, be2, we3, be3 = leaves[:6]
        b = y_t.data.shape[0]
        inp = ad.concat([xi_t, ad.reshape(y_t, (b, 1))], axis=1)
        h = ad.tanh(ad.affine(inp, we1, be1))
        h = ad.tanh(ad.affine(h, we2, be2))
        return ad.affine(h, we3, be3)

    def design_t(self, pooled: ad.Tensor, leaves: Sequence[ad.Tensor]) -> ad.Tensor:
        wh1, bh1, wh2, bh2, wh3, bh3 = leaves[6:]
        h = ad.tanh(ad.affine(pooled, wh1, bh1))
        h = ad.tanh(ad.affine(h, wh2, bh2))
        return self.constraint.squash_t(ad.affine(h, wh3, bh3))


class RandomPolicy:
    """Uniform-in-constraint designs each step; the comparison baseline."""

    deterministic = False

    def __init__(self, model: ModelSpec):
        self.model_id = model.model_id
        self.design_dim = model.design_dim
        self.constraint = model.constraint

    def design_batch(self, pooled: np.ndarray, rng: Optional[RngStream] = None) -> np.ndarray:
        if rng is None:
            raise PolicyError("the random baseline needs a stream at rollout time")
        return np.stack([self.constraint.sample_point(rng.child("traj", i))
                         for i in range(pooled.shape[0])])

    def encode_batch(self, xis: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return np.zeros((np.atleast_2d(xis).shape[0], ENC_OUT))

    def deploy_step(self, history: History) -> Design:
        raise PolicyError("the random baseline is a rollout-only reference policy")


@dataclass
class RolloutBatch:
    """Trajectories simulated under one policy."""

    thetas: np.ndarray    # (B, theta_dim)
    designs: np.ndarray   # (B, T, design_dim)
    outcomes: np.ndarray  # (B, T) raw outcomes
    cum_loglik: Optional[np.ndarray] = None       # (B,) under the generating theta
    contrast_loglik: Optional[np.ndarray] = None  # (B, L) under contrast draws


def rollout(model: ModelSpec, policy, T: int, B: int, rng: RngStream) -> RolloutBatch:
    """Simulate B trajectories of T steps under the policy.

    Each trajectory's designs are produced by the policy applied to that
    trajectory's own growing history; outcomes come from the model at the
    generating latent. Reproducible given the stream.
    """
    if T < 1 or B < 1:
        raise ConfigError("rollout needs T >= 1 and B >= 1")
    stream = rng.child("outer")
    thetas = model.sample_prior_n(B, stream)
    designs = np.empty((B, T, model.design_dim))
    outcomes = np.empty((B, T))
    pooled = np.zeros((B, ENC_OUT))
    for t in range(T):
        if t == 0 and getattr(policy, "deterministic", True):
            # the empty history gives every trajectory the same first design;
            # computing it once keeps it bit-identical to deploy_step
            xis = np.tile(policy.design_batch(pooled[:1], rng.child("policy", t)), (B, 1))
        else:
            xis = policy.design_batch(pooled, rng.child("policy", t))
        if not np.all(np.isfinite(xis)):
            bad = np.argwhere(~np.isfinite(xis))[0]
            raise PolicyError(f"non-finite design at trajectory {bad[0]}, step {t}")
        ys = model.sample_outcomes_rowwise(thetas, xis, stream)
        designs[:, t, :] = xis
        outcomes[:, t] = ys
        if t + 1 < T:
            pooled = pooled + policy.encode_batch(xis, ys)
    return RolloutBatch(thetas, designs, outcomes)


def spce_total_bound(model: ModelSpec, policy, T: int, B: int, L: int,
                     rng: RngStream) -> EigEstimate:
    """Sequential prior-contrastive lower bound on the total EIG.

    Rolls out under the policy, then contrasts the whole-trajectory
    likelihood of the generating latent against L fresh prior draws along
    the same realized design sequence; every per-trajectory term is capped
    at log(L+1) and the cap is checked. Collapses to the static
    prior-contrastive bound at T=1 on shared streams.
    """
    if L < 1:
        raise ConfigError("spce needs at least one contrast draw")
    batch = rollout(model, policy, T, B, rng)
    contrasts = model.sample_prior_n(L, rng.child("inner"))
    cum0 = np.zeros(B)
    cross = np.zeros((B, L))
    for t in range(T):
        xis = batch.designs[:, t, :]
        ys = batch.outcomes[:, t]
        cum0 = cum0 + model.loglik_elementwise(ys, batch.thetas, xis)
        cross = cross + model.loglik_cross(ys, contrasts, xis)
    batch.cum_loglik = cum0
    batch.contrast_loglik = cross
    terms = cum0 - kernels.logmeanexp_2d(np.column_stack([cum0, cross]))
    cap = math.log(L + 1)
    if np.any(terms > cap + 1e-9):
        raise AssertionError(
            f"sequential contrastive term {float(np.max(terms)):.6g} exceeds its "
            f"log(L+1) cap {cap:.6g}"
        )
    return _estimate_from_terms(terms, B * T * (L + 1))


@dataclass(frozen=True)
class PolicyTrainConfig:
    batch: int = 128          # trajectories per gradient step
    contrasts: int = 31       # L during training; evaluate with far more
    steps: int = 800
    lr: float = 0.05
    grad_clip: float = 10.0   # global-norm cap; inverse-square signal models spike

    def __post_init__(self):
        if self.batch < 2 or self.contrasts < 1 or self.steps < 0:
            raise ConfigError("batch >= 2, contrasts >= 1 and steps >= 0 required")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")


def train_policy(model: ModelSpec, T: int, config: PolicyTrainConfig,
                 rng: RngStream) -> Tuple[PolicyNetwork, List[Tuple[int, float, float]]]:
    """Ascend the sequential contrastive bound through autoregressive rollouts.

    Outcome sampling is reparameterized, so the gradient flows through every
    design the policy emitted along each trajectory. Contrast draws are
    shared across the batch, cutting likelihood evaluations by the batch
    size. Returns the trained policy and the per-step bound trace.
    """
    if not getattr(model, "differentiable", False) or model.outcome_kind.is_finite:
        raise CapabilityError(
            f"policy training needs reparameterizable outcomes; {model.model_id} has none"
        )
    if T < 1:
        raise ConfigError("T must be at least 1")
    policy = PolicyNetwork(model, rng.child("init"))
    trace: List[Tuple[int, float, float]] = []
    cap = math.log(config.contrasts + 1)
    for step in range(config.steps):
        r = rng.child("step", step)
        thetas = model.sample_prior_n(config.batch, r.child("outer"))
        contrasts = model.sample_prior_n(config.contrasts, r.child("inner"))
        eps = r.child("noise").generator.standard_normal((config.batch, T))
        tape = ad.Tape()
        leaves = [tape.leaf(p) for p in policy.params]
        terms = _spce_terms_t(model, policy, leaves, thetas, contrasts, eps, T)
        value_t = ad.tmean(terms)
        if not math.isfinite(float(value_t.data)):
            raise TrainingError("sequential bound diverged", step)
        grads = ad.grad(value_t, leaves)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > config.grad_clip:
            grads = [g * (config.grad_clip / norm) for g in grads]
        sgd_step(policy.params, [-g for g in grads], config.lr)
        se = float(np.std(terms.data, ddof=1) / math.sqrt(config.batch))
        trace.append((step, float(value_t.data), se))
    return policy, trace


def _spce_terms_t(model: ModelSpec, policy: PolicyNetwork, leaves, thetas: np.ndarray,
                  contrasts: np.ndarray, eps: np.ndarray, T: int) -> ad.Tensor:
    b, l = thetas.shape[0], contrasts.shape[0]
    pooled = ad.Tensor(np.zeros((b, ENC_OUT)))
    cum0 = None
    cross = None
    for t in range(T):
        xi_t = policy.design_t(pooled, leaves)
        y_t = model.outcome_t(thetas, xi_t, eps[:, t])
        ll0 = model.ll_t(y_t, thetas, xi_t)
        llc = model.ll_cross_t(y_t, contrasts, xi_t)
        cum0 = ll0 if cum0 is None else ad.add(cum0, ll0)
        cross = llc if cross is None else ad.add(cross, llc)
        if t + 1 < T:
            pooled = ad.add(pooled, policy.encode_t(xi_t, y_t, leaves))
    mat = ad.concat([ad.reshape(cum0, (b, 1)), cross], axis=1)
    denom = ad.sub(ad.logsumexp(mat, axis=1), math.log(l + 1))
    return ad.sub(cum0, denom)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"EIGP"
_VERSION = 1


def save_policy(path: str, policy: PolicyNetwork, T: int) -> None:
    """Versioned binary checkpoint: magic, version, model id, horizon,
    layer shapes, then row-major float64 weights, all little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        mid = policy.model_id.encode("utf-8")
        fh.write(struct.pack("<I", len(mid)))
        fh.write(mid)
        fh.write(struct.pack("<I", T))
        fh.write(struct.pack("<I", len(policy.params)))
        for arr in policy.params:
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_policy(path: str, model: ModelSpec) -> Tuple[PolicyNetwork, int]:
    """Load a checkpoint and bind it to the model it was trained for."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path} is not a policy checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (mid_len,) = struct.unpack("<I", fh.read(4))
        model_id = fh.read(mid_len).decode("utf-8")
        if model_id != model.model_id:
            raise ConfigError(
                f"checkpoint was trained for model {model_id!r}, not {model.model_id!r}"
            )
        (horizon,) = struct.unpack("<I", fh.read(4))
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        params = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack("<" + "I" * ndim, fh.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            params.append(np.array(data, dtype=np.float64))
    policy = PolicyNetwork(model, RngStream(0))
    expected = [p.shape for p in policy.params]
    got = [p.shape for p in params]
    if expected != got:
        raise ConfigError(f"checkpoint layer shapes {got} do not match the model {expected}")
    policy.params = params
    return policy, horizon


class GreedyPolicyAdapter:
    """The traditional greedy loop behind the policy deployment interface.

    Each call rebuilds the belief implied by the history and maximizes the
    incremental EIG for the next design, so identical histories under the
    same seed produce identical designs.
    """

    def __init__(self, model: ModelSpec, seed: int, strategy: str = "greedy-grid",
                 grid_points: int = 121, est_n: int = 2000):
        if strategy not in ("greedy-grid", "greedy-sga"):
            raise ConfigError(f"greedy adapter strategy must be grid or sga, got {strategy!r}")
        self.model = model
        self.seed = int(seed)
        self.strategy = strategy
        self.grid_points = grid_points
        self.est_n = est_n
        self.model_id = model.model_id
        self.design_dim = model.design_dim

    def deploy_step(self, history: History) -> Design:
        from .bad_loop import SessionState, choose_design  # deferred: avoids an import cycle

        state = SessionState.from_history(
            self.model, history, RngStream(self.seed, 0), strategy=self.strategy,
            grid_points=self.grid_points, est_n=self.est_n,
        )
        design, _ = choose_design(state)
        return design
