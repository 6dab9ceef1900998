"""Command-line entry point.

Every run writes a ``run_summary.json`` next to its artifacts containing
the full configuration, a content hash of it, and the headline results, so
any artifact can be reproduced from its summary alone. Exit codes: 0 on
success, 2 for configuration problems, 3 for numeric failures.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from .bad_loop import run_sequential
from .bounds import BoundConfig, ace_bound, ba_bound, marginal_bound, trace_csv, train_variational, vnmc_bound
from .design_opt import OptConfig, opt_trace_csv, sga_optimize
from .errors import CapabilityError, ConfigError, EiglabError, InvalidDesignError
from .estimators import MlmcConfig, NmcConfig, convergence_study, mlmc_eig, nmc_eig, rb_eig, resolve_threads
from .models import build_model, model_catalog
from .policy import PolicyTrainConfig, load_policy, save_policy, train_policy
from .rng import RngStream

ESTIMATORS = ("nmc", "rb", "mlmc", "pce", "marginal", "ba", "vnmc", "ace")


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise ConfigError(f"could not parse vector {text!r}: {exc}") from exc


def _parse_params(text: str) -> dict:
    try:
        params = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}") from exc
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    return params


def _content_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_summary(out: str, command: str, config: dict, results: dict, artifacts: list) -> None:
    summary = {
        "command": command,
        "config": config,
        "content_hash": _content_hash(config),
        "results": results,
        "artifacts": artifacts,
    }
    path = Path(out) / "run_summary.json"
    path.write_text(json.dumps(summary, indent=2))
    click.echo(json.dumps(results))


def _run_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, CapabilityError, InvalidDesignError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except EiglabError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _ensure_out(out: str) -> str:
    Path(out).mkdir(parents=True, exist_ok=True)
    return out


@click.group()
def main():
    """Expected-information-gain estimation and adaptive design tools."""


@main.command()
@click.option("--model", "model_id", required=True, help="model id (see `models`)")
@click.option("--params", default="{}", help="JSON parameter object for the model")
@click.option("--xi", required=True, help="design vector, comma-separated")
@click.option("--estimator", type=click.Choice(ESTIMATORS), default="nmc")
@click.option("--n", default=1000, show_default=True, help="outer samples / prior draws")
@click.option("--m", default=64, show_default=True, help="inner / contrastive samples")
@click.option("--m0", default=4, show_default=True, help="multilevel base inner count")
@click.option("--tau", default=1.5, show_default=True, help="multilevel level exponent")
@click.option("--r", "replicates", default=10000, show_default=True, help="multilevel replicates")
@click.option("--lmax", default=12, show_default=True, help="multilevel level cap")
@click.option("--train-steps", default=2000, show_default=True, help="bound training steps")
@click.option("--seed", required=True, type=int)
@click.option("--out", default=".", show_default=True)
@click.option("--threads", default=None, type=int, help="worker cap (EIGLAB_THREADS fallback)")
@_run_guard
def estimate(model_id, params, xi, estimator, n, m, m0, tau, replicates, lmax,
             train_steps, seed, out, threads):
    """Point-estimate the EIG of one design."""
    out = _ensure_out(out)
    model = build_model(model_id, _parse_params(params))
    design = _parse_vector(xi)
    rng = RngStream(seed)
    artifacts = []
    if estimator == "nmc":
        est = nmc_eig(model, design, NmcConfig(n, m), rng)
    elif estimator == "rb":
        est = rb_eig(model, design, n, rng)
    elif estimator == "mlmc":
        cfg = MlmcConfig(m0=m0, tau=tau, level_cap=lmax, replicates=replicates)
        est = mlmc_eig(model, design, cfg, rng, threads=resolve_threads(threads))
    elif estimator == "pce":
        est = ace_bound(model, design, None, n, m, rng)
    else:
        result = train_variational(model, design, BoundConfig(estimator, m_contrastive=m,
                                                              steps=train_steps), rng.child("train"))
        trace_path = Path(out) / "bound_trace.csv"
        trace_path.write_text(trace_csv(result.trace))
        artifacts.append(trace_path.name)
        eval_rng = rng.child("eval")
        if estimator == "marginal":
            est = marginal_bound(model, design, result.approx, n, eval_rng)
        elif estimator == "ba":
            est = ba_bound(model, design, result.approx, n, eval_rng)
        elif estimator == "vnmc":
            est = vnmc_bound(model, design, result.approx, n, m, eval_rng)
        else:
            est = ace_bound(model, design, result.approx, n, m, eval_rng)
    config = {"model": model_id, "params": _parse_params(params), "xi": list(design),
              "estimator": estimator, "n": n, "m": m, "m0": m0, "tau": tau,
              "replicates": replicates, "lmax": lmax, "train_steps": train_steps,
              "seed": seed}
    _write_summary(out, "estimate", config, est.to_dict(), artifacts)


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--params", default="{}")
@click.option("--xi", required=True, help="design under study")
@click.option("--estimator", type=click.Choice(["nmc", "mlmc", "rb"]), required=True)
@click.option("--pairing", type=click.Choice(["sqrt"]), default="sqrt", show_default=True)
@click.option("--costs", default="256,1024,4096,16384,65536", show_default=True)
@click.option("--replicates", default=100, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", default=".", show_default=True)
@click.option("--threads", default=None, type=int)
@_run_guard
def study(model_id, params, xi, estimator, pairing, costs, replicates, seed, out, threads):
    """Empirical cost-versus-MSE table against the model's EIG oracle."""
    out = _ensure_out(out)
    model = build_model(model_id, _parse_params(params))
    design = _parse_vector(xi)
    cost_grid = [int(c) for c in _parse_vector(costs)]
    result = convergence_study(estimator, model, design, cost_grid, replicates,
                               RngStream(seed), pairing=pairing,
                               threads=resolve_threads(threads))
    csv_path = Path(out) / "study.csv"
    result.write_csv(str(csv_path))
    config = {"model": model_id, "params": _parse_params(params), "xi": list(design),
              "estimator": estimator, "pairing": pairing, "costs": cost_grid,
              "replicates": replicates, "seed": seed}
    _write_summary(out, "study", config,
                   {"slope": result.slope, "rows": [list(r) for r in result.rows]},
                   [csv_path.name])


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--params", default="{}")
@click.option("--objective", type=click.Choice(["pce", "ace", "ba"]), default="pce", show_default=True)
@click.option("--steps", default=300, show_default=True)
@click.option("--restarts", default=8, show_default=True)
@click.option("--batch", default=64, show_default=True)
@click.option("--m", default=16, show_default=True)
@click.option("--lr-xi", default=0.05, show_default=True)
@click.option("--lr-q", default=0.01, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", default=".", show_default=True)
@_run_guard
def optimize(model_id, params, objective, steps, restarts, batch, m, lr_xi, lr_q, seed, out):
    """Stochastic-gradient design optimization from random restarts."""
    out = _ensure_out(out)
    model = build_model(model_id, _parse_params(params))
    config = OptConfig(objective=objective, m_contrastive=m, steps=steps,
                       lr_design=lr_xi, lr_q=lr_q, batch_size=batch, restarts=restarts)
    result = sga_optimize(model, config, RngStream(seed))
    trace_path = Path(out) / "opt_trace.csv"
    trace_path.write_text(opt_trace_csv(result.trace))
    cfg = {"model": model_id, "params": _parse_params(params), "objective": objective,
           "steps": steps, "restarts": restarts, "batch": batch, "m": m,
           "lr_xi": lr_xi, "lr_q": lr_q, "seed": seed}
    _write_summary(out, "optimize", cfg,
                   {"xi_star": [float(v) for v in result.design],
                    "bound": result.final.to_dict(), "restart": result.restart},
                   [trace_path.name])


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--params", default="{}")
@click.option("--strategy", type=click.Choice(["greedy-grid", "greedy-sga", "policy"]),
              default="greedy-grid", show_default=True)
@click.option("--t", "horizon", default=4, show_default=True)
@click.option("--checkpoint", default=None, help="policy checkpoint for the policy strategy")
@click.option("--theta-star", default=None, help="hidden truth; drawn from the prior if omitted")
@click.option("--particles", default=2**14, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", default=".", show_default=True)
@_run_guard
def sequential(model_id, params, strategy, horizon, checkpoint, theta_star, particles, seed, out):
    """Run the adaptive loop against a simulated truth; emit the transcript."""
    out = _ensure_out(out)
    model = build_model(model_id, _parse_params(params))
    policy = None
    if strategy == "policy":
        if checkpoint is None:
            raise ConfigError("the policy strategy requires --checkpoint")
        policy, _ = load_policy(checkpoint, model)
    truth = _parse_vector(theta_star) if theta_star else None
    transcript, _ = run_sequential(model, horizon, strategy, RngStream(seed),
                                   theta_star=truth, policy=policy, n_particles=particles)
    path = Path(out) / "transcript.json"
    path.write_text(transcript.to_json())
    cfg = {"model": model_id, "params": _parse_params(params), "strategy": strategy,
           "T": horizon, "checkpoint": checkpoint, "theta_star": theta_star,
           "particles": particles, "seed": seed}
    _write_summary(out, "sequential", cfg,
                   {"steps": len(transcript.steps),
                    "final_belief_mean": transcript.steps[-1].belief_mean,
                    "final_belief_std": transcript.steps[-1].belief_std},
                   [path.name])


@main.command("train-policy")
@click.option("--model", "model_id", required=True)
@click.option("--params", default="{}")
@click.option("--t", "horizon", default=5, show_default=True)
@click.option("--b", "batch", default=128, show_default=True)
@click.option("--l", "contrasts", default=31, show_default=True)
@click.option("--steps", default=800, show_default=True)
@click.option("--lr", default=0.03, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", default=".", show_default=True)
@_run_guard
def train_policy_cmd(model_id, params, horizon, batch, contrasts, steps, lr, seed, out):
    """Train an amortized design policy and write its checkpoint."""
    out = _ensure_out(out)
    model = build_model(model_id, _parse_params(params))
    config = PolicyTrainConfig(batch=batch, contrasts=contrasts, steps=steps, lr=lr)
    policy, trace = train_policy(model, horizon, config, RngStream(seed))
    ckpt = Path(out) / "policy.eigp"
    save_policy(str(ckpt), policy, horizon)
    trace_path = Path(out) / "policy_trace.csv"
    trace_path.write_text(trace_csv(trace))
    cfg = {"model": model_id, "params": _parse_params(params), "T": horizon, "B": batch,
           "L": contrasts, "steps": steps, "lr": lr, "seed": seed}
    final = trace[-1][1] if trace else None
    _write_summary(out, "train-policy", cfg,
                   {"checkpoint": ckpt.name, "final_bound_estimate": final},
                   [ckpt.name, trace_path.name])


@main.command()
@click.option("--bind", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--out", default=None, help="directory for finished-session snapshots")
@_run_guard
def serve(bind, port, out):
    """Serve live adaptive-experiment sessions over HTTP."""
    import uvicorn

    from .service import create_app

    if out is not None:
        _ensure_out(out)
    uvicorn.run(create_app(snapshot_dir=out), host=bind, port=port, log_level="warning")


@main.command()
@_run_guard
def models():
    """List bundled models and their parameter schemas."""
    click.echo(json.dumps(model_catalog(), indent=2))


if __name__ == "__main__":
    main()
