"""HTTP session service for live adaptive experiments.

A thin JSON-over-HTTP layer around the sequential loop: create a session,
receive a proposed design, report the outcome you observed, repeat. State
lives in process memory only; a finished session can optionally be
snapshotted to disk. Each session is guarded by a non-blocking lock so
concurrent outcome posts cannot interleave: exactly one wins, the loser
gets a conflict response.
"""

from __future__ import annotations

import math
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .bad_loop import SessionState, StepRecord, choose_design, incremental_eig, update_belief
from .core import Design, Outcome
from .errors import ConfigError, EiglabError, InvalidDesignError
from .estimators import EigEstimate
from .models import MODEL_IDS, build_model, model_catalog
from .policy import load_policy
from .rng import RngStream

__all__ = ["create_app"]


class CreateSessionRequest(BaseModel):
    model: str
    params: dict = Field(default_factory=dict)
    strategy: str = "greedy-grid"
    T: int = 4
    seed: int
    checkpoint: Optional[str] = None
    particles: int = 2**14

    model_config = {"extra": "forbid", "protected_namespaces": ()}


class OutcomeRequest(BaseModel):
    outcome: float

    model_config = {"extra": "forbid"}


@dataclass
class _Session:
    sid: str
    state: SessionState
    horizon: int
    status: str  # awaiting_outcome | finished
    proposed: Design
    proposed_estimate: EigEstimate
    records: List[StepRecord] = field(default_factory=list)
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def belief_summary(self) -> dict:
        return {
            "mean": [float(v) for v in self.state.belief.mean()],
            "std": [float(v) for v in self.state.belief.std()],
        }

    def view(self, with_transcript: bool = False) -> dict:
        body = {
            "session_id": self.sid,
            "status": self.status,
            "step": self.state.t,
            "T": self.horizon,
            "model": self.state.model.model_id,
            "strategy": self.state.strategy,
            "proposed_design": (
                [float(v) for v in self.proposed.values] if self.status == "awaiting_outcome" else None
            ),
            "eig_estimate": (
                {"value": self.proposed_estimate.value, "std_error": self.proposed_estimate.std_error}
                if self.status == "awaiting_outcome"
                else None
            ),
            "belief": self.belief_summary(),
        }
        if with_transcript:
            body["transcript"] = [r.to_dict() for r in self.records]
        return body


def _propose(session: _Session) -> None:
    state = session.state
    design, est = choose_design(state)
    if est is None:
        est = incremental_eig(state, design.values, state.rng.child("est", state.t))
    session.proposed = design
    session.proposed_estimate = est


def create_app(snapshot_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="eiglab sessions", version="1")
    # the browser console is served from its own origin; the service binds
    # to loopback by default, so open CORS is the deliberate trade here
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    store: dict = {}
    app.state.store = store

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(EiglabError)
    def _eiglab_error(request: Request, exc: EiglabError):
        status = 400 if isinstance(exc, (ConfigError, InvalidDesignError)) else 500
        return error(status, type(exc).__name__, str(exc))

    @app.get("/v1/models")
    def list_models():
        return {"models": model_catalog(), "strategies": ["greedy-grid", "greedy-sga", "policy"]}

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        if req.model not in MODEL_IDS:
            return error(422, "unknown_model", f"unknown model id {req.model!r}")
        if req.T < 1:
            return error(400, "invalid_config", "T must be at least 1")
        try:
            model = build_model(req.model, req.params)
        except ConfigError as exc:
            return error(400, "invalid_config", str(exc))
        policy = None
        if req.strategy == "policy":
            if not req.checkpoint or not Path(req.checkpoint).is_file():
                return error(422, "missing_checkpoint",
                             f"policy checkpoint not found: {req.checkpoint!r}")
            try:
                policy, _ = load_policy(req.checkpoint, model)
            except ConfigError as exc:
                return error(422, "bad_checkpoint", str(exc))
        try:
            state = SessionState.new(model, RngStream(req.seed), req.strategy,
                                     policy=policy, n_particles=req.particles)
        except ConfigError as exc:
            return error(400, "invalid_config", str(exc))
        sid = secrets.token_hex(16)
        session = _Session(sid, state, req.T, "awaiting_outcome", Design([0.0] * model.design_dim),
                           EigEstimate(0.0, 0.0, 1, 1))
        _propose(session)
        store[sid] = session
        return session.view()

    @app.post("/v1/sessions/{sid}/outcome")
    def post_outcome(sid: str, req: OutcomeRequest):
        session = store.get(sid)
        if session is None:
            return error(404, "unknown_session", f"no session {sid!r}")
        if not session.lock.acquire(blocking=False):
            return error(409, "busy", "another outcome post is in flight for this session")
        try:
            if session.status != "awaiting_outcome":
                return error(409, "wrong_status", f"session status is {session.status!r}")
            model = session.state.model
            if model.outcome_kind.is_finite:
                if req.outcome != int(req.outcome) or not (0 <= int(req.outcome) < model.outcome_kind.size):
                    return error(422, "invalid_outcome",
                                 f"outcome must be an index in [0, {model.outcome_kind.size})")
                outcome = Outcome(discrete=int(req.outcome))
            else:
                if not math.isfinite(req.outcome):
                    return error(422, "invalid_outcome", "outcome must be finite")
                try:
                    outcome = Outcome(continuous=[req.outcome])
                    model.validate_outcome(outcome)
                except (ValueError, InvalidDesignError) as exc:
                    return error(422, "invalid_outcome", str(exc))
            start = time.perf_counter()
            design = session.proposed
            est = session.proposed_estimate
            try:
                update_belief(session.state, design, outcome)
            except EiglabError as exc:
                return error(422, "invalid_outcome", str(exc))
            session.records.append(
                StepRecord(
                    t=session.state.t,
                    xi=[float(v) for v in design.values],
                    y=float(req.outcome),
                    eig_estimate=est.value,
                    eig_std_error=est.std_error,
                    belief_mean=[float(v) for v in session.state.belief.mean()],
                    belief_std=[float(v) for v in session.state.belief.std()],
                    wall_ms=0.0,
                )
            )
            if session.state.t >= session.horizon:
                session.status = "finished"
                if snapshot_dir is not None:
                    path = Path(snapshot_dir) / f"session_{session.sid}.json"
                    import json as _json

                    path.write_text(_json.dumps([r.to_dict() for r in session.records], indent=2))
            else:
                _propose(session)
            session.records[-1].wall_ms = 1000.0 * (time.perf_counter() - start)
            session.updated = time.time()
            return session.view()
        finally:
            session.lock.release()

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str):
        session = store.get(sid)
        if session is None:
            return error(404, "unknown_session", f"no session {sid!r}")
        return session.view(with_transcript=True)

    return app
