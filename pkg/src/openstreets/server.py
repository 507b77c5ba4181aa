"""HTTP what-if service: network and state views, batch what-if evaluation,
and session-scoped interactive planning, all computed through the
environment's step logic (single source of truth)."""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from .openenv import DayState, Environment, StepOutcome
from .qagent import QModel, rank_segments
from .roadnet import RoadNetwork, export_geojson

LOG = logging.getLogger(__name__)

SESSION_TTL_S = 1800.0


class WhatIfRequest(BaseModel):
    date: str
    open: list[int]


class PlanStepRequest(BaseModel):
    session: str | None = None
    date: str | None = None
    open: int | None = None
    close: int | None = None


@dataclass
class PlanSession:
    session_id: str
    start_date: object
    state: DayState
    steps: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_used: float = field(default_factory=time.monotonic)


def _parse_date(raw: str):
    try:
        return datetime.strptime(raw, "%Y-%m-%d").date()
    except ValueError:
        raise HTTPException(status_code=400, detail=f"bad date {raw!r}") from None


def create_app(
    net: RoadNetwork,
    env: Environment,
    qmodel: QModel | None = None,
) -> FastAPI:
    app = FastAPI(title="openstreets what-if service")
    sessions: dict[str, PlanSession] = {}
    sessions_lock = threading.Lock()
    corpus = env.corpus

    def sweep_sessions() -> None:
        now = time.monotonic()
        with sessions_lock:
            stale = [k for k, s in sessions.items() if now - s.last_used > SESSION_TTL_S]
            for k in stale:
                del sessions[k]

    def check_date(day) -> None:
        if day not in set(corpus.dates):
            raise HTTPException(status_code=400, detail=f"unknown date {day.isoformat()}")

    def check_segment(sid: int) -> None:
        if sid not in net.segments:
            raise HTTPException(status_code=400, detail=f"unknown segment {sid}")

    def reference_state() -> DayState:
        starts = env.eligible_starts()
        if not starts:
            raise HTTPException(status_code=500, detail="corpus has no eligible days")
        return env.reset(starts[-1])

    def cumulative(first: DayState, state: DayState) -> dict:
        return {
            "risk_delta": state.risk_total / env.risk_norm - first.risk_total / env.risk_norm,
            "density_delta": state.density_total / env.density_norm
            - first.density_total / env.density_norm,
        }

    def session_view(plan: PlanSession) -> dict:
        first = env.reset(plan.start_date)
        deltas = cumulative(first, plan.state)
        return {
            "session": plan.session_id,
            "start_date": plan.start_date.isoformat(),
            "date": plan.state.date.isoformat(),
            "open": list(plan.state.open_list),
            "steps": plan.steps,
            "total_reward": sum(s["reward"] for s in plan.steps),
            "risk_delta": deltas["risk_delta"],
            "density_delta": deltas["density_delta"],
            "done": plan.state.done,
        }

    def step_record(action: int, outcome: StepOutcome) -> dict:
        return {
            "action": action,
            "date": outcome.next_state.date.isoformat(),
            "reward": outcome.reward,
            "risk_delta": outcome.info.get("risk_delta", 0.0),
            "density_delta": outcome.info.get("density_delta", 0.0),
        }

    @app.get("/network")
    def network():
        overlay = {}
        if qmodel is not None:
            state = reference_state()
            overlay = {sid: q for sid, q in
                       rank_segments(qmodel, state, net, top=len(net.segments))}
        return Response(content=export_geojson(net, overlay),
                        media_type="application/geo+json")

    @app.get("/state/{date}")
    def state_view(date: str):
        day = _parse_date(date)
        check_date(day)
        idx = corpus.dates.index(day)
        if idx < env.window - 1:
            raise HTTPException(status_code=400,
                                detail=f"{date} lacks the model's day window")
        window = env._base_window(day)
        risk = env._risk(window, ())
        density = env._density(corpus.volumes[day], ())
        return {
            "date": date,
            "volumes": {str(sid): v for sid, v in corpus.volumes[day].items()},
            "risk_total": risk,
            "density_total": density,
            "risk_norm": env.risk_norm,
            "density_norm": env.density_norm,
            "open": [],
        }

    @app.get("/qvalues")
    def qvalues():
        if qmodel is None:
            raise HTTPException(status_code=404, detail="no Q model loaded")
        state = reference_state()
        ranked = rank_segments(qmodel, state, net, top=len(net.segments))
        return [
            {"segment_id": sid, "q_value": q, "rank": i + 1}
            for i, (sid, q) in enumerate(ranked)
        ]

    @app.post("/whatif")
    def whatif(req: WhatIfRequest):
        day = _parse_date(req.date)
        check_date(day)
        for sid in req.open:
            check_segment(sid)
        try:
            first = env.reset(day)
        except Exception as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        final, outcomes = env.rollout(day, req.open, skip_invalid=True)
        invalid = []
        for action, outcome in zip(req.open, outcomes):
            reason = outcome.info.get("invalid_reason")
            if reason is not None:
                invalid.append({"id": action, "reason": reason})
        changes = {
            str(sid): final.volumes[sid] - first.volumes.get(sid, 0.0)
            for sid in sorted(final.volumes)
            if final.volumes[sid] != first.volumes.get(sid, 0.0)
        }
        deltas = cumulative(first, final)
        return {
            "risk_delta": deltas["risk_delta"],
            "density_delta": deltas["density_delta"],
            "reward": sum(o.reward for o in outcomes),
            "per_segment_volume_changes": changes,
            "invalid": invalid,
        }

    @app.post("/plan/step")
    def plan_step(req: PlanStepRequest):
        sweep_sessions()
        if req.session is None:
            if req.date is None:
                raise HTTPException(status_code=400, detail="new sessions need a date")
            day = _parse_date(req.date)
            check_date(day)
            try:
                state = env.reset(day)
            except Exception as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            plan = PlanSession(session_id=uuid.uuid4().hex, start_date=day, state=state)
            with sessions_lock:
                sessions[plan.session_id] = plan
        else:
            with sessions_lock:
                plan = sessions.get(req.session)
            if plan is None:
                raise HTTPException(status_code=404, detail="unknown or expired session")
        with plan.lock:
            plan.last_used = time.monotonic()
            if req.open is not None:
                check_segment(req.open)
                if plan.state.done:
                    raise HTTPException(status_code=409, detail="horizon_exhausted")
                outcome = env.step(plan.state, req.open, terminate_on_invalid=False)
                reason = outcome.info.get("invalid_reason")
                if reason is not None:
                    raise HTTPException(status_code=409, detail=reason)
                plan.state = outcome.next_state
                plan.steps.append(step_record(req.open, outcome))
            elif req.close is not None:
                if req.close not in plan.state.open_list:
                    raise HTTPException(status_code=400,
                                        detail=f"segment {req.close} is not open")
                remaining = [sid for sid in plan.state.open_list if sid != req.close]
                final, outcomes = env.rollout(plan.start_date, remaining, skip_invalid=True)
                plan.state = final
                plan.steps = [
                    step_record(action, outcome)
                    for action, outcome in zip(remaining, outcomes)
                    if "invalid_reason" not in outcome.info
                ]
            return session_view(plan)

    @app.get("/plan/{session_id}")
    def plan_view(session_id: str):
        with sessions_lock:
            plan = sessions.get(session_id)
        if plan is None:
            raise HTTPException(status_code=404, detail="unknown or expired session")
        with plan.lock:
            plan.last_used = time.monotonic()
            return session_view(plan)

    return app
