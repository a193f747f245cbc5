"""HTTP facade over the session engine with file-backed persistence.

One JSON document per session, written atomically after every mutation, so a
restart reproduces the last committed state. Mutating endpoints accept a
client-supplied request token and replay the stored response on retry.
Optimization runs on a worker thread; clients poll the session's status
field.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import uuid
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .agents import AgentBackend, AgentError, CandidateLayout, RuleBasedAgents
from .config import OptimizationSpec, SpecError, parse_spec, spec_to_dict
from .moo import SolverError, SolverParams
from .pipeline import (
    Metrics,
    NotFoundError,
    Phase,
    Session,
    SessionEngine,
    StateError,
    transcript,
)
from .scene import Layout, Scene, SceneError, Vec3, load_scene, scene_to_dict

MAX_STORED_TOKENS = 32


# ---------------------------------------------------------------------------
# Session serialization


def _layout_doc(layout: Optional[Layout]) -> Optional[dict]:
    if layout is None:
        return None
    return {n: [p.x, p.y, p.z] for n, p in sorted(layout.positions.items())}


def _layout_from(doc: Optional[dict]) -> Optional[Layout]:
    if doc is None:
        return None
    return Layout({n: Vec3(*v) for n, v in doc.items()})


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "scene_id": session.scene_id,
        "phase": session.phase.value,
        "history": list(session.history),
        "spec": spec_to_dict(session.spec) if session.spec else None,
        "candidates": [
            {
                "layout": _layout_doc(c.layout),
                "objectives": list(c.objectives),
                "violations": list(c.violations),
                "feasible": c.feasible,
            }
            for c in session.candidates
        ],
        "recommended": session.recommended,
        "rationale": session.rationale,
        "final_layout": _layout_doc(session.final_layout),
        "initial_layout": _layout_doc(session.initial_layout),
        "metrics": session.metrics.to_dict(),
        "pins": {n: [p.x, p.y, p.z] for n, p in sorted(session.pins.items())},
        "clarify_rounds": session.clarify_rounds,
        "flagged": session.flagged,
        "events": list(session.events),
        "timings": dict(session.timings),
    }


def session_from_dict(doc: dict) -> Session:
    metrics = doc.get("metrics", {})
    return Session(
        id=doc["id"],
        scene_id=doc["scene_id"],
        phase=Phase(doc["phase"]),
        history=list(doc.get("history", [])),
        spec=parse_spec(doc["spec"]) if doc.get("spec") else None,
        candidates=[
            CandidateLayout(
                layout=_layout_from(c["layout"]),
                objectives=tuple(c["objectives"]),
                violations=tuple(c["violations"]),
                feasible=c["feasible"],
            )
            for c in doc.get("candidates", [])
        ],
        recommended=doc.get("recommended"),
        rationale=doc.get("rationale", ""),
        final_layout=_layout_from(doc.get("final_layout")),
        initial_layout=_layout_from(doc.get("initial_layout")),
        metrics=Metrics(
            number_of_adjustments=metrics.get("number_of_adjustments", 0),
            adjustment_distance=metrics.get("adjustment_distance", 0.0),
            net_displacement=metrics.get("net_displacement", 0.0),
        ),
        pins={n: Vec3(*v) for n, v in doc.get("pins", {}).items()},
        clarify_rounds=doc.get("clarify_rounds", 0),
        flagged=doc.get("flagged", False),
        events=list(doc.get("events", [])),
        timings=dict(doc.get("timings", {})),
    )


class SessionStore:
    """Directory-backed session persistence with atomic replace-on-write."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.json"

    def save(self, session: Session, tokens: Optional[dict] = None) -> None:
        doc = {"session": session_to_dict(session), "tokens": tokens or {}}
        tmp = self._path(session.id).with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self._path(session.id))

    def load(self, session_id: str) -> Optional[tuple]:
        path = self._path(session_id)
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        return session_from_dict(doc["session"]), doc.get("tokens", {})

    def list_ids(self):
        return sorted(p.stem for p in self.directory.glob("*.json"))


# ---------------------------------------------------------------------------
# Application


class _SessionRuntime:
    """Per-session lock plus transient solver status."""

    def __init__(self):
        self.lock = threading.RLock()
        self.busy = False
        self.error = ""
        self.tokens: Dict[str, dict] = {}


def load_scene_dir(scene_dir: Union[str, Path]) -> Dict[str, Scene]:
    scenes: Dict[str, Scene] = {}
    for path in sorted(Path(scene_dir).glob("*.json")):
        scene = load_scene(path.read_text(encoding="utf-8"))
        scenes[scene.id] = scene
    if not scenes:
        raise SceneError(f"no scene documents found in {scene_dir}")
    return scenes


def create_app(
    scenes: Union[str, Path, Mapping[str, Scene]],
    agents: Optional[AgentBackend] = None,
    solver: SolverParams = SolverParams(),
    store_dir: Optional[Union[str, Path]] = None,
    allowed_origins: Optional[list] = None,
    background: bool = True,
) -> FastAPI:
    if not isinstance(scenes, Mapping):
        scenes = load_scene_dir(scenes)
    engine = SessionEngine(
        scenes,
        agents or RuleBasedAgents(),
        solver=solver,
        id_factory=lambda: uuid.uuid4().hex[:12],
    )
    store = SessionStore(store_dir or tempfile.mkdtemp(prefix="autoopt-sessions-"))
    if allowed_origins is None:
        env = os.environ.get("AUTOOPT_ALLOWED_ORIGINS", "*")
        allowed_origins = [o.strip() for o in env.split(",") if o.strip()]

    app = FastAPI(title="autoopt", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=allowed_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.engine = engine
    app.state.store = store

    sessions: Dict[str, Session] = {}
    runtimes: Dict[str, _SessionRuntime] = {}
    registry_lock = threading.RLock()  # get_session re-enters via runtime_of

    def runtime_of(session_id: str) -> _SessionRuntime:
        with registry_lock:
            if session_id not in runtimes:
                runtimes[session_id] = _SessionRuntime()
            return runtimes[session_id]

    def get_session(session_id: str) -> Session:
        with registry_lock:
            if session_id in sessions:
                return sessions[session_id]
        loaded = store.load(session_id)
        if loaded is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        session, tokens = loaded
        with registry_lock:
            sessions.setdefault(session_id, session)
            runtime_of(session_id).tokens.update(tokens)
            return sessions[session_id]

    def persist(session: Session) -> None:
        rt = runtime_of(session.id)
        store.save(session, rt.tokens)

    def status_of(session: Session) -> str:
        rt = runtime_of(session.id)
        if rt.error:
            return "error"
        if rt.busy:
            return "optimizing"
        return {
            Phase.AWAITING_INSTRUCTION: "idle",
            Phase.CLARIFYING: "clarifying",
            Phase.CONFIGURED: "optimizing",
            Phase.OPTIMIZED: "ready",
            Phase.FINALIZED: "finalized",
        }[session.phase]

    def pending_question(session: Session) -> str:
        if session.phase is not Phase.CLARIFYING:
            return ""
        for event in reversed(session.events):
            if event["event"] == "question":
                return event["text"]
        return ""

    def candidates_doc(session: Session) -> list:
        return [
            {
                "index": i,
                "layout": _layout_doc(c.layout),
                "objectives": list(c.objectives),
                "violations": list(c.violations),
                "feasible": c.feasible,
                "recommended": i == session.recommended,
            }
            for i, c in enumerate(session.candidates)
        ]

    def session_doc(session: Session) -> dict:
        rt = runtime_of(session.id)
        return {
            "id": session.id,
            "scene_id": session.scene_id,
            "phase": session.phase.value,
            "status": status_of(session),
            "error": rt.error,
            "question": pending_question(session),
            "history": list(session.history),
            "candidates": candidates_doc(session),
            "recommended": session.recommended,
            "rationale": session.rationale,
            "final_layout": _layout_doc(session.final_layout),
            "metrics": session.metrics.to_dict(),
            "flagged": session.flagged,
        }

    def replayed(rt: _SessionRuntime, token: Optional[str]):
        if token and token in rt.tokens:
            return rt.tokens[token]
        return None

    def remember(rt: _SessionRuntime, token: Optional[str], response: dict):
        if not token:
            return
        rt.tokens[token] = response
        while len(rt.tokens) > MAX_STORED_TOKENS:
            rt.tokens.pop(next(iter(rt.tokens)))

    def run_solver(session: Session):
        rt = runtime_of(session.id)
        with rt.lock:
            try:
                engine.run_optimization(session)
            except (AgentError, SolverError, SpecError, StateError) as exc:
                rt.error = str(exc)
            finally:
                rt.busy = False
            persist(session)

    def start_optimization(session: Session):
        rt = runtime_of(session.id)
        rt.busy = True
        rt.error = ""
        if background:
            threading.Thread(target=run_solver, args=(session,), daemon=True).start()
        else:
            run_solver(session)

    def submit(session_id: str, payload: dict, kind: str) -> JSONResponse:
        session = get_session(session_id)
        rt = runtime_of(session.id)
        with rt.lock:
            cached = replayed(rt, payload.get("token"))
            if cached is not None:
                return JSONResponse(cached)
            if rt.busy:
                raise StateError("optimization already in progress")
            text = payload.get("text", "")
            if kind == "instruction":
                outcome = engine.submit_instruction(session, text, defer=True)
            else:
                outcome = engine.submit_answer(session, text, defer=True)
            if outcome.status == "pending":
                start_optimization(session)
                body = {"status": "optimizing"}
            else:
                body = {"status": "clarifying", "question": outcome.question, "facet": outcome.facet}
            remember(rt, payload.get("token"), body)
            persist(session)
            return JSONResponse(body)

    # -- endpoints ----------------------------------------------------------

    @app.get("/api/scenes")
    def list_scenes():
        return [
            {
                "id": scene.id,
                "objects": [o.name for o in scene.objects],
                "widgets": [w.name for w in scene.widgets],
            }
            for scene in engine.scenes.values()
        ]

    @app.get("/api/scenes/{scene_id}")
    def get_scene(scene_id: str):
        if scene_id not in engine.scenes:
            raise NotFoundError(f"unknown scene {scene_id!r}")
        return scene_to_dict(engine.scenes[scene_id])

    @app.post("/api/sessions", status_code=201)
    def create_session(payload: dict):
        scene_id = payload.get("scene_id", "")
        session = engine.create_session(scene_id)
        with registry_lock:
            sessions[session.id] = session
        persist(session)
        return session_doc(session)

    @app.get("/api/sessions/{session_id}")
    def get_session_doc(session_id: str):
        return session_doc(get_session(session_id))

    @app.post("/api/sessions/{session_id}/instruction")
    def post_instruction(session_id: str, payload: dict):
        return submit(session_id, payload, "instruction")

    @app.post("/api/sessions/{session_id}/answer")
    def post_answer(session_id: str, payload: dict):
        return submit(session_id, payload, "answer")

    @app.get("/api/sessions/{session_id}/candidates")
    def get_candidates(session_id: str):
        return candidates_doc(get_session(session_id))

    @app.post("/api/sessions/{session_id}/select")
    def post_select(session_id: str, payload: dict):
        session = get_session(session_id)
        rt = runtime_of(session.id)
        with rt.lock:
            cached = replayed(rt, payload.get("token"))
            if cached is not None:
                return JSONResponse(cached)
            choice = payload.get("index", "auto")
            layout = engine.finalize(session, None if choice == "auto" else int(choice))
            body = {"status": "finalized", "final_layout": _layout_doc(layout)}
            remember(rt, payload.get("token"), body)
            persist(session)
            return JSONResponse(body)

    @app.post("/api/sessions/{session_id}/adjust")
    def post_adjust(session_id: str, payload: dict):
        session = get_session(session_id)
        rt = runtime_of(session.id)
        with rt.lock:
            cached = replayed(rt, payload.get("token"))
            if cached is not None:
                return JSONResponse(cached)
            widget = payload.get("widget", "")
            position = payload.get("position")
            if not isinstance(position, (list, tuple)) or len(position) != 3:
                raise StateError("position must be [x, y, z]")
            metrics = engine.record_adjustment(session, widget, Vec3(*position))
            body = {
                "status": "adjusted",
                "metrics": metrics.to_dict(),
                "final_layout": _layout_doc(session.final_layout),
            }
            remember(rt, payload.get("token"), body)
            persist(session)
            return JSONResponse(body)

    @app.get("/api/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        return get_session(session_id).metrics.to_dict()

    @app.get("/api/sessions/{session_id}/transcript")
    def get_transcript(session_id: str):
        return transcript(get_session(session_id))

    # -- error shape ----------------------------------------------------------

    def error_response(request: Request, status: int, code: str, message: str):
        return JSONResponse(
            status_code=status,
            content={"code": code, "message": message, "path": request.url.path},
        )

    @app.exception_handler(NotFoundError)
    def handle_not_found(request: Request, exc: NotFoundError):
        return error_response(request, 404, "not_found", str(exc.args[0]))

    @app.exception_handler(StateError)
    def handle_state(request: Request, exc: StateError):
        return error_response(request, 409, "invalid_state", str(exc))

    @app.exception_handler(SpecError)
    def handle_spec(request: Request, exc: SpecError):
        return error_response(request, 422, "invalid_spec", str(exc))

    @app.exception_handler(SceneError)
    def handle_scene(request: Request, exc: SceneError):
        return error_response(request, 422, "invalid_scene", str(exc))

    @app.exception_handler(AgentError)
    def handle_agent(request: Request, exc: AgentError):
        return error_response(request, 502, "agent_error", str(exc))

    return app


def serve(
    port: int,
    scene_dir: Union[str, Path],
    agents: Optional[AgentBackend] = None,
    store_dir: Optional[Union[str, Path]] = None,
    solver: SolverParams = SolverParams(),
    allowed_origins: Optional[list] = None,
    host: str = "127.0.0.1",
):
    """Run the HTTP service until interrupted."""
    import uvicorn

    app = create_app(
        scene_dir,
        agents=agents,
        solver=solver,
        store_dir=store_dir,
        allowed_origins=allowed_origins,
    )
    uvicorn.run(app, host=host, port=port, log_level="info")
