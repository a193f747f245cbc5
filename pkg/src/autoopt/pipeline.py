"""Session orchestration: the clarification loop, configuration, solving,
candidate validation, finalization, and drag-refinement metrics.

A session accumulates every instruction the user ever gave; each optimization
round re-reads the whole aggregate, so preferences persist across rounds.
Widgets the user drags become pinned and are excluded from later rounds'
decision variables.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .agents import (
    AgentBackend,
    AgentContext,
    AmbiguityOutcome,
    CandidateLayout,
    build_context,
    combine_instructions,
)
from .config import OptimizationSpec, ProblemInstance, pin_widget, spec_to_dict
from .moo import SolverParams, aasf_select, nsga3_run, riesz_refdirs
from .scene import Layout, Scene, Vec3

MAX_CLARIFICATION_ROUNDS = 5


class StateError(RuntimeError):
    """Raised when an operation is invalid in the session's current phase."""


class NotFoundError(KeyError):
    """Raised for unknown scene, session, or widget identifiers."""


class Phase(str, Enum):
    AWAITING_INSTRUCTION = "awaiting_instruction"
    CLARIFYING = "clarifying"
    CONFIGURED = "configured"
    OPTIMIZED = "optimized"
    FINALIZED = "finalized"


@dataclass
class Metrics:
    number_of_adjustments: int = 0
    adjustment_distance: float = 0.0
    net_displacement: float = 0.0

    def to_dict(self) -> dict:
        return {
            "number_of_adjustments": self.number_of_adjustments,
            "adjustment_distance": self.adjustment_distance,
            "net_displacement": self.net_displacement,
        }


@dataclass
class Session:
    id: str
    scene_id: str
    phase: Phase = Phase.AWAITING_INSTRUCTION
    history: List[str] = field(default_factory=list)
    spec: Optional[OptimizationSpec] = None
    candidates: List[CandidateLayout] = field(default_factory=list)
    recommended: Optional[int] = None
    rationale: str = ""
    final_layout: Optional[Layout] = None
    initial_layout: Optional[Layout] = None
    metrics: Metrics = field(default_factory=Metrics)
    pins: Dict[str, Vec3] = field(default_factory=dict)
    clarify_rounds: int = 0
    flagged: bool = False
    events: List[dict] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def log(self, event: str, **payload):
        self.events.append({"event": event, **payload})


@dataclass
class SubmitOutcome:
    status: str  # "question" | "optimized"
    question: str = ""
    facet: str = ""
    candidates: Tuple[CandidateLayout, ...] = ()
    recommended: Optional[int] = None


def _layout_to_doc(layout: Layout) -> dict:
    return {
        name: [p.x, p.y, p.z] for name, p in sorted(layout.positions.items())
    }


class SessionEngine:
    """Drives sessions over a fixed scene catalog with one agent backend.

    One session is a serialized unit; the caller must not run two mutating
    operations on the same session concurrently. Distinct sessions are
    independent.
    """

    def __init__(
        self,
        scenes: Mapping[str, Scene],
        agents: AgentBackend,
        solver: SolverParams = SolverParams(),
        id_factory: Optional[Callable[[], str]] = None,
    ):
        self.scenes = dict(scenes)
        self.agents = agents
        self.solver = solver
        self._counter = itertools.count(1)
        self._id_factory = id_factory or (lambda: f"session-{next(self._counter):04d}")

    # -- lifecycle ----------------------------------------------------------

    def create_session(self, scene_id: str) -> Session:
        if scene_id not in self.scenes:
            raise NotFoundError(f"unknown scene {scene_id!r}")
        return Session(id=self._id_factory(), scene_id=scene_id)

    def scene_of(self, session: Session) -> Scene:
        return self.scenes[session.scene_id]

    # -- instruction flow ---------------------------------------------------

    def submit_instruction(self, session: Session, text: str, defer: bool = False) -> SubmitOutcome:
        if session.phase not in (
            Phase.AWAITING_INSTRUCTION,
            Phase.CLARIFYING,
            Phase.FINALIZED,
        ):
            raise StateError(f"cannot submit an instruction while {session.phase.value}")
        if not text.strip():
            raise StateError("instruction must be nonempty")
        session.history.append(text.strip())
        session.log("instruction", text=text.strip())
        return self._reevaluate(session, defer)

    def submit_answer(self, session: Session, text: str, defer: bool = False) -> SubmitOutcome:
        if session.phase is not Phase.CLARIFYING:
            raise StateError(f"no question is pending while {session.phase.value}")
        if not text.strip():
            raise StateError("answer must be nonempty")
        session.history.append(text.strip())
        session.log("answer", text=text.strip())
        return self._reevaluate(session, defer)

    def run_optimization(self, session: Session) -> SubmitOutcome:
        """Run the deferred configure/solve/validate stage for a session whose
        last submission returned status "pending"."""
        return self._optimize(session, self._context(session))

    def aggregate_instructions(self, session: Session) -> str:
        if not session.history:
            raise StateError("no instructions submitted yet")
        return combine_instructions(session.history)

    def _context(self, session: Session) -> AgentContext:
        return build_context(self.scene_of(session), session.history)

    def _reevaluate(self, session: Session, defer: bool = False) -> SubmitOutcome:
        ctx = self._context(session)
        t0 = time.perf_counter()
        outcome: AmbiguityOutcome = self.agents.detect_ambiguity(ctx)
        session.timings["ambiguity_detection"] = (
            session.timings.get("ambiguity_detection", 0.0) + time.perf_counter() - t0
        )
        if not outcome.clear and session.clarify_rounds >= MAX_CLARIFICATION_ROUNDS:
            session.flagged = True
            session.log("flagged", reason="clarification round cap reached; proceeding with defaults")
        elif not outcome.clear:
            session.clarify_rounds += 1
            session.phase = Phase.CLARIFYING
            facet = outcome.facet.value if outcome.facet else ""
            session.log("question", text=outcome.question, facet=facet)
            return SubmitOutcome(status="question", question=outcome.question, facet=facet)
        session.clarify_rounds = 0
        if defer:
            return SubmitOutcome(status="pending")
        return self._optimize(session, ctx)

    def _optimize(self, session: Session, ctx: AgentContext) -> SubmitOutcome:
        scene = self.scene_of(session)
        t0 = time.perf_counter()
        spec = self.agents.configure(ctx, scene)
        for widget, position in sorted(session.pins.items()):
            params = spec.widgets.get(widget)
            if params is not None and params.enabled:
                spec = pin_widget(spec, scene, widget, position)
        session.spec = spec
        session.phase = Phase.CONFIGURED
        session.timings["configuration"] = (
            session.timings.get("configuration", 0.0) + time.perf_counter() - t0
        )
        session.log("spec", spec=spec_to_dict(spec))

        t0 = time.perf_counter()
        problem = ProblemInstance(spec, scene)
        solver = SolverParams(
            population=self.solver.population,
            generations=self.solver.generations,
            seed=spec.seed,
            crossover_prob=self.solver.crossover_prob,
            crossover_eta=self.solver.crossover_eta,
            mutation_eta=self.solver.mutation_eta,
            workers=self.solver.workers,
        )
        refdirs = riesz_refdirs(problem.n_obj, solver.population, seed=spec.seed)
        front = nsga3_run(problem, solver, refdirs)
        reduced = aasf_select(front, k=spec.candidate_count, seed=spec.seed)
        session.candidates = [
            CandidateLayout(
                layout=problem.decode(ind.genome),
                objectives=tuple(float(v) for v in ind.objectives),
                violations=tuple(float(v) for v in ind.violations),
                feasible=ind.feasible,
            )
            for ind in reduced.members
        ]
        session.timings["optimization"] = (
            session.timings.get("optimization", 0.0) + time.perf_counter() - t0
        )

        t0 = time.perf_counter()
        choice = self.agents.validate_candidates(ctx, scene, session.candidates, spec)
        session.recommended = choice.index
        session.rationale = choice.rationale
        session.phase = Phase.OPTIMIZED
        session.timings["validation"] = (
            session.timings.get("validation", 0.0) + time.perf_counter() - t0
        )
        session.log(
            "candidates",
            candidates=[
                {
                    "index": i,
                    "layout": _layout_to_doc(c.layout),
                    "objectives": list(c.objectives),
                    "violations": list(c.violations),
                    "feasible": c.feasible,
                }
                for i, c in enumerate(session.candidates)
            ],
            recommended=choice.index,
            rationale=choice.rationale,
        )
        return SubmitOutcome(
            status="optimized",
            candidates=tuple(session.candidates),
            recommended=choice.index,
        )

    # -- finalization and refinement -----------------------------------------

    def finalize(self, session: Session, choice: Optional[int] = None) -> Layout:
        if session.phase is not Phase.OPTIMIZED:
            raise StateError(f"cannot finalize while {session.phase.value}")
        index = session.recommended if choice is None else choice
        if not 0 <= index < len(session.candidates):
            raise NotFoundError(f"candidate index {index} out of range")
        layout = session.candidates[index].layout
        session.final_layout = layout
        if session.initial_layout is None:
            session.initial_layout = layout
        session.phase = Phase.FINALIZED
        session.log("selection", index=index, auto=choice is None)
        return layout

    def record_adjustment(self, session: Session, widget: str, position: Vec3) -> Metrics:
        if session.phase is not Phase.FINALIZED:
            raise StateError(f"cannot adjust while {session.phase.value}")
        assert session.final_layout is not None
        current = session.final_layout.positions.get(widget)
        if current is None:
            raise NotFoundError(f"widget {widget!r} is not part of the final layout")
        scene = self.scene_of(session)
        if not scene.search_bounds.contains(position):
            raise StateError(f"adjusted position for {widget!r} outside search bounds")
        step = current.distance_to(position)
        if step == 0.0:
            return session.metrics
        session.final_layout = session.final_layout.moved(widget, position)
        session.pins[widget] = position
        if session.spec is not None and widget in session.spec.widgets:
            session.spec = pin_widget(session.spec, scene, widget, position)
        session.metrics.number_of_adjustments += 1
        session.metrics.adjustment_distance += step
        session.metrics.net_displacement = self._net_displacement(session)
        session.log(
            "adjustment",
            widget=widget,
            position=[position.x, position.y, position.z],
            step=step,
            metrics=session.metrics.to_dict(),
        )
        return session.metrics

    def _net_displacement(self, session: Session) -> float:
        if session.initial_layout is None or session.final_layout is None:
            return 0.0
        total = 0.0
        for name, initial in session.initial_layout.positions.items():
            now = session.final_layout.positions.get(name)
            if now is not None:
                total += initial.distance_to(now)
        return total


def transcript(session: Session) -> dict:
    """Deterministic session record: ordered events plus final state. Wall
    times and ids stay out so replays compare byte-identical."""
    return {
        "scene": session.scene_id,
        "events": session.events,
        "phase": session.phase.value,
        "flagged": session.flagged,
        "metrics": session.metrics.to_dict(),
        "final_layout": _layout_to_doc(session.final_layout) if session.final_layout else None,
    }
