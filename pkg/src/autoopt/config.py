"""Optimization spec: which widgets take part, which objectives are active,
parameter values, anchors and pins — plus validation against a scene and
compilation into the box-bounded problem the solver drives.

The JSON spec document is the contract between the configuration agent and
the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .moo import Problem
from .objectives import (
    ConstraintVector,
    Evaluator,
    Objective,
    ObjectiveKind,
    ObjectParams,
    WidgetParams,
    REACH_METERS,
)
from .scene import Box, Layout, Scene, Vec3

MIN_ANCHOR_SUITABILITY = 0.05
DEFAULT_CANDIDATE_COUNT = 4
DEFAULT_SEED = 42


class SpecError(ValueError):
    """Raised for malformed or internally inconsistent optimization specs."""


@dataclass(frozen=True)
class OptimizationSpec:
    widgets: Dict[str, WidgetParams]
    objects: Dict[str, ObjectParams] = field(default_factory=dict)
    active_objectives: Tuple[Objective, ...] = ()
    candidate_count: int = DEFAULT_CANDIDATE_COUNT
    seed: int = DEFAULT_SEED
    distance_threshold: float = REACH_METERS

    def enabled_widgets(self) -> List[str]:
        return sorted(n for n, p in self.widgets.items() if p.enabled)

    def unpinned_widgets(self) -> List[str]:
        return sorted(
            n for n, p in self.widgets.items() if p.enabled and p.pinned_position is None
        )

    def objective_kinds(self) -> List[ObjectiveKind]:
        return [o.kind for o in self.active_objectives]


def structural_violations(spec: OptimizationSpec) -> List[str]:
    """Scene-independent consistency rules."""
    out: List[str] = []
    if not spec.enabled_widgets():
        out.append("spec.widgets: at least one widget must be enabled")
    if len(spec.active_objectives) < 2:
        out.append("spec.objectives: at least two active objectives are required")
    kinds = [o.kind for o in spec.active_objectives]
    if len(kinds) != len(set(kinds)):
        out.append("spec.objectives: duplicate objective kind")
    anchor_owners: Dict[str, str] = {}
    any_anchor = False
    for name, params in sorted(spec.widgets.items()):
        if params.anchor is None:
            continue
        any_anchor = True
        if params.anchor in anchor_owners:
            out.append(
                f"spec.widgets[{name}].anchor: object {params.anchor!r} already anchors "
                f"widget {anchor_owners[params.anchor]!r} (one widget per object)"
            )
        else:
            anchor_owners[params.anchor] = name
        if not params.enabled:
            out.append(f"spec.widgets[{name}].anchor: anchored widget is disabled")
    if any_anchor and ObjectiveKind.ANCHOR not in kinds:
        out.append("spec.objectives: anchor objective required when any widget is anchored")
    if spec.candidate_count < 1:
        out.append("spec.candidate_count: must be >= 1")
    if spec.distance_threshold <= 0:
        out.append("spec.distance_threshold: must be > 0")
    return out


def validate_spec(spec: OptimizationSpec, scene: Scene) -> List[str]:
    """All violations of the spec against the scene; empty means valid."""
    out = structural_violations(spec)
    object_names = {o.name for o in scene.objects}
    widget_names = {w.name for w in scene.widgets}
    for name, params in sorted(spec.widgets.items()):
        if name not in widget_names:
            out.append(f"spec.widgets[{name}]: unknown widget (not in scene catalog)")
            continue
        if params.anchor is not None:
            if params.anchor not in object_names:
                out.append(f"spec.widgets[{name}].anchor: unknown object {params.anchor!r}")
            else:
                suit = spec.objects.get(params.anchor, ObjectParams()).overlay_suitability
                if suit < MIN_ANCHOR_SUITABILITY:
                    out.append(
                        f"spec.widgets[{name}].anchor: object {params.anchor!r} has overlay "
                        f"suitability {suit} < {MIN_ANCHOR_SUITABILITY} and cannot anchor"
                    )
        if params.pinned_position is not None and not scene.search_bounds.contains(
            params.pinned_position
        ):
            out.append(f"spec.widgets[{name}].pinned: position outside search bounds")
    for name in sorted(spec.objects):
        if name not in object_names:
            out.append(f"spec.objects[{name}]: unknown object (not in scene)")
    return out


# ---------------------------------------------------------------------------
# Parsing / serialization


def parse_spec(document: str | dict) -> OptimizationSpec:
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")

    widgets: Dict[str, WidgetParams] = {}
    for i, wd in enumerate(doc.get("widgets", [])):
        path = f"spec.widgets[{i}]"
        if "name" not in wd:
            raise SpecError(f"{path}.name: missing required field")
        name = wd["name"]
        if name in widgets:
            raise SpecError(f"{path}.name: duplicate widget {name!r}")
        pinned = wd.get("pinned")
        try:
            widgets[name] = WidgetParams(
                interaction_probability=float(wd.get("interaction_probability", 0.1)),
                observation_probability=float(wd.get("observation_probability", 0.5)),
                anchor=wd.get("anchor"),
                enabled=bool(wd.get("enabled", True)),
                pinned_position=Vec3(*pinned) if pinned is not None else None,
            )
        except (TypeError, ValueError) as exc:
            raise SpecError(f"{path}: {exc}") from exc

    objects: Dict[str, ObjectParams] = {}
    for i, od in enumerate(doc.get("objects", [])):
        path = f"spec.objects[{i}]"
        if "name" not in od:
            raise SpecError(f"{path}.name: missing required field")
        name = od["name"]
        if name in objects:
            raise SpecError(f"{path}.name: duplicate object {name!r}")
        try:
            objects[name] = ObjectParams(
                overlay_suitability=float(od.get("overlay_suitability", 1.0))
            )
        except (TypeError, ValueError) as exc:
            raise SpecError(f"{path}: {exc}") from exc

    objectives: List[Objective] = []
    for i, jd in enumerate(doc.get("objectives", [])):
        path = f"spec.objectives[{i}]"
        try:
            objectives.append(Objective.from_dict(jd))
        except (KeyError, ValueError) as exc:
            raise SpecError(f"{path}: {exc}") from exc

    spec = OptimizationSpec(
        widgets=widgets,
        objects=objects,
        active_objectives=tuple(objectives),
        candidate_count=int(doc.get("candidate_count", DEFAULT_CANDIDATE_COUNT)),
        seed=int(doc.get("seed", DEFAULT_SEED)),
        distance_threshold=float(doc.get("distance_threshold", REACH_METERS)),
    )
    problems = structural_violations(spec)
    if problems:
        raise SpecError("; ".join(problems))
    return spec


def spec_to_dict(spec: OptimizationSpec) -> dict:
    return {
        "widgets": [
            {
                "name": name,
                "enabled": p.enabled,
                "interaction_probability": p.interaction_probability,
                "observation_probability": p.observation_probability,
                "anchor": p.anchor,
                "pinned": (
                    [p.pinned_position.x, p.pinned_position.y, p.pinned_position.z]
                    if p.pinned_position is not None
                    else None
                ),
            }
            for name, p in sorted(spec.widgets.items())
        ],
        "objects": [
            {"name": name, "overlay_suitability": p.overlay_suitability}
            for name, p in sorted(spec.objects.items())
        ],
        "objectives": [o.to_dict() for o in spec.active_objectives],
        "candidate_count": spec.candidate_count,
        "seed": spec.seed,
        "distance_threshold": spec.distance_threshold,
    }


# ---------------------------------------------------------------------------
# Compilation


class ProblemInstance(Problem):
    """A (spec, scene) pair compiled to the solver's box-bounded interface.

    Genome slices follow widget-name lexicographic order over the enabled,
    unpinned widgets; pinned widgets appear in every decoded layout at their
    pinned position and are not part of the genome.
    """

    def __init__(self, spec: OptimizationSpec, scene: Scene):
        problems = validate_spec(spec, scene)
        if problems:
            raise SpecError("cannot compile invalid spec: " + "; ".join(problems))
        self.spec = spec
        self.scene = scene
        self.variable_widgets: List[str] = spec.unpinned_widgets()
        self.pinned: Dict[str, Vec3] = {
            n: p.pinned_position
            for n, p in sorted(spec.widgets.items())
            if p.enabled and p.pinned_position is not None
        }
        if not self.variable_widgets and not self.pinned:
            raise SpecError("spec has no enabled widgets to place")
        self.evaluator = Evaluator(
            scene,
            spec.widgets,
            spec.objects,
            spec.active_objectives,
            spec.distance_threshold,
        )
        self.n_var = 3 * len(self.variable_widgets)
        self.n_obj = len(spec.active_objectives)
        self.n_constr = 3
        lo = scene.search_bounds.min.to_array()
        hi = scene.search_bounds.max.to_array()
        self.xl = np.tile(lo, len(self.variable_widgets))
        self.xu = np.tile(hi, len(self.variable_widgets))

    def decode(self, genome: np.ndarray) -> Layout:
        positions = dict(self.pinned)
        for i, name in enumerate(self.variable_widgets):
            positions[name] = Vec3(*genome[3 * i : 3 * i + 3])
        return Layout(positions)

    def evaluate(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        F = np.empty((len(X), self.n_obj))
        G = np.empty((len(X), self.n_constr))
        for r, genome in enumerate(X):
            values, constraints = self.evaluator.evaluate(self.decode(genome))
            F[r] = values
            G[r] = constraints.to_array()
        return F, G

    def constraints_of(self, genome: np.ndarray) -> ConstraintVector:
        _, constraints = self.evaluator.evaluate(self.decode(genome))
        return constraints


def compile_problem(spec: OptimizationSpec, scene: Scene) -> ProblemInstance:
    return ProblemInstance(spec, scene)


def pin_widget(
    spec: OptimizationSpec, scene: Scene, name: str, position: Vec3
) -> OptimizationSpec:
    """Return a spec with the widget held fixed at `position` in all
    subsequent compilations."""
    params = spec.widgets.get(name)
    if params is None or not params.enabled:
        raise SpecError(f"cannot pin unknown or disabled widget {name!r}")
    if not scene.search_bounds.contains(position):
        raise SpecError(f"pin position for {name!r} outside search bounds")
    widgets = dict(spec.widgets)
    widgets[name] = replace(params, pinned_position=position)
    return replace(spec, widgets=widgets)
