"""Objective and constraint evaluation for candidate layouts.

Six placement objectives (alignment, field of view, anchoring, overlay,
neck strain, arm exertion) and three hard constraints (widget-widget
occlusion, 60-degree field of view, reachable distance). Objectives average
over enabled widgets so values stay comparable as widget count varies;
constraint violations sum so any violation registers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .scene import (
    Layout,
    Scene,
    SceneError,
    Vec3,
    billboard_basis,
    rect_sample_grid,
    voxelize,
)

FOVEAL_DEGREES = 5.0
FOV_LIMIT_DEGREES = 60.0
REACH_METERS = 0.65


class EvaluationError(ValueError):
    """Raised when a layout cannot be evaluated (non-finite positions etc.)."""


class ObjectiveKind(str, Enum):
    ALIGNMENT = "alignment"
    FIELD_OF_VIEW = "field_of_view"
    ANCHOR = "anchor"
    OVERLAY = "overlay"
    NECK_STRAIN = "neck_strain"
    ARM_EXERTION = "arm_exertion"


@dataclass(frozen=True)
class Objective:
    """An active objective with its parameters."""

    kind: ObjectiveKind
    x_tolerance: float = 0.0
    y_tolerance: float = 0.0
    foveal_degrees: float = FOVEAL_DEGREES

    def __post_init__(self):
        if self.x_tolerance < 0 or self.y_tolerance < 0:
            raise ValueError("alignment tolerances must be >= 0")
        if self.foveal_degrees < 0:
            raise ValueError("foveal_degrees must be >= 0")

    def to_dict(self) -> dict:
        params: Dict[str, float] = {}
        if self.kind is ObjectiveKind.ALIGNMENT:
            params = {"x_tolerance": self.x_tolerance, "y_tolerance": self.y_tolerance}
        elif self.kind is ObjectiveKind.FIELD_OF_VIEW:
            params = {"foveal_degrees": self.foveal_degrees}
        return {"kind": self.kind.value, "params": params}

    @staticmethod
    def from_dict(doc: dict) -> "Objective":
        kind = ObjectiveKind(doc["kind"])
        params = doc.get("params") or {}
        return Objective(
            kind=kind,
            x_tolerance=float(params.get("x_tolerance", 0.0)),
            y_tolerance=float(params.get("y_tolerance", 0.0)),
            foveal_degrees=float(params.get("foveal_degrees", FOVEAL_DEGREES)),
        )


@dataclass(frozen=True)
class WidgetParams:
    interaction_probability: float = 0.1
    observation_probability: float = 0.5
    anchor: Optional[str] = None
    enabled: bool = True
    pinned_position: Optional[Vec3] = None

    def __post_init__(self):
        if not 0.0 <= self.interaction_probability <= 1.0:
            raise ValueError("interaction_probability must be in [0, 1]")
        if not 0.0 <= self.observation_probability <= 1.0:
            raise ValueError("observation_probability must be in [0, 1]")


@dataclass(frozen=True)
class ObjectParams:
    overlay_suitability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.overlay_suitability <= 1.0:
            raise ValueError("overlay_suitability must be in [0, 1]")


@dataclass(frozen=True)
class ConstraintVector:
    """Non-negative violation magnitudes; zero means satisfied."""

    occlusion: float
    fov: float
    distance: float

    @property
    def total(self) -> float:
        return self.occlusion + self.fov + self.distance

    @property
    def feasible(self) -> bool:
        return self.total == 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.occlusion, self.fov, self.distance], dtype=float)


def _angles_deg(vectors: np.ndarray, direction: np.ndarray) -> np.ndarray:
    # Degenerate zero-length vectors score the worst possible angle so the
    # evaluator stays total over the whole search box.
    norms = np.linalg.norm(vectors, axis=1)
    safe = norms > 1e-12
    cos = np.full(len(vectors), -1.0)
    cos[safe] = vectors[safe] @ direction / norms[safe]
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def _elevations_deg(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    v = points - origin
    norms = np.linalg.norm(v, axis=1)
    s = np.zeros(len(points))
    safe = norms > 1e-12
    s[safe] = v[safe, 1] / norms[safe]
    return np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))


class Evaluator:
    """Evaluates objectives and constraints for layouts over one scene.

    Voxel grids for the scene's physical objects are built once at
    construction; evaluation is pure and safe to run from many workers.
    """

    def __init__(
        self,
        scene: Scene,
        widget_params: Dict[str, WidgetParams],
        object_params: Dict[str, ObjectParams],
        objectives: Sequence[Objective],
        distance_threshold: float = REACH_METERS,
    ):
        self.scene = scene
        self.objectives = tuple(objectives)
        self.distance_threshold = float(distance_threshold)
        self.enabled_widgets: Tuple[str, ...] = tuple(
            sorted(n for n, p in widget_params.items() if p.enabled)
        )
        self.widget_params = {n: widget_params[n] for n in self.enabled_widgets}
        self.object_params = dict(object_params)

        self._eye = scene.pose.eye_position.to_array()
        self._gaze = scene.pose.gaze_direction.to_array()
        self._shoulder = scene.pose.shoulder_position.to_array()
        self._specs = [scene.widget_by_name(n) for n in self.enabled_widgets]
        self._p_obs = np.array(
            [self.widget_params[n].observation_probability for n in self.enabled_widgets]
        )
        self._p_int = np.array(
            [self.widget_params[n].interaction_probability for n in self.enabled_widgets]
        )
        self._voxel_centers: Dict[str, np.ndarray] = {}
        self._suitability: Dict[str, float] = {}
        for obj in scene.objects:
            params = object_params.get(obj.name, ObjectParams())
            self._suitability[obj.name] = params.overlay_suitability
            self._voxel_centers[obj.name] = voxelize(obj, scene.voxel_resolution).centers()
        self._anchor_dirs: Dict[str, np.ndarray] = {}
        for name in self.enabled_widgets:
            anchor = self.widget_params[name].anchor
            if anchor is not None:
                center = scene.object_by_name(anchor).bounds.center.to_array()
                self._anchor_dirs[name] = center - self._eye

    # -- helpers ----------------------------------------------------------

    def _positions(self, layout: Layout) -> np.ndarray:
        try:
            pos = np.array(
                [layout.positions[n].to_array() for n in self.enabled_widgets]
            ).reshape(len(self.enabled_widgets), 3)
        except KeyError as exc:
            raise EvaluationError(f"layout missing position for widget {exc}") from exc
        if not np.all(np.isfinite(pos)):
            raise EvaluationError("layout contains non-finite positions")
        return pos

    def _segment_hits_rect(
        self, targets: np.ndarray, center: np.ndarray, spec_idx: int
    ) -> np.ndarray:
        """For each target point, does the eye->target segment cross the
        billboarded rectangle of widget spec_idx strictly before the target?"""
        spec = self._specs[spec_idx]
        try:
            right, up, normal = billboard_basis(Vec3.from_array(center), self.scene.pose.eye_position)
        except SceneError:
            return np.zeros(len(targets), dtype=bool)
        e = targets - self._eye
        denom = e @ normal
        plane_offset = float((center - self._eye) @ normal)
        hits = np.zeros(len(targets), dtype=bool)
        ok = np.abs(denom) > 1e-12
        s = plane_offset / denom[ok]
        crossing = (s > 0.0) & (s < 1.0)
        q = self._eye + s[crossing, None] * e[ok][crossing] - center
        in_rect = (np.abs(q @ right) < 0.5 * spec.width) & (np.abs(q @ up) < 0.5 * spec.height)
        idx = np.flatnonzero(ok)[crossing]
        hits[idx[in_rect]] = True
        return hits

    # -- objectives -------------------------------------------------------

    def eval_fov(self, layout: Layout, foveal_degrees: float = FOVEAL_DEGREES) -> float:
        pos = self._positions(layout)
        ang = _angles_deg(pos - self._eye, self._gaze)
        return float(np.mean(self._p_obs * np.maximum(0.0, ang - foveal_degrees)))

    def eval_neck(self, layout: Layout) -> float:
        pos = self._positions(layout)
        return float(np.mean(self._p_obs * np.abs(_elevations_deg(pos, self._eye))))

    def eval_arm(self, layout: Layout) -> float:
        pos = self._positions(layout)
        return float(np.mean(self._p_int * np.abs(_elevations_deg(pos, self._shoulder))))

    def eval_alignment(self, layout: Layout, x_tol: float = 0.0, y_tol: float = 0.0) -> float:
        pos = self._positions(layout)
        n = len(self.enabled_widgets)
        if n < 2:
            return 0.0
        # Left/center/right (world x) and bottom/center/top (world y) of each
        # rectangle; extents measured in the billboard frame laid onto the
        # world axes, which keeps the cost exactly translation-invariant.
        lat = np.empty((n, 3))
        ver = np.empty((n, 3))
        for i, spec in enumerate(self._specs):
            hw, hh = 0.5 * spec.width, 0.5 * spec.height
            lat[i] = (pos[i, 0] - hw, pos[i, 0], pos[i, 0] + hw)
            ver[i] = (pos[i, 1] - hh, pos[i, 1], pos[i, 1] + hh)
        total = 0.0
        for i in range(n):
            others = [j for j in range(n) if j != i]
            dx = min(abs(lat[i, k] - lat[j, k]) for j in others for k in range(3))
            dy = min(abs(ver[i, k] - ver[j, k]) for j in others for k in range(3))
            total += max(0.0, dx - x_tol) + max(0.0, dy - y_tol)
        return total / n

    def eval_anchor(self, layout: Layout) -> float:
        if not self._anchor_dirs:
            return 0.0
        pos = self._positions(layout)
        angles = []
        for i, name in enumerate(self.enabled_widgets):
            if name in self._anchor_dirs:
                angles.append(
                    _angles_deg((pos[i] - self._eye)[None, :], _unit(self._anchor_dirs[name]))[0]
                )
        return float(np.mean(angles))

    def eval_overlay(self, layout: Layout) -> float:
        pos = self._positions(layout)
        cost = 0.0
        for obj_name, centers in self._voxel_centers.items():
            weight = 1.0 - self._suitability[obj_name]
            if weight == 0.0 or len(centers) == 0:
                continue
            for i in range(len(self.enabled_widgets)):
                hits = self._segment_hits_rect(centers, pos[i], i)
                cost += weight * float(np.count_nonzero(hits)) / len(centers)
        return cost

    def occluded_fraction(self, layout: Layout, object_name: str, widget_name: str) -> float:
        """Fraction of the object's voxel centers hidden behind one widget."""
        pos = self._positions(layout)
        i = self.enabled_widgets.index(widget_name)
        centers = self._voxel_centers[object_name]
        hits = self._segment_hits_rect(centers, pos[i], i)
        return float(np.count_nonzero(hits)) / len(centers)

    # -- constraints ------------------------------------------------------

    def eval_occlusion_constraint(self, layout: Layout) -> float:
        pos = self._positions(layout)
        n = len(self.enabled_widgets)
        violation = 0.0
        samples: List[np.ndarray] = []
        for i, spec in enumerate(self._specs):
            try:
                samples.append(
                    rect_sample_grid(Vec3.from_array(pos[i]), spec, self.scene.pose.eye_position)
                )
            except SceneError:
                samples.append(np.tile(pos[i], (9, 1)))
        for occluder in range(n):
            for occludee in range(n):
                if occluder == occludee:
                    continue
                hits = self._segment_hits_rect(samples[occludee], pos[occluder], occluder)
                violation += float(np.count_nonzero(hits)) / len(samples[occludee])
        return violation

    def eval_fov_constraint(self, layout: Layout) -> float:
        pos = self._positions(layout)
        ang = _angles_deg(pos - self._eye, self._gaze)
        return float(np.sum(np.maximum(0.0, ang - FOV_LIMIT_DEGREES)))

    def eval_distance_constraint(self, layout: Layout) -> float:
        pos = self._positions(layout)
        d = np.linalg.norm(pos - self._shoulder, axis=1)
        return float(np.sum(np.maximum(0.0, d - self.distance_threshold)))

    # -- entry point ------------------------------------------------------

    def evaluate(self, layout: Layout) -> Tuple[np.ndarray, ConstraintVector]:
        values = []
        for obj in self.objectives:
            if obj.kind is ObjectiveKind.FIELD_OF_VIEW:
                values.append(self.eval_fov(layout, obj.foveal_degrees))
            elif obj.kind is ObjectiveKind.NECK_STRAIN:
                values.append(self.eval_neck(layout))
            elif obj.kind is ObjectiveKind.ARM_EXERTION:
                values.append(self.eval_arm(layout))
            elif obj.kind is ObjectiveKind.ALIGNMENT:
                values.append(self.eval_alignment(layout, obj.x_tolerance, obj.y_tolerance))
            elif obj.kind is ObjectiveKind.ANCHOR:
                values.append(self.eval_anchor(layout))
            elif obj.kind is ObjectiveKind.OVERLAY:
                values.append(self.eval_overlay(layout))
            else:  # pragma: no cover - enum is closed
                raise EvaluationError(f"unknown objective kind {obj.kind}")
        constraints = ConstraintVector(
            occlusion=self.eval_occlusion_constraint(layout),
            fov=self.eval_fov_constraint(layout),
            distance=self.eval_distance_constraint(layout),
        )
        return np.array(values, dtype=float), constraints


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)
