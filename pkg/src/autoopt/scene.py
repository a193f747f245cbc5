"""Geometric scene model: physical objects, voxel grids, user pose, widget
catalog, and the angular/ray primitives used by the layout objectives.

Conventions: right-handed coordinates, y up, meters. Angles are degrees in
every public interface. Widgets are flat rectangles billboarded toward the
user's eye; their orientation is never a decision variable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

DEFAULT_VOXEL_RESOLUTION = 0.05


class SceneError(ValueError):
    """Raised when a scene document or geometric precondition is invalid."""


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise SceneError(f"Vec3.{name} must be finite, got {v!r}")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def distance_to(self, other: "Vec3") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, min strictly below max on every axis."""

    min: Vec3
    max: Vec3

    def __post_init__(self):
        if not (self.min.x < self.max.x and self.min.y < self.max.y and self.min.z < self.max.z):
            raise SceneError(f"box min {self.min} must be componentwise below max {self.max}")

    @property
    def center(self) -> Vec3:
        return Vec3(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )

    @property
    def extents(self) -> Tuple[float, float, float]:
        return (self.max.x - self.min.x, self.max.y - self.min.y, self.max.z - self.min.z)

    def contains(self, p: Vec3, tol: float = 0.0) -> bool:
        return (
            self.min.x - tol <= p.x <= self.max.x + tol
            and self.min.y - tol <= p.y <= self.max.y + tol
            and self.min.z - tol <= p.z <= self.max.z + tol
        )


@dataclass(frozen=True)
class UserPose:
    eye_position: Vec3
    gaze_direction: Vec3
    shoulder_position: Vec3

    def __post_init__(self):
        n = math.sqrt(
            self.gaze_direction.x**2 + self.gaze_direction.y**2 + self.gaze_direction.z**2
        )
        if abs(n - 1.0) > 1e-9:
            raise SceneError(f"gaze_direction must be unit length, |g| = {n}")
        if self.shoulder_position.y > self.eye_position.y:
            raise SceneError("shoulder_position must not be above eye_position")


@dataclass(frozen=True)
class PhysicalObject:
    name: str
    bounds: Box
    label: str = ""


@dataclass(frozen=True)
class WidgetSpec:
    name: str
    width: float
    height: float
    description: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"widget {self.name!r} needs positive width/height")


@dataclass(frozen=True)
class VoxelGrid:
    """Lattice of occupied voxels; centers = origin + (index + 0.5) * resolution.

    The lattice is centered inside the owning box so every center stays in
    bounds even when an axis is thinner than one voxel.
    """

    origin: Vec3
    resolution: float
    occupied: Tuple[Tuple[int, int, int], ...]

    def centers(self) -> np.ndarray:
        idx = np.array(self.occupied, dtype=float).reshape(-1, 3)
        return self.origin.to_array() + (idx + 0.5) * self.resolution

    def __len__(self) -> int:
        return len(self.occupied)


@dataclass(frozen=True)
class Scene:
    id: str
    pose: UserPose
    objects: Tuple[PhysicalObject, ...]
    widgets: Tuple[WidgetSpec, ...]
    search_bounds: Box
    voxel_resolution: float = DEFAULT_VOXEL_RESOLUTION

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if len(names) != len(set(names)):
            raise SceneError("duplicate object name in scene")
        wnames = [w.name for w in self.widgets]
        if len(wnames) != len(set(wnames)):
            raise SceneError("duplicate widget name in scene")
        for w in self.widgets:
            ex, ey, _ = self.search_bounds.extents
            if w.width > ex or w.height > ey:
                raise SceneError(f"widget {w.name!r} does not fit inside search_bounds")

    def object_by_name(self, name: str) -> PhysicalObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def widget_by_name(self, name: str) -> WidgetSpec:
        for w in self.widgets:
            if w.name == name:
                return w
        raise KeyError(name)


@dataclass(frozen=True)
class Layout:
    """Positions of widget centers, one entry per widget placed by the
    active configuration. Widgets are billboarded toward the eye."""

    positions: Dict[str, Vec3] = field(default_factory=dict)

    def moved(self, widget: str, position: Vec3) -> "Layout":
        new = dict(self.positions)
        new[widget] = position
        return Layout(new)


# ---------------------------------------------------------------------------
# Document loading


def _as_vec3(value, path: str) -> Vec3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise SceneError(f"{path}: expected [x, y, z], got {value!r}")
    try:
        return Vec3(float(value[0]), float(value[1]), float(value[2]))
    except (TypeError, ValueError) as exc:
        raise SceneError(f"{path}: {exc}") from exc


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise SceneError(f"{path}.{key}: missing required field")
    return doc[key]


def _as_box(value, path: str) -> Box:
    if not isinstance(value, dict):
        raise SceneError(f"{path}: expected object with min/max")
    lo = _as_vec3(_require(value, "min", path), f"{path}.min")
    hi = _as_vec3(_require(value, "max", path), f"{path}.max")
    try:
        return Box(lo, hi)
    except SceneError as exc:
        raise SceneError(f"{path}: {exc}") from exc


def load_scene(document: str | dict) -> Scene:
    """Parse and validate a scene document (JSON text or already-parsed dict).

    Gaze is normalized on load. Raises SceneError naming the offending field.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SceneError(f"scene document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")

    scene_id = _require(doc, "id", "scene")
    pose_doc = _require(doc, "pose", "scene")
    eye = _as_vec3(_require(pose_doc, "eye", "scene.pose"), "scene.pose.eye")
    gaze_raw = _as_vec3(_require(pose_doc, "gaze", "scene.pose"), "scene.pose.gaze")
    g = gaze_raw.to_array()
    n = float(np.linalg.norm(g))
    if n < 1e-12:
        raise SceneError("scene.pose.gaze: zero-length gaze direction")
    gaze = Vec3.from_array(g / n)
    shoulder = _as_vec3(_require(pose_doc, "shoulder", "scene.pose"), "scene.pose.shoulder")
    pose = UserPose(eye, gaze, shoulder)

    bounds = _as_box(_require(doc, "search_bounds", "scene"), "scene.search_bounds")

    objects: List[PhysicalObject] = []
    seen = set()
    for i, od in enumerate(doc.get("objects", [])):
        path = f"scene.objects[{i}]"
        name = _require(od, "name", path)
        if name in seen:
            raise SceneError(f"{path}.name: duplicate object name {name!r}")
        seen.add(name)
        box = Box(
            _as_vec3(_require(od, "min", path), f"{path}.min"),
            _as_vec3(_require(od, "max", path), f"{path}.max"),
        )
        objects.append(PhysicalObject(name=name, bounds=box, label=od.get("label", "")))

    widgets: List[WidgetSpec] = []
    seen_w = set()
    for i, wd in enumerate(doc.get("widgets", [])):
        path = f"scene.widgets[{i}]"
        name = _require(wd, "name", path)
        if name in seen_w:
            raise SceneError(f"{path}.name: duplicate widget name {name!r}")
        seen_w.add(name)
        try:
            widgets.append(
                WidgetSpec(
                    name=name,
                    width=float(_require(wd, "width", path)),
                    height=float(_require(wd, "height", path)),
                    description=wd.get("description", ""),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SceneError(f"{path}: {exc}") from exc

    resolution = float(doc.get("voxel_resolution", DEFAULT_VOXEL_RESOLUTION))
    if resolution <= 0:
        raise SceneError("scene.voxel_resolution: must be > 0")

    return Scene(
        id=str(scene_id),
        pose=pose,
        objects=tuple(objects),
        widgets=tuple(widgets),
        search_bounds=bounds,
        voxel_resolution=resolution,
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "pose": {
            "eye": list(scene.pose.eye_position.to_array()),
            "gaze": list(scene.pose.gaze_direction.to_array()),
            "shoulder": list(scene.pose.shoulder_position.to_array()),
        },
        "search_bounds": {
            "min": list(scene.search_bounds.min.to_array()),
            "max": list(scene.search_bounds.max.to_array()),
        },
        "objects": [
            {
                "name": o.name,
                "min": list(o.bounds.min.to_array()),
                "max": list(o.bounds.max.to_array()),
                "label": o.label,
            }
            for o in scene.objects
        ],
        "widgets": [
            {"name": w.name, "width": w.width, "height": w.height, "description": w.description}
            for w in scene.widgets
        ],
        "voxel_resolution": scene.voxel_resolution,
    }


# ---------------------------------------------------------------------------
# Voxelization


def voxelize(obj: PhysicalObject, resolution: float) -> VoxelGrid:
    """Fill the object's box with a centered voxel lattice.

    Per axis the voxel count is the number of cell centers falling inside the
    extent, clamped to at least one so arbitrarily thin boxes still occupy a
    layer. The lattice is recentered so all centers stay inside the bounds.
    """
    if resolution <= 0:
        raise SceneError(f"resolution must be > 0, got {resolution}")
    ext = obj.bounds.extents
    counts = [max(1, math.ceil(e / resolution - 0.5)) for e in ext]
    origin = Vec3(
        obj.bounds.min.x + 0.5 * (ext[0] - counts[0] * resolution),
        obj.bounds.min.y + 0.5 * (ext[1] - counts[1] * resolution),
        obj.bounds.min.z + 0.5 * (ext[2] - counts[2] * resolution),
    )
    occupied = tuple(
        (i, j, k)
        for i in range(counts[0])
        for j in range(counts[1])
        for k in range(counts[2])
    )
    return VoxelGrid(origin=origin, resolution=resolution, occupied=occupied)


# ---------------------------------------------------------------------------
# Angular primitives


def angular_diff(point: Vec3, origin: Vec3, direction: Vec3) -> float:
    """Angle in degrees, in [0, 180], between (point - origin) and direction."""
    v = point.to_array() - origin.to_array()
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise SceneError("angular_diff: point coincides with origin")
    d = direction.to_array()
    dn = float(np.linalg.norm(d))
    cosang = float(np.dot(v, d) / (n * dn))
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def elevation_angle(point: Vec3, origin: Vec3) -> float:
    """Signed elevation above origin's horizontal plane, degrees in [-90, 90]."""
    v = point.to_array() - origin.to_array()
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise SceneError("elevation_angle: point coincides with origin")
    s = max(-1.0, min(1.0, float(v[1]) / n))
    return math.degrees(math.asin(s))


# ---------------------------------------------------------------------------
# Billboarded rectangles and ray tests

_WORLD_Y = np.array([0.0, 1.0, 0.0])
_WORLD_Z = np.array([0.0, 0.0, 1.0])
_DEGENERATE_UP = 1.0 - 1e-9


def billboard_basis(widget_center: Vec3, eye: Vec3) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-handed orthonormal (right, up, normal) for a widget facing the eye.

    normal points from the widget toward the eye; up is world-y projected onto
    the widget plane, falling back to world-z when the widget sits directly
    above or below the eye.
    """
    n = eye.to_array() - widget_center.to_array()
    dist = float(np.linalg.norm(n))
    if dist < 1e-12:
        raise SceneError("billboard_basis: widget center coincides with eye")
    n = n / dist
    seed = _WORLD_Y if abs(float(np.dot(n, _WORLD_Y))) < _DEGENERATE_UP else _WORLD_Z
    up = seed - np.dot(seed, n) * n
    up = up / np.linalg.norm(up)
    right = np.cross(up, n)
    return right, up, n


def ray_rect_intersect(
    origin: Vec3,
    direction: Vec3,
    widget_center: Vec3,
    widget: WidgetSpec,
    eye: Vec3,
) -> Optional[float]:
    """Distance t > 0 at which the ray crosses the billboarded widget
    rectangle, or None on a miss. The in-bounds test is strict, so a ray
    through the exact edge counts as a miss."""
    right, up, normal = billboard_basis(widget_center, eye)
    o = origin.to_array()
    d = direction.to_array()
    denom = float(np.dot(d, normal))
    if abs(denom) < 1e-12:
        return None
    t = float(np.dot(widget_center.to_array() - o, normal)) / denom
    if t <= 0:
        return None
    q = o + t * d - widget_center.to_array()
    u = float(np.dot(q, right))
    v = float(np.dot(q, up))
    if abs(u) < 0.5 * widget.width and abs(v) < 0.5 * widget.height:
        return t
    return None


def rect_sample_grid(
    widget_center: Vec3, widget: WidgetSpec, eye: Vec3, per_axis: int = 3
) -> np.ndarray:
    """Regular per_axis x per_axis sample points spanning the widget rectangle."""
    right, up, _ = billboard_basis(widget_center, eye)
    fr = np.linspace(-0.5, 0.5, per_axis)
    c = widget_center.to_array()
    pts = [
        c + fu * widget.width * right + fv * widget.height * up
        for fu in fr
        for fv in fr
    ]
    return np.array(pts)
