"""Material world under the sensor: layered slabs with embedded objects.

Coordinate frame: x along scan travel, y across scan lines, z depth
positive downward from the top surface of the sample.  Layers stack from
z = 0 downward; whatever they do not fill is ambient.  Objects override
layers.  All lengths are millimetres.

Material assignment is by voxel-center containment; no partial-volume
averaging.  A voxel center on a region boundary belongs to the region
whose half-open interval [lo, hi) contains it, except across-axis extents
of objects which are closed (symmetric under mirroring).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import SceneError

# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Material:
    """A homogeneous material, described by relative permittivity.

    Conductors carry ``is_conductor=True``; their permittivity value is
    ignored by the field solver, which substitutes its conductor sentinel.
    """

    name: str
    relative_permittivity: float = 1.0
    is_conductor: bool = False

    def __post_init__(self):
        if not self.is_conductor and self.relative_permittivity < 1.0:
            raise ValueError(
                f"material {self.name!r}: relative_permittivity must be >= 1 "
                f"for non-conductors, got {self.relative_permittivity}"
            )


# Handbook defaults; the studies only rely on orderings, not exact values.
AIR = Material("air", 1.0)
PLYWOOD = Material("plywood", 2.5)
CONCRETE = Material("concrete", 4.5)
DRYWALL = Material("drywall", 2.0)
WOOD = Material("wood", 2.0)
STEEL = Material("steel", 1.0, is_conductor=True)

MATERIALS = {m.name: m for m in (AIR, PLYWOOD, CONCRETE, DRYWALL, WOOD, STEEL)}


# ---------------------------------------------------------------------------
# Object shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Rectangular bar; length runs along local +x at yaw 0."""

    width_mm: float
    length_mm: float
    height_mm: float

    def dims_ok(self):
        return min(self.width_mm, self.length_mm, self.height_mm) > 0

    def local_half_extents(self):
        return 0.5 * self.length_mm, 0.5 * self.width_mm, 0.5 * self.height_mm

    def contains(self, dx, dy, dz):
        return (
            (np.abs(dx) <= 0.5 * self.length_mm)
            & (np.abs(dy) <= 0.5 * self.width_mm)
            & (np.abs(dz) <= 0.5 * self.height_mm)
        )


@dataclass(frozen=True)
class Cylinder:
    """Horizontal cylinder (pipe/rebar); axis along local +x at yaw 0."""

    radius_mm: float
    length_mm: float

    def dims_ok(self):
        return min(self.radius_mm, self.length_mm) > 0

    def local_half_extents(self):
        return 0.5 * self.length_mm, self.radius_mm, self.radius_mm

    def contains(self, dx, dy, dz):
        return (np.abs(dx) <= 0.5 * self.length_mm) & (
            dy * dy + dz * dz <= self.radius_mm**2
        )


Shape = Union[Box, Cylinder]


@dataclass(frozen=True)
class EmbeddedObject:
    """A shape at a position, rotated by yaw about the vertical axis.

    yaw is the angle of the shape's long axis from +x, degrees,
    normalized to [0, 180).
    """

    shape: Shape
    position_mm: tuple[float, float, float]
    material: Material
    yaw_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw_deg", self.yaw_deg % 180.0)

    def contains_points(self, x, y, z):
        """Vectorized containment test for voxel-center coordinates (mm)."""
        cx, cy, cz = self.position_mm
        a = math.radians(self.yaw_deg)
        ca, sa = math.cos(a), math.sin(a)
        rx, ry = x - cx, y - cy
        # rotate world offsets into the object frame (inverse rotation)
        dx = ca * rx + sa * ry
        dy = -sa * rx + ca * ry
        return self.shape.contains(dx, dy, z - cz)

    def world_half_extents(self):
        """Axis-aligned half extents (hx, hy, hz) of the rotated shape."""
        hl, hw, hz = self.shape.local_half_extents()
        a = math.radians(self.yaw_deg)
        ca, sa = abs(math.cos(a)), abs(math.sin(a))
        return ca * hl + sa * hw, sa * hl + ca * hw, hz


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scene:
    """A voxelizable description of the test surface and what hides in it."""

    extents_mm: tuple[float, float, float]
    voxel_size_mm: float
    layers: tuple[tuple[Material, float], ...] = ()
    objects: tuple[EmbeddedObject, ...] = ()
    ambient: Material = AIR

    def __post_init__(self):
        object.__setattr__(self, "extents_mm", tuple(float(v) for v in self.extents_mm))
        object.__setattr__(self, "layers", tuple((m, float(t)) for m, t in self.layers))
        object.__setattr__(self, "objects", tuple(self.objects))

    def dims(self, voxel_size_mm: Optional[float] = None):
        h = self.voxel_size_mm if voxel_size_mm is None else voxel_size_mm
        return tuple(int(round(e / h)) for e in self.extents_mm)

    def digest(self) -> str:
        """Content hash, stable across processes."""
        doc = scene_to_doc(self)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class PermittivityGrid:
    """Rasterized scene: relative permittivity per voxel plus conductor mask.

    eps_r and conductor_mask are (nx, ny, nz) arrays indexed [ix, iy, iz],
    voxel (i, j, k) centered at ((i+.5)h, (j+.5)h, (k+.5)h).  ambient_eps is
    what surrounds the scene when the solver pads the domain.
    """

    eps_r: np.ndarray
    conductor_mask: np.ndarray
    voxel_size_mm: float
    ambient_eps: float = 1.0
    scene_digest: str = ""

    @property
    def dims(self):
        return self.eps_r.shape

    def extents_mm(self):
        return tuple(n * self.voxel_size_mm for n in self.eps_r.shape)


# ---------------------------------------------------------------------------
# Validation and rasterization
# ---------------------------------------------------------------------------

_DIV_TOL = 1e-9


def _divisible(extent, h):
    n = extent / h
    return abs(n - round(n)) < _DIV_TOL and round(n) >= 1


def validate(scene: Scene) -> list[str]:
    """Check every Scene invariant; returns violation strings, empty if ok."""
    v = []
    if scene.voxel_size_mm <= 0:
        v.append(f"voxel_size_mm: must be > 0, got {scene.voxel_size_mm}")
        return v  # everything below needs a usable voxel size
    for axis, e in zip("xyz", scene.extents_mm):
        if e <= 0:
            v.append(f"extents_mm.{axis}: must be > 0, got {e}")
        elif not _divisible(e, scene.voxel_size_mm):
            v.append(
                f"extents_mm.{axis}: {e} not divisible into whole voxels "
                f"of {scene.voxel_size_mm}"
            )
    total = 0.0
    for i, (mat, t) in enumerate(scene.layers):
        if t <= 0:
            v.append(f"layers[{i}] ({mat.name}): thickness must be > 0, got {t}")
        total += t
    if total > scene.extents_mm[2] + _DIV_TOL:
        v.append(
            f"layers: total thickness {total} exceeds z extent {scene.extents_mm[2]}"
        )
    for i, obj in enumerate(scene.objects):
        name = f"objects[{i}] ({obj.material.name} {type(obj.shape).__name__.lower()})"
        if not obj.shape.dims_ok():
            v.append(f"{name}: dimensions must be positive")
            continue
        x, y, z = obj.position_mm
        hx, hy, hz = obj.world_half_extents()
        ex, ey, ez = scene.extents_mm
        if not (
            hx - _DIV_TOL <= x <= ex - hx + _DIV_TOL
            and hy - _DIV_TOL <= y <= ey - hy + _DIV_TOL
            and hz - _DIV_TOL <= z <= ez - hz + _DIV_TOL
        ):
            v.append(f"{name}: not fully inside extents at position {obj.position_mm}")
    return v


def rasterize(scene: Scene, voxel_size_mm: Optional[float] = None) -> PermittivityGrid:
    """Assign each voxel the material whose region contains its center.

    Objects override layers; ambient fills everything else.  An optional
    voxel size re-voxelizes the same geometry (extents must still divide).
    """
    if voxel_size_mm is not None:
        scene = Scene(
            scene.extents_mm, voxel_size_mm, scene.layers, scene.objects, scene.ambient
        )
    violations = validate(scene)
    if violations:
        raise SceneError(violations)

    h = scene.voxel_size_mm
    nx, ny, nz = scene.dims()
    eps = np.full((nx, ny, nz), scene.ambient.relative_permittivity)
    cond = np.zeros((nx, ny, nz), dtype=bool)
    if scene.ambient.is_conductor:
        cond[:] = True

    zc = (np.arange(nz) + 0.5) * h
    depth = 0.0
    for mat, t in scene.layers:
        sel = (zc >= depth - _DIV_TOL) & (zc < depth + t - _DIV_TOL)
        eps[:, :, sel] = mat.relative_permittivity
        cond[:, :, sel] = mat.is_conductor
        depth += t

    if scene.objects:
        xc = (np.arange(nx) + 0.5) * h
        yc = (np.arange(ny) + 0.5) * h
        X, Y, Z = np.meshgrid(xc, yc, zc, indexing="ij")
        for obj in scene.objects:
            inside = obj.contains_points(X, Y, Z)
            eps[inside] = obj.material.relative_permittivity
            cond[inside] = obj.material.is_conductor

    return PermittivityGrid(
        eps_r=eps,
        conductor_mask=cond,
        voxel_size_mm=h,
        ambient_eps=scene.ambient.relative_permittivity,
        scene_digest=scene.digest(),
    )


# ---------------------------------------------------------------------------
# Scene file format (JSON)
# ---------------------------------------------------------------------------

_MATERIAL_KEYS = {"name", "relative_permittivity", "is_conductor"}
_SCENE_KEYS = {"extents_mm", "voxel_size_mm", "layers", "objects", "ambient", "assembly"}
_LAYER_KEYS = {"material", "thickness_mm"}
_OBJECT_KEYS = {
    "shape",
    "position_mm",
    "yaw_deg",
    "material",
    "width_mm",
    "length_mm",
    "height_mm",
    "radius_mm",
}


def _reject_unknown(doc, allowed, where):
    unknown = set(doc) - allowed
    if unknown:
        raise SceneError([f"{where}: unknown keys {sorted(unknown)}"])


def material_to_doc(m: Material) -> dict:
    return {
        "name": m.name,
        "relative_permittivity": m.relative_permittivity,
        "is_conductor": m.is_conductor,
    }


def material_from_doc(doc) -> Material:
    if isinstance(doc, str):
        if doc not in MATERIALS:
            raise SceneError([f"material: unknown name {doc!r}"])
        return MATERIALS[doc]
    _reject_unknown(doc, _MATERIAL_KEYS, "material")
    return Material(
        name=doc["name"],
        relative_permittivity=float(doc.get("relative_permittivity", 1.0)),
        is_conductor=bool(doc.get("is_conductor", False)),
    )


def _object_to_doc(obj: EmbeddedObject) -> dict:
    doc = {
        "position_mm": list(obj.position_mm),
        "yaw_deg": obj.yaw_deg,
        "material": material_to_doc(obj.material),
    }
    if isinstance(obj.shape, Box):
        doc["shape"] = "box"
        doc["width_mm"] = obj.shape.width_mm
        doc["length_mm"] = obj.shape.length_mm
        doc["height_mm"] = obj.shape.height_mm
    else:
        doc["shape"] = "cylinder"
        doc["radius_mm"] = obj.shape.radius_mm
        doc["length_mm"] = obj.shape.length_mm
    return doc


def _object_from_doc(doc, where) -> EmbeddedObject:
    _reject_unknown(doc, _OBJECT_KEYS, where)
    kind = doc.get("shape")
    if kind == "box":
        shape = Box(float(doc["width_mm"]), float(doc["length_mm"]), float(doc["height_mm"]))
    elif kind == "cylinder":
        shape = Cylinder(float(doc["radius_mm"]), float(doc["length_mm"]))
    else:
        raise SceneError([f"{where}.shape: must be 'box' or 'cylinder', got {kind!r}"])
    return EmbeddedObject(
        shape=shape,
        position_mm=tuple(float(p) for p in doc["position_mm"]),
        material=material_from_doc(doc["material"]),
        yaw_deg=float(doc.get("yaw_deg", 0.0)),
    )


def scene_to_doc(scene: Scene) -> dict:
    return {
        "extents_mm": list(scene.extents_mm),
        "voxel_size_mm": scene.voxel_size_mm,
        "ambient": material_to_doc(scene.ambient),
        "layers": [
            {"material": material_to_doc(m), "thickness_mm": t} for m, t in scene.layers
        ],
        "objects": [_object_to_doc(o) for o in scene.objects],
    }


def scene_from_doc(doc: dict) -> Scene:
    """Parse the scene document; unknown keys are rejected at every level."""
    if not isinstance(doc, dict):
        raise SceneError(["scene: document must be an object"])
    _reject_unknown(doc, _SCENE_KEYS, "scene")
    try:
        extents = tuple(float(v) for v in doc["extents_mm"])
        voxel = float(doc["voxel_size_mm"])
    except KeyError as e:
        raise SceneError([f"scene: missing required key {e.args[0]!r}"]) from None
    layers = []
    for i, ld in enumerate(doc.get("layers", [])):
        _reject_unknown(ld, _LAYER_KEYS, f"layers[{i}]")
        layers.append((material_from_doc(ld["material"]), float(ld["thickness_mm"])))
    objects = [
        _object_from_doc(od, f"objects[{i}]") for i, od in enumerate(doc.get("objects", []))
    ]
    ambient = material_from_doc(doc.get("ambient", "air"))
    return Scene(
        extents_mm=extents,
        voxel_size_mm=voxel,
        layers=tuple(layers),
        objects=tuple(objects),
        ambient=ambient,
    )


def load_scene_file(path):
    """Load scene (and optional inline assembly doc) from a JSON file.

    Returns (Scene, assembly_doc_or_None); the electrodes module turns the
    assembly doc into an ElectrodeAssembly.
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    assembly_doc = doc.get("assembly") if isinstance(doc, dict) else None
    return scene_from_doc(doc), assembly_doc


def save_scene_file(scene: Scene, path, assembly_doc=None):
    doc = scene_to_doc(scene)
    if assembly_doc is not None:
        doc["assembly"] = assembly_doc
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Experiment presets
# ---------------------------------------------------------------------------
#
# Dimensions the source experiments did not specify: bars 30 mm wide x 20 mm
# thick, studs 45 x 90 mm cross-section, both shortened enough to keep the
# two fig7 bars from touching (crossed bars would merge into one detection).

PRESET_NAMES = (
    "fig7_plywood_cross_bars",
    "fig8_concrete_rebar",
    "fig9_wall_stud",
    "fig10_metal_and_wood",
)


def preset(name: str) -> Scene:
    """Synthetic reproduction of one of the four lab experiments."""
    # Geometry note: per-line baselines are medians, so an object must
    # cover well under half of every line it lies along, and separate
    # objects need enough clearance that their image blobs (object plus
    # roughly 30 mm of footprint smear each side) stay disconnected.
    if name == "fig7_plywood_cross_bars":
        # Two metal bars behind 25 mm plywood, one along the scan
        # direction (riding the second scan line) and one across it,
        # offset in both axes so the two image blobs stay disconnected.
        ex, ey = 400.0, 340.0
        return Scene(
            extents_mm=(ex, ey, 56.0),
            voxel_size_mm=2.0,
            layers=((PLYWOOD, 25.0),),
            objects=(
                EmbeddedObject(
                    Box(width_mm=30.0, length_mm=80.0, height_mm=20.0),
                    position_mm=(120.0, 120.0, 36.0),
                    material=STEEL,
                    yaw_deg=0.0,
                ),
                EmbeddedObject(
                    Box(width_mm=30.0, length_mm=100.0, height_mm=20.0),
                    position_mm=(260.0, 200.0, 36.0),
                    material=STEEL,
                    yaw_deg=90.0,
                ),
            ),
        )
    if name == "fig8_concrete_rebar":
        # One rebar behind a 35 mm concrete slab, perpendicular to travel,
        # centered mid-scan.
        ex, ey = 240.0, 280.0
        return Scene(
            extents_mm=(ex, ey, 64.0),
            voxel_size_mm=2.0,
            layers=((CONCRETE, 35.0),),
            objects=(
                EmbeddedObject(
                    Cylinder(radius_mm=6.0, length_mm=240.0),
                    position_mm=(ex / 2, ey / 2, 44.0),
                    material=STEEL,
                    yaw_deg=90.0,
                ),
            ),
        )
    if name == "fig9_wall_stud":
        # Wooden stud behind 13 mm wall sheeting, long axis across travel.
        ex, ey = 320.0, 280.0
        return Scene(
            extents_mm=(ex, ey, 120.0),
            voxel_size_mm=2.0,
            layers=((DRYWALL, 13.0),),
            objects=(
                EmbeddedObject(
                    Box(width_mm=45.0, length_mm=240.0, height_mm=90.0),
                    position_mm=(ex / 2, ey / 2, 59.0),
                    material=WOOD,
                    yaw_deg=90.0,
                ),
            ),
        )
    if name == "fig10_metal_and_wood":
        # One metal and one wooden bar behind 25 mm plywood, both across
        # travel so every line crosses both.
        ex, ey = 500.0, 280.0
        return Scene(
            extents_mm=(ex, ey, 56.0),
            voxel_size_mm=2.0,
            layers=((PLYWOOD, 25.0),),
            objects=(
                EmbeddedObject(
                    Box(width_mm=30.0, length_mm=240.0, height_mm=20.0),
                    position_mm=(140.0, ey / 2, 36.0),
                    material=STEEL,
                    yaw_deg=90.0,
                ),
                EmbeddedObject(
                    Box(width_mm=30.0, length_mm=240.0, height_mm=20.0),
                    position_mm=(360.0, ey / 2, 36.0),
                    material=WOOD,
                    yaw_deg=90.0,
                ),
            ),
        )
    raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def background(scene: Scene) -> Scene:
    """The same scene with every embedded object removed (layers only)."""
    return Scene(
        extents_mm=scene.extents_mm,
        voxel_size_mm=scene.voxel_size_mm,
        layers=scene.layers,
        objects=(),
        ambient=scene.ambient,
    )
