"""Scene ground truth: annotated boxes plus deterministic text serialization.

The text templates are fixed English sentences with fixed decimal precision;
3-D positions/sizes/velocities print with 1 decimal and yaw with 2, 2-D
fields with 3. Objects are sorted by (category, position) so that permuting
the input box lists can never change the output string. The exact template
strings are load-bearing: downstream embeddings are functions of these bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .errors import ValidationError

DEFAULT_CAMERAS = 6


@dataclass
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float
    vx: float
    vy: float
    category: str

    def validate(self, ctx: str):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValidationError(f"{ctx}: box size (field 'l'/'w'/'h') must be positive")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValidationError(f"{ctx}: field 'yaw' out of range (-pi, pi]: {self.yaw!r}")
        if not self.category:
            raise ValidationError(f"{ctx}: field 'category' must be non-empty")


@dataclass
class Box2D:
    camera_id: int
    cx: float
    cy: float
    bw: float
    bh: float
    category: str

    def validate(self, ctx: str, cameras: int):
        if not (0 <= self.camera_id < cameras):
            raise ValidationError(f"{ctx}: field 'camera_id' {self.camera_id} not in [0, {cameras})")
        for name in ("cx", "cy", "bw", "bh"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{ctx}: field {name!r} out of [0, 1]: {v!r}")
        if not (self.bw > 0 and self.bh > 0):
            raise ValidationError(f"{ctx}: field 'bw'/'bh' must be positive")
        if not self.category:
            raise ValidationError(f"{ctx}: field 'category' must be non-empty")


@dataclass
class GTScene:
    sample_id: str
    cameras: int = DEFAULT_CAMERAS
    boxes3d: list[Box3D] = field(default_factory=list)
    boxes2d: list[Box2D] = field(default_factory=list)

    def validate(self, ctx: str = ""):
        ctx = ctx or f"scene {self.sample_id!r}"
        if not self.sample_id:
            raise ValidationError(f"{ctx}: field 'sample_id' must be non-empty")
        if self.cameras < 1:
            raise ValidationError(f"{ctx}: field 'cameras' must be >= 1")
        for i, b in enumerate(self.boxes3d):
            b.validate(f"{ctx} boxes3d[{i}]")
        for i, b in enumerate(self.boxes2d):
            b.validate(f"{ctx} boxes2d[{i}]", self.cameras)


_BOX3D_FIELDS = ("x", "y", "z", "l", "w", "h", "yaw", "vx", "vy", "category")
_BOX2D_FIELDS = ("camera_id", "cx", "cy", "bw", "bh", "category")


def _record(raw, fields, ctx: str) -> dict:
    if not isinstance(raw, dict):
        raise ValidationError(f"{ctx}: expected an object, got {type(raw).__name__}")
    out = {}
    for name in fields:
        if name not in raw:
            raise ValidationError(f"{ctx}: missing field {name!r}")
        out[name] = raw[name]
    return out


def parse_gt_file(path) -> list[GTScene]:
    """Read and validate a GT JSON file (array of scene objects)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: top level must be a JSON array of scenes")
    scenes = []
    seen = set()
    for i, rec in enumerate(raw):
        ctx = f"record {i}"
        top = _record(rec, ("sample_id", "cameras", "boxes3d", "boxes2d"), ctx)
        try:
            boxes3d = [
                Box3D(**{k: (str(v) if k == "category" else float(v)) for k, v in _record(b, _BOX3D_FIELDS, f"{ctx} boxes3d[{j}]").items()})
                for j, b in enumerate(top["boxes3d"])
            ]
            boxes2d = [
                Box2D(**{k: (str(v) if k == "category" else (int(v) if k == "camera_id" else float(v))) for k, v in _record(b, _BOX2D_FIELDS, f"{ctx} boxes2d[{j}]").items()})
                for j, b in enumerate(top["boxes2d"])
            ]
            scene = GTScene(
                sample_id=str(top["sample_id"]),
                cameras=int(top["cameras"]),
                boxes3d=boxes3d,
                boxes2d=boxes2d,
            )
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{ctx}: malformed value: {e}") from e
        scene.validate(ctx)
        if scene.sample_id in seen:
            raise ValidationError(f"{ctx}: duplicate sample_id {scene.sample_id!r}")
        seen.add(scene.sample_id)
        scenes.append(scene)
    return scenes


def write_gt_file(path, scenes: list[GTScene]):
    """Write scenes as canonical JSON (sorted keys, 2-space indent)."""
    payload = [asdict(s) for s in scenes]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def text_serialize_3d(scene: GTScene) -> str:
    """One deterministic sentence describing all 3-D boxes of a scene."""
    boxes = sorted(scene.boxes3d, key=lambda b: (b.category, b.x, b.y))
    parts = [f"There are {len(boxes)} objects."]
    for b in boxes:
        parts.append(
            f"{b.category} at ({b.x:.1f}, {b.y:.1f}, {b.z:.1f}), "
            f"size ({b.l:.1f}, {b.w:.1f}, {b.h:.1f}), "
            f"yaw {b.yaw:.2f}, velocity ({b.vx:.1f}, {b.vy:.1f})."
        )
    return " ".join(parts)


def text_serialize_2d(scene: GTScene, camera_id: int) -> str:
    """One deterministic sentence for one camera's 2-D boxes."""
    if not (0 <= camera_id < scene.cameras):
        raise ValidationError(
            f"camera_id {camera_id} out of range [0, {scene.cameras}) for scene {scene.sample_id!r}"
        )
    boxes = sorted(
        (b for b in scene.boxes2d if b.camera_id == camera_id),
        key=lambda b: (b.category, b.cx, b.cy),
    )
    parts = [f"There are {len(boxes)} objects."]
    for b in boxes:
        parts.append(f"{b.category} at ({b.cx:.3f}, {b.cy:.3f}), size ({b.bw:.3f}, {b.bh:.3f}).")
    return " ".join(parts)
