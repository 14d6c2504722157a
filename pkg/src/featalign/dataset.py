"""Phase-indexed feature-map dataset: a directory with a JSON manifest and
one binary file per training phase.

Record file layout (little-endian): magic "BIFM", u16 version, u32 record
count, then per record: u16 id length, UTF-8 sample id, u8 ndim, ndim x u32
dims, f32 payload in row-major order. Files store f32; arrays are widened to
f64 on load and narrowed back on save, so a load/save cycle is lossless.
Records are written in sorted sample-id order for byte-stable output.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

MANIFEST_NAME = "manifest.json"
FEATURE_MAGIC = b"BIFM"
FEATURE_VERSION = 1


def phase_filename(phase: int) -> str:
    return f"phase_{phase:03d}.bifm"


@dataclass
class FeatureDataset:
    module_tag: str
    space: str  # "2d" | "3d"
    shape: tuple[int, ...]  # [C,H,W] or [Cam,C,H,W]
    phases: list[int]
    sample_ids: list[str]
    features: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def validate(self):
        if self.space not in ("2d", "3d"):
            raise ValidationError(f"unknown space {self.space!r}")
        expected_ndim = 4 if self.space == "2d" else 3
        if len(self.shape) != expected_ndim:
            raise ValidationError(
                f"space {self.space!r} needs {expected_ndim}-d features, shape is {self.shape}"
            )
        if sorted(self.phases) != self.phases or len(set(self.phases)) != len(self.phases):
            raise ValidationError(f"phases must be strictly increasing, got {self.phases}")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValidationError("duplicate sample_ids in manifest")
        for key, arr in self.features.items():
            if tuple(arr.shape) != tuple(self.shape):
                raise ValidationError(f"feature {key} has shape {arr.shape}, manifest says {self.shape}")

    def per_camera_shape(self) -> tuple[int, int, int]:
        return tuple(self.shape[-3:])

    def cameras(self) -> int:
        return self.shape[0] if self.space == "2d" else 1

    def get(self, sample_id: str, phase: int) -> np.ndarray:
        try:
            return self.features[(sample_id, phase)]
        except KeyError:
            raise ValidationError(f"no feature for sample {sample_id!r} phase {phase}") from None

    def save(self, dirpath):
        self.validate()
        os.makedirs(dirpath, exist_ok=True)
        manifest = {
            "version": FEATURE_VERSION,
            "module_tag": self.module_tag,
            "space": self.space,
            "shape": list(self.shape),
            "phases": list(self.phases),
            "sample_ids": list(self.sample_ids),
        }
        with open(os.path.join(dirpath, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        for phase in self.phases:
            with open(os.path.join(dirpath, phase_filename(phase)), "wb") as fh:
                ids = sorted(self.sample_ids)
                fh.write(struct.pack("<4sHI", FEATURE_MAGIC, FEATURE_VERSION, len(ids)))
                for sid in ids:
                    arr = self.get(sid, phase)
                    raw = sid.encode("utf-8")
                    fh.write(struct.pack("<H", len(raw)))
                    fh.write(raw)
                    fh.write(struct.pack("<B", arr.ndim))
                    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, dirpath) -> "FeatureDataset":
        manifest_path = os.path.join(dirpath, MANIFEST_NAME)
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except FileNotFoundError:
            raise FormatError(f"{dirpath}: missing {MANIFEST_NAME}") from None
        except json.JSONDecodeError as e:
            raise FormatError(f"{manifest_path}: invalid JSON: {e}") from e
        for key in ("version", "module_tag", "space", "shape", "phases", "sample_ids"):
            if key not in manifest:
                raise FormatError(f"{manifest_path}: missing key {key!r}")
        if manifest["version"] != FEATURE_VERSION:
            raise FormatError(f"{manifest_path}: unsupported version {manifest['version']}")
        ds = cls(
            module_tag=str(manifest["module_tag"]),
            space=str(manifest["space"]),
            shape=tuple(int(d) for d in manifest["shape"]),
            phases=[int(p) for p in manifest["phases"]],
            sample_ids=[str(s) for s in manifest["sample_ids"]],
        )
        id_set = set(ds.sample_ids)
        for phase in ds.phases:
            path = os.path.join(dirpath, phase_filename(phase))
            ds._load_phase(path, phase, id_set)
        ds.validate()
        return ds

    def _load_phase(self, path, phase: int, id_set: set):
        def take(fh, n, what):
            blob = fh.read(n)
            if len(blob) != n:
                raise FormatError(f"{path}: truncated while reading {what}")
            return blob

        try:
            fh = open(path, "rb")
        except FileNotFoundError:
            raise FormatError(f"{path}: missing phase file") from None
        with fh:
            magic, version, count = struct.unpack("<4sHI", take(fh, 10, "header"))
            if magic != FEATURE_MAGIC:
                raise FormatError(f"{path}: bad magic {magic!r}")
            if version != FEATURE_VERSION:
                raise FormatError(f"{path}: unsupported version {version}")
            seen = set()
            for i in range(count):
                (id_len,) = struct.unpack("<H", take(fh, 2, f"record {i} id length"))
                sid = take(fh, id_len, f"record {i} id").decode("utf-8")
                (ndim,) = struct.unpack("<B", take(fh, 1, f"record {i} ndim"))
                dims = struct.unpack(f"<{ndim}I", take(fh, 4 * ndim, f"record {i} dims"))
                if tuple(dims) != tuple(self.shape):
                    raise FormatError(
                        f"{path}: record {i} ({sid!r}) has dims {dims}, manifest says {self.shape}"
                    )
                numel = int(np.prod(dims))
                payload = take(fh, 4 * numel, f"record {i} payload")
                if sid not in id_set:
                    raise FormatError(f"{path}: record {i} id {sid!r} not in manifest")
                if sid in seen:
                    raise FormatError(f"{path}: duplicate record for {sid!r}")
                seen.add(sid)
                arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
                self.features[(sid, phase)] = arr
            if fh.read(1):
                raise FormatError(f"{path}: trailing bytes after {count} records")
            if seen != id_set:
                missing = sorted(id_set - seen)[:10]
                raise FormatError(f"{path}: missing records for sample_ids: {', '.join(missing)}")
