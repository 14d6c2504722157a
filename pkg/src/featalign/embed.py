"""Text-to-vector layer producing 768-dim GT representations.

Two providers exist: the deterministic builtin signed-feature-hashing
embedder (no learned weights, fully reproducible), and externally produced
vectors ingested from a JSON-Lines interchange file. The builtin embedder is
a stand-in whose only jobs are determinism and practical injectivity over
distinct token multisets; semantic quality comes from external vectors.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTextError,
    DegenerateVectorError,
    FeatAlignError,
    FormatError,
    ValidationError,
)
from .gt import GTScene, text_serialize_2d, text_serialize_3d
from .hashing import fnv1a_64

EMBED_DIM = 768
SPACES = ("2d", "3d")
BUILTIN_MODEL = "builtin-hash"

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


@dataclass
class Representation:
    """K x 768 matrix: K = 1 for the 3-D space, K = cameras for the 2-D space."""

    vectors: np.ndarray
    space_tag: str
    sample_id: str
    source: str  # builtin-hash | external | encoder

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValidationError(
                f"representation for {self.sample_id!r} must be a K x dim matrix, got {self.vectors.shape}"
            )
        # GT representations are pinned to the shared 768-dim space; encoder
        # output carries the model's latent width (768 in scored configs).
        if self.source != "encoder" and self.vectors.shape[1] != EMBED_DIM:
            raise ValidationError(
                f"representation for {self.sample_id!r} must be K x {EMBED_DIM}, got {self.vectors.shape}"
            )
        if self.space_tag not in SPACES:
            raise ValidationError(f"unknown space tag {self.space_tag!r}")


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def hash_embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Signed feature hashing: FNV-1a bucket + top-bit sign, L2-normalized."""
    toks = _tokens(text)
    if not toks:
        raise DegenerateTextError(f"no tokens after normalization in {text!r}")
    vec = np.zeros(dim)
    for tok in toks:
        h = fnv1a_64(tok.encode("utf-8"))
        sign = 1.0 if h < (1 << 63) else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm <= 1e-12:
        raise DegenerateVectorError(f"hash embedding cancelled to zero for {text!r}")
    return vec / norm


def embed_scene(scene: GTScene, space: str, provider=None) -> Representation:
    """Embed one scene's serialized text; 3d -> 1 row, 2d -> one row per camera."""
    if space not in SPACES:
        raise ValidationError(f"unknown space {space!r}")
    provider = provider if provider is not None else hash_embed
    try:
        if space == "3d":
            rows = [provider(text_serialize_3d(scene))]
        else:
            rows = [provider(text_serialize_2d(scene, c)) for c in range(scene.cameras)]
    except FeatAlignError as e:
        raise type(e)(f"embedding sample {scene.sample_id!r}: {e.message}") from e
    return Representation(
        vectors=np.stack(rows),
        space_tag=space,
        sample_id=scene.sample_id,
        source=BUILTIN_MODEL if provider is hash_embed else "external",
    )


def load_external_embeddings(path) -> dict[tuple[str, str], Representation]:
    """Read the JSONL interchange file; keys are (sample_id, space)."""
    out: dict[tuple[str, str], Representation] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            for key in ("sample_id", "space", "model", "vectors"):
                if key not in rec:
                    raise FormatError(f"{path}:{lineno}: missing key {key!r}")
            sid, space = str(rec["sample_id"]), str(rec["space"])
            if space not in SPACES:
                raise FormatError(f"{path}:{lineno}: unknown space {space!r}")
            rows = rec["vectors"]
            if not isinstance(rows, list) or not rows:
                raise FormatError(f"{path}:{lineno}: 'vectors' must be a non-empty list of rows")
            for r in rows:
                if not isinstance(r, list) or len(r) != EMBED_DIM:
                    raise FormatError(
                        f"{path}:{lineno}: sample {sid!r} row length "
                        f"{len(r) if isinstance(r, list) else '?'} != {EMBED_DIM}"
                    )
            if (sid, space) in out:
                raise FormatError(f"{path}:{lineno}: duplicate record for ({sid!r}, {space!r})")
            out[(sid, space)] = Representation(
                vectors=np.array(rows, dtype=np.float64),
                space_tag=space,
                sample_id=sid,
                source="external",
            )
    return out


def write_embeddings(path, reps: list[Representation], model: str):
    """Write representations as interchange JSONL, one record per (sample, space).

    Floats are rendered with 9 significant digits, which round-trips
    f32-precision values exactly and is stable under load -> rewrite.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reps:
            rows = ", ".join(
                "[" + ", ".join(f"{v:.9g}" for v in row) + "]" for row in rep.vectors
            )
            fh.write(
                '{"sample_id": %s, "space": %s, "model": %s, "vectors": [%s]}\n'
                % (json.dumps(rep.sample_id), json.dumps(rep.space_tag), json.dumps(model), rows)
            )
