"""Frozen-backbone feature caching and deterministic stub adapters.

Backbones (object detector, text encoder) are pluggable adapters behind a
fixed interface; their outputs are written once to a binary cache so training
never invokes the backbone. The stub adapters hash object identity and tokens
into fixed vectors, giving a deterministic, machine-independent stand-in.

Cache format (PVFC v1), little-endian:
    magic "PVFC" | u32 version | u32 record_count | u32 N | u32 D
    then per record: u16 idlen | idlen UTF-8 bytes | N*D float32, row-major
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .synthetic import VISIBLE_ATTRIBUTES, SceneBox

MAGIC = b"PVFC"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_IDLEN = struct.Struct("<H")


class CacheFormatError(ValueError):
    """Raised for bad magic bytes, version, or header mismatches."""


@dataclass(frozen=True)
class BoxFeatureSet:
    """Per-image detector output: an N x D feature matrix."""

    features: np.ndarray
    image_ref: str


class BoxFeatureAdapter(Protocol):
    n_boxes: int
    dim: int

    def features(self, image_ref: str) -> np.ndarray: ...

    def boxes(self, image_ref: str) -> np.ndarray: ...


class TextAdapter(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Binary cache
# ---------------------------------------------------------------------------

def write_feature_cache(
    path: str | Path,
    refs: Sequence[str],
    adapter,
) -> None:
    """Run the adapter over refs and write the cache file.

    The adapter is either a BoxFeatureAdapter (features(ref) -> N x D) or any
    callable ref -> array; 1-D outputs are stored as 1 x D rows (used for text
    embeddings).
    """
    get = adapter.features if hasattr(adapter, "features") else adapter
    arrays = []
    for ref in refs:
        arr = np.asarray(get(ref), dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"adapter output for {ref!r} must be 1-D or 2-D")
        arrays.append(arr)
    if not arrays:
        raise ValueError("cannot write an empty cache")
    n, d = arrays[0].shape
    for ref, arr in zip(refs, arrays):
        if arr.shape != (n, d):
            raise ValueError(f"inconsistent feature shape for {ref!r}: {arr.shape} != {(n, d)}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(refs), n, d))
        for ref, arr in zip(refs, arrays):
            encoded = ref.encode("utf-8")
            fh.write(_IDLEN.pack(len(encoded)))
            fh.write(encoded)
            fh.write(arr.astype("<f4").tobytes(order="C"))


class FeatureCache:
    """Opened cache with O(1) lookup by image ref.

    The file is memory-mapped, so one opened cache can be shared by
    concurrent readers.
    """

    def __init__(self, path: str | Path, expect_shape: tuple[int, int] | None = None):
        self.path = Path(path)
        self._buf = np.memmap(self.path, dtype=np.uint8, mode="r")
        header = bytes(self._buf[: _HEADER.size])
        magic, version, count, n, d = _HEADER.unpack(header)
        if magic != MAGIC:
            raise CacheFormatError(f"bad magic bytes {magic!r}")
        if version != VERSION:
            raise CacheFormatError(f"unsupported cache version {version}")
        if expect_shape is not None and (n, d) != tuple(expect_shape):
            raise CacheFormatError(
                f"cache stores {n}x{d} features, expected {expect_shape[0]}x{expect_shape[1]}"
            )
        self.n_boxes, self.dim, self.count = n, d, count
        self._offsets: dict[str, int] = {}
        pos = _HEADER.size
        row_bytes = n * d * 4
        raw = self._buf.tobytes()
        for _ in range(count):
            (idlen,) = _IDLEN.unpack_from(raw, pos)
            pos += _IDLEN.size
            ref = raw[pos : pos + idlen].decode("utf-8")
            pos += idlen
            self._offsets[ref] = pos
            pos += row_bytes

    def __contains__(self, image_ref: str) -> bool:
        return image_ref in self._offsets

    @property
    def refs(self) -> list[str]:
        return list(self._offsets)

    def get(self, image_ref: str) -> BoxFeatureSet:
        if image_ref not in self._offsets:
            raise KeyError(f"image ref {image_ref!r} not in cache {self.path}")
        pos = self._offsets[image_ref]
        flat = np.frombuffer(
            self._buf, dtype="<f4", count=self.n_boxes * self.dim, offset=pos
        )
        return BoxFeatureSet(
            features=flat.reshape(self.n_boxes, self.dim).copy(), image_ref=image_ref
        )


def read_feature_cache(
    path: str | Path, image_ref: str, expect_shape: tuple[int, int] | None = None
) -> BoxFeatureSet:
    return FeatureCache(path, expect_shape=expect_shape).get(image_ref)


def expected_cache_size(ref_lengths: Iterable[int], n: int, d: int) -> int:
    """Byte size the format implies: header + per-record id and payload."""
    return _HEADER.size + sum(_IDLEN.size + L + n * d * 4 for L in ref_lengths)


# ---------------------------------------------------------------------------
# Deterministic hash embeddings
# ---------------------------------------------------------------------------

def _hash_vector(key: str, dim: int) -> np.ndarray:
    """Unit vector derived from sha256(key); stable across runs and machines."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


class StubBoxAdapter:
    """Oracle detector over synthetic scenes.

    Each drawn object becomes one box whose feature vector is the sum of hash
    vectors for its name and visible attribute values; remaining slots are
    filled with per-(image, slot) background vectors. Box geometry comes from
    the scene metadata, so attention maps can be drawn over known rectangles.
    """

    def __init__(self, scenes: dict[str, list[SceneBox]], n_boxes: int = 6,
                 dim: int = 48, image_size: int = 64):
        self.scenes = scenes
        self.n_boxes = n_boxes
        self.dim = dim
        self.image_size = image_size
        self._memo: dict[str, np.ndarray] = {}

    def _vec(self, key: str) -> np.ndarray:
        if key not in self._memo:
            self._memo[key] = _hash_vector(key, self.dim)
        return self._memo[key]

    def features(self, image_ref: str) -> np.ndarray:
        boxes = self.scenes[image_ref]
        out = np.zeros((self.n_boxes, self.dim), dtype=np.float32)
        for j, box in enumerate(boxes[: self.n_boxes]):
            vec = self._vec(f"name:{box.name}").copy()
            for attr in VISIBLE_ATTRIBUTES:
                if attr == "ObjectName":
                    continue
                vec += self._vec(f"{attr}={box.visible[attr]}")
            out[j] = vec
        for j in range(len(boxes), self.n_boxes):
            out[j] = 0.5 * self._vec(f"background:{image_ref}:{j}")
        return out

    def boxes(self, image_ref: str) -> np.ndarray:
        """N x 4 rectangles (x0, y0, x1, y1); background slots get small
        deterministic rectangles."""
        scene = self.scenes[image_ref]
        out = np.zeros((self.n_boxes, 4), dtype=np.int64)
        for j, box in enumerate(scene[: self.n_boxes]):
            out[j] = box.rect
        s = self.image_size
        for j in range(len(scene), self.n_boxes):
            digest = hashlib.sha256(f"bgbox:{image_ref}:{j}".encode()).digest()
            x0 = digest[0] % max(s - 8, 1)
            y0 = digest[1] % max(s - 8, 1)
            out[j] = (x0, y0, min(x0 + 7, s - 1), min(y0 + 7, s - 1))
        return out


class StubTextAdapter:
    """Bag-of-tokens hash embedding standing in for a frozen text encoder.

    Identical sentences map to identical vectors; distinct sentences collide
    only if their token bags match.
    """

    def __init__(self, dim: int = 96):
        self.dim = dim
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            raise ValueError("cannot embed empty text")
        out = np.zeros(self.dim, dtype=np.float32)
        for token in tokens:
            if token not in self._memo:
                self._memo[token] = _hash_vector(f"token:{token}", self.dim)
            out += self._memo[token]
        return out / np.sqrt(len(tokens))
