"""FMAP binary container: activation tensors exchanged with feature exporters.

Layout (all integers little-endian):

    magic           4 bytes ASCII "FMAP"
    version         u16 = 1
    image_id_len    u16, then image_id UTF-8 bytes
    layer_count     u16 (>= 1)
    per layer, in file order:
        layer_id_len  u16, then layer_id UTF-8 bytes
        H             u32
        W             u32
        K             u32
        payload       H*W*K IEEE-754 binary32, index (h, w, k) with k fastest

Element (h, w, k) therefore lives at payload offset ((h*W + w)*K + k) * 4,
i.e. a C-contiguous channel-last array. Non-finite activations are rejected
on both read and write: max-pooling over NaN is order-dependent and would
poison every descriptor downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    EmptyLayerSet,
    NonFiniteValue,
    TruncatedStream,
    UnsupportedVersion,
    ZeroDimension,
)

MAGIC = b"FMAP"
VERSION = 1


@dataclass(frozen=True)
class FeatureMap:
    """One H x W x K activation tensor from a single CNN layer."""

    layer_id: str
    values: np.ndarray  # float32, shape (H, W, K)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be 3-D (H, W, K), got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class FeatureMapSet:
    """Ordered per-layer feature maps for one image.

    Layer order is significant: it fixes the concatenation order of
    multi-layer descriptors.
    """

    image_id: str
    layers: tuple[FeatureMap, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer(self, layer_id: str) -> FeatureMap:
        for fmap in self.layers:
            if fmap.layer_id == layer_id:
                return fmap
        raise KeyError(layer_id)

    @property
    def layer_ids(self) -> list[str]:
        return [fmap.layer_id for fmap in self.layers]


@dataclass(frozen=True)
class Violation:
    """One invariant failure found by :func:`validate`."""

    kind: str          # "zero_dimension" | "non_finite" | "duplicate_layer_id" | "empty_layer_set"
    layer_id: str | None = None
    index: int | None = None

    def __str__(self) -> str:
        parts = [self.kind]
        if self.layer_id is not None:
            parts.append(f"layer={self.layer_id!r}")
        if self.index is not None:
            parts.append(f"index={self.index}")
        return " ".join(parts)


def validate(fmap_set: FeatureMapSet) -> list[Violation]:
    """Check every FeatureMapSet invariant; return one record per failure.

    Violations are data, not exceptions: callers that want hard failures
    (the readers and writers here do) raise on a non-empty result.
    """
    violations: list[Violation] = []
    if not fmap_set.layers:
        violations.append(Violation("empty_layer_set"))
    seen: set[str] = set()
    for fmap in fmap_set.layers:
        if fmap.layer_id in seen:
            violations.append(Violation("duplicate_layer_id", layer_id=fmap.layer_id))
        seen.add(fmap.layer_id)
        if min(fmap.values.shape) == 0:
            violations.append(Violation("zero_dimension", layer_id=fmap.layer_id))
            continue
        finite = np.isfinite(fmap.values.reshape(-1))
        if not finite.all():
            idx = int(np.flatnonzero(~finite)[0])
            violations.append(Violation("non_finite", layer_id=fmap.layer_id, index=idx))
    return violations


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

class _Reader:
    """Cursor over a byte stream that reports the offset of any shortfall."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str, layer_id: str | None = None) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStream(
                f"stream ends inside {what} (need {n} bytes)",
                offset=self.pos, layer_id=layer_id,
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what: str, layer_id: str | None = None) -> int:
        return struct.unpack("<H", self.take(2, what, layer_id))[0]

    def u32(self, what: str, layer_id: str | None = None) -> int:
        return struct.unpack("<I", self.take(4, what, layer_id))[0]


def read_feature_map_set(data: bytes) -> FeatureMapSet:
    """Parse and validate one FMAP container."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {bytes(data[:4])!r}", offset=0)
    r = _Reader(data)
    r.take(4, "magic")
    version = r.u16("version")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {VERSION})", offset=4)
    id_len = r.u16("image_id length")
    image_id = r.take(id_len, "image_id").decode("utf-8")
    layer_count = r.u16("layer count")
    if layer_count == 0:
        raise EmptyLayerSet("layer count is zero", offset=r.pos - 2)

    layers: list[FeatureMap] = []
    seen: set[str] = set()
    for _ in range(layer_count):
        lid_len = r.u16("layer_id length")
        layer_id = r.take(lid_len, "layer_id").decode("utf-8")
        dims_offset = r.pos
        h = r.u32("H", layer_id)
        w = r.u32("W", layer_id)
        k = r.u32("K", layer_id)
        if h == 0 or w == 0 or k == 0:
            raise ZeroDimension(
                f"dimensions H={h} W={w} K={k}", offset=dims_offset, layer_id=layer_id,
            )
        payload_offset = r.pos
        payload = r.take(h * w * k * 4, "payload", layer_id)
        values = np.frombuffer(payload, dtype="<f4").reshape(h, w, k)
        finite = np.isfinite(values.reshape(-1))
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise NonFiniteValue(
                f"non-finite activation at flat index {bad}",
                offset=payload_offset + bad * 4, layer_id=layer_id,
            )
        if layer_id in seen:
            raise ValueError(f"duplicate layer_id {layer_id!r} in stream")
        seen.add(layer_id)
        layers.append(FeatureMap(layer_id, values))
    return FeatureMapSet(image_id, tuple(layers))


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def write_feature_map_set(fmap_set: FeatureMapSet) -> bytes:
    """Serialize to the bit-exact FMAP layout; read(write(s)) == s."""
    violations = validate(fmap_set)
    for v in violations:
        if v.kind == "empty_layer_set":
            raise EmptyLayerSet("cannot write a set with no layers")
        if v.kind == "zero_dimension":
            raise ZeroDimension("zero-sized layer", layer_id=v.layer_id)
        if v.kind == "non_finite":
            raise NonFiniteValue(
                f"non-finite activation at flat index {v.index}", layer_id=v.layer_id,
            )
        if v.kind == "duplicate_layer_id":
            raise ValueError(f"duplicate layer_id {v.layer_id!r}")

    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    image_id = fmap_set.image_id.encode("utf-8")
    out += struct.pack("<H", len(image_id))
    out += image_id
    out += struct.pack("<H", len(fmap_set.layers))
    for fmap in fmap_set.layers:
        layer_id = fmap.layer_id.encode("utf-8")
        out += struct.pack("<H", len(layer_id))
        out += layer_id
        out += struct.pack("<III", fmap.height, fmap.width, fmap.channels)
        out += np.ascontiguousarray(fmap.values, dtype="<f4").tobytes()
    return bytes(out)


def read_feature_map_file(path) -> FeatureMapSet:
    with open(path, "rb") as fh:
        return read_feature_map_set(fh.read())


def write_feature_map_file(path, fmap_set: FeatureMapSet) -> None:
    data = write_feature_map_set(fmap_set)
    with open(path, "wb") as fh:
        fh.write(data)
