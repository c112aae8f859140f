"""Descriptor index: class representatives, exhaustive L2 queries, persistence.

Stage one ranks classes by the L2 distance between the query descriptor and
one representative vector per class (the element-wise mean of the class's
descriptors, or one deterministic exemplar). Stage two optionally re-ranks
the individual images inside chosen candidate classes.

Search is an exact linear scan; at the dataset sizes this index targets
(<= 1e5 entries) a scan is fast and trivially correct, and the query
contract leaves room to swap in an accelerated scan later.

INDX container layout (all integers little-endian):

    magic "INDX" | version u16=1 | representative_mode u8 | dim u32
    class_count u32 | entry_count u64
    per class:  class_id u32, representative dim x f32
    per entry:  image_id (u16 len + UTF-8), class_id u32, descriptor dim x f32
    trailing CRC32 (u32) over all preceding bytes
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .descriptors import GlobalDescriptor
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DimensionMismatch,
    EmptyIndex,
    KOutOfRange,
    TruncatedStream,
    UnknownClass,
    UnsupportedVersion,
)

MAGIC = b"INDX"
VERSION = 1


class RepresentativeMode(enum.Enum):
    MEAN = 0
    EXEMPLAR = 1

    @classmethod
    def parse(cls, name: "str | RepresentativeMode") -> "RepresentativeMode":
        if isinstance(name, RepresentativeMode):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown representative mode {name!r}") from None


@dataclass(frozen=True)
class IndexEntry:
    image_id: str
    class_id: int
    descriptor: GlobalDescriptor

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


@dataclass(frozen=True)
class QueryResult:
    ranked: tuple[tuple[int | str, float], ...]
    stage: str  # "CLASS" | "IMAGE"


@dataclass(frozen=True)
class DescriptorIndex:
    dim: int
    entries: tuple[IndexEntry, ...]
    representatives: dict[int, GlobalDescriptor]
    representative_mode: RepresentativeMode

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.representatives)

    def entries_of(self, class_id: int) -> list[IndexEntry]:
        return [e for e in self.entries if e.class_id == class_id]


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_index(entries: Iterable[IndexEntry],
                mode: "str | RepresentativeMode" = RepresentativeMode.MEAN) -> DescriptorIndex:
    """Group entries by class and compute one representative per class.

    Entries are canonicalized to (class_id, image_id) order so that the
    built index (and its serialized bytes) never depend on insertion order.
    MEAN representatives accumulate in float64 over image_id order; EXEMPLAR
    picks the entry with the lexicographically smallest image_id.
    """
    mode = RepresentativeMode.parse(mode)
    entries = sorted(entries, key=lambda e: (e.class_id, e.image_id))
    if not entries:
        raise EmptyIndex("cannot build an index from zero entries")
    dim = entries[0].descriptor.dim
    for e in entries:
        if e.descriptor.dim != dim:
            raise DimensionMismatch(
                f"entry {e.image_id!r} has dim {e.descriptor.dim}, index dim is {dim}"
            )

    representatives: dict[int, GlobalDescriptor] = {}
    by_class: dict[int, list[IndexEntry]] = {}
    for e in entries:
        by_class.setdefault(e.class_id, []).append(e)
    for class_id, members in by_class.items():
        if mode is RepresentativeMode.EXEMPLAR:
            rep_values = members[0].descriptor.values
        else:
            acc = np.zeros(dim, dtype=np.float64)
            for m in members:
                acc += m.descriptor.values
            rep_values = (acc / len(members)).astype(np.float32)
        representatives[class_id] = GlobalDescriptor(
            rep_values, provenance={"kind": "representative", "class_id": class_id,
                                    "mode": mode.name, "members": len(members)},
        )
    return DescriptorIndex(
        dim=dim,
        entries=tuple(entries),
        representatives=representatives,
        representative_mode=mode,
    )


# ---------------------------------------------------------------------------
# Distances and queries
# ---------------------------------------------------------------------------

def l2_distance(a: GlobalDescriptor, b: GlobalDescriptor) -> float:
    """Euclidean distance with float64 accumulation over float32 inputs."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    diff = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def query_classes(index: DescriptorIndex, query: GlobalDescriptor, k: int) -> QueryResult:
    """Rank the k nearest class representatives, ascending distance.

    Ties break on ascending class_id, so output is independent of the
    order entries were inserted in.
    """
    if query.dim != index.dim:
        raise DimensionMismatch(f"query dim {query.dim} vs index dim {index.dim}")
    class_ids = index.class_ids
    if not 1 <= k <= len(class_ids):
        raise KOutOfRange(f"k={k} outside [1, {len(class_ids)}]")
    scored = [(l2_distance(query, index.representatives[cid]), cid) for cid in class_ids]
    scored.sort()
    return QueryResult(
        ranked=tuple((cid, dist) for dist, cid in scored[:k]),
        stage="CLASS",
    )


def refine(index: DescriptorIndex, query: GlobalDescriptor,
           candidate_classes: Sequence[int], k: int) -> QueryResult:
    """Stage two: rank individual images within the candidate classes."""
    if query.dim != index.dim:
        raise DimensionMismatch(f"query dim {query.dim} vs index dim {index.dim}")
    candidates = list(dict.fromkeys(candidate_classes))
    if not candidates:
        raise UnknownClass("candidate class list is empty")
    known = set(index.representatives)
    unknown = [c for c in candidates if c not in known]
    if unknown:
        raise UnknownClass(f"classes {unknown} not in index")
    wanted = set(candidates)
    pool = [e for e in index.entries if e.class_id in wanted]
    if not 1 <= k <= len(pool):
        raise KOutOfRange(f"k={k} outside [1, {len(pool)}]")
    scored = [(l2_distance(query, e.descriptor), e.image_id) for e in pool]
    scored.sort()
    return QueryResult(
        ranked=tuple((image_id, dist) for dist, image_id in scored[:k]),
        stage="IMAGE",
    )


# ---------------------------------------------------------------------------
# Persistence (INDX container)
# ---------------------------------------------------------------------------

def save_index(index: DescriptorIndex) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<B", index.representative_mode.value)
    out += struct.pack("<I", index.dim)
    out += struct.pack("<I", len(index.representatives))
    out += struct.pack("<Q", len(index.entries))
    for class_id in sorted(index.representatives):
        out += struct.pack("<I", class_id)
        out += np.ascontiguousarray(
            index.representatives[class_id].values, dtype="<f4").tobytes()
    for e in index.entries:
        image_id = e.image_id.encode("utf-8")
        out += struct.pack("<H", len(image_id))
        out += image_id
        out += struct.pack("<I", e.class_id)
        out += np.ascontiguousarray(e.descriptor.values, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def load_index(data: bytes) -> DescriptorIndex:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}", offset=0)
    if len(data) < 6:
        raise TruncatedStream("stream ends inside version field", offset=4)
    version = struct.unpack_from("<H", data, 4)[0]
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {VERSION})", offset=4)
    # verify the trailer before trusting any length field
    if len(data) < 27:  # 23-byte header + 4-byte CRC
        raise TruncatedStream("stream shorter than minimal index", offset=len(data))
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise ChecksumMismatch(
            f"CRC32 {actual_crc:#010x} != stored {stored_crc:#010x}",
            offset=len(data) - 4,
        )

    pos = 6
    mode_value, dim, class_count = struct.unpack_from("<BII", data, pos)
    pos += 9
    entry_count = struct.unpack_from("<Q", data, pos)[0]
    pos += 8
    try:
        mode = RepresentativeMode(mode_value)
    except ValueError:
        raise UnsupportedVersion(f"unknown representative mode byte {mode_value}",
                                 offset=6) from None

    def need(n: int, what: str):
        if pos + n > len(data) - 4:
            raise TruncatedStream(f"stream ends inside {what}", offset=pos)

    representatives: dict[int, GlobalDescriptor] = {}
    for _ in range(class_count):
        need(4 + dim * 4, "class representative")
        class_id = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += dim * 4
        representatives[class_id] = GlobalDescriptor(
            values, provenance={"kind": "representative", "class_id": class_id,
                                "mode": mode.name},
        )

    entries: list[IndexEntry] = []
    for _ in range(entry_count):
        need(2, "entry header")
        id_len = struct.unpack_from("<H", data, pos)[0]
        pos += 2
        need(id_len + 4 + dim * 4, "entry record")
        image_id = data[pos:pos + id_len].decode("utf-8")
        pos += id_len
        class_id = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += dim * 4
        entries.append(IndexEntry(image_id, class_id, GlobalDescriptor(values)))

    if pos != len(data) - 4:
        raise TruncatedStream("trailing bytes before checksum", offset=pos)
    return DescriptorIndex(
        dim=dim,
        entries=tuple(entries),
        representatives=representatives,
        representative_mode=mode,
    )


def save_index_file(path, index: DescriptorIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(save_index(index))


def load_index_file(path) -> DescriptorIndex:
    with open(path, "rb") as fh:
        return load_index(fh.read())
