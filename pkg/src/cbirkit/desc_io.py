"""DESC record files: one combined descriptor per image.

Layout (little-endian): magic "DESC", version u16=1, dim u32, then records
of image_id (u16 len + UTF-8) followed by dim x f32 until end of stream.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from .descriptors import GlobalDescriptor
from .errors import BadMagic, DimensionMismatch, TruncatedStream, UnsupportedVersion

MAGIC = b"DESC"
VERSION = 1


def write_descriptor_records(records: Sequence[tuple[str, GlobalDescriptor]]) -> bytes:
    if not records:
        raise ValueError("no descriptor records to write")
    dim = records[0][1].dim
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<I", dim)
    for image_id, descriptor in records:
        if descriptor.dim != dim:
            raise DimensionMismatch(
                f"record {image_id!r} has dim {descriptor.dim}, file dim is {dim}"
            )
        encoded = image_id.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += np.ascontiguousarray(descriptor.values, dtype="<f4").tobytes()
    return bytes(out)


def read_descriptor_records(data: bytes) -> tuple[int, list[tuple[str, GlobalDescriptor]]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}", offset=0)
    if len(data) < 10:
        raise TruncatedStream("stream ends inside header", offset=len(data))
    version = struct.unpack_from("<H", data, 4)[0]
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {VERSION})", offset=4)
    dim = struct.unpack_from("<I", data, 6)[0]

    records: list[tuple[str, GlobalDescriptor]] = []
    pos = 10
    while pos < len(data):
        if pos + 2 > len(data):
            raise TruncatedStream("stream ends inside record header", offset=pos)
        id_len = struct.unpack_from("<H", data, pos)[0]
        pos += 2
        if pos + id_len + dim * 4 > len(data):
            raise TruncatedStream("stream ends inside record", offset=pos)
        image_id = data[pos:pos + id_len].decode("utf-8")
        pos += id_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += dim * 4
        records.append((image_id, GlobalDescriptor(values)))
    return dim, records
