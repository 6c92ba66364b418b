"""Binary persistence for SortedIndex.

Layout (little-endian)::

    magic "CDKIDX1\\0" | u32 version | u32 vocab_size | u32 bucket_count
    per bucket: u32 width | u32 count | u32 min_len | u32 max_len
                count x u32 true_lengths | count*width x u32 cells
    u64 FNV-1a checksum of every preceding byte
"""

import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from core.errors import FormatError
from corpus.index import Bucket, SortedIndex

logger = logging.getLogger(__name__)

MAGIC = b"CDKIDX1\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIII")
_BUCKET = struct.Struct("<IIII")
_CHECKSUM = struct.Struct("<Q")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def encode_index(idx: SortedIndex) -> bytes:
    parts: List[bytes] = [_HEADER.pack(MAGIC, VERSION, idx.vocab_size, len(idx.buckets))]
    for b in idx.buckets:
        parts.append(_BUCKET.pack(b.width, b.count, b.min_len, b.max_len))
        parts.append(b.true_lengths.astype("<u4").tobytes())
        parts.append(b.rows.astype("<u4").tobytes())
    body = b"".join(parts)
    return body + _CHECKSUM.pack(fnv1a_64(body))


def decode_index(data: bytes) -> SortedIndex:
    """Parse and validate an encoded index.

    Raises:
        FormatError: Bad magic, version, checksum or truncated payload.
        CorruptionError: The payload violates the bucket invariants.
    """
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise FormatError("file too short for an index header")
    magic, version, vocab_size, bucket_count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}")
    body, (stored,) = data[: -_CHECKSUM.size], _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
    if fnv1a_64(body) != stored:
        raise FormatError("checksum mismatch")

    offset = _HEADER.size
    buckets = []
    for _ in range(bucket_count):
        if offset + _BUCKET.size > len(body):
            raise FormatError("truncated bucket header")
        width, count, min_len, max_len = _BUCKET.unpack_from(body, offset)
        offset += _BUCKET.size
        if width == 0:
            raise FormatError("bucket width must be positive")
        n_cells = count + count * width
        if offset + 4 * n_cells > len(body):
            raise FormatError("truncated bucket payload")
        lengths = np.frombuffer(body, dtype="<u4", count=count, offset=offset)
        offset += 4 * count
        rows = np.frombuffer(body, dtype="<u4", count=count * width, offset=offset)
        offset += 4 * count * width
        buckets.append(Bucket(width, min_len, max_len, rows.reshape(count, width), lengths))
    if offset != len(body):
        raise FormatError("trailing bytes after last bucket")

    idx = SortedIndex(buckets, vocab_size)
    idx.validate()
    return idx


def save_index(idx: SortedIndex, path: Union[str, Path]):
    data = encode_index(idx)
    with open(path, "wb") as f:
        f.write(data)
    logger.info(f"Saved index with {idx.total_count} keywords to {path} ({len(data)} bytes)")


def load_index(path: Union[str, Path]) -> SortedIndex:
    with open(path, "rb") as f:
        data = f.read()
    idx = decode_index(data)
    logger.info(f"Loaded index with {idx.total_count} keywords from {path}")
    return idx
