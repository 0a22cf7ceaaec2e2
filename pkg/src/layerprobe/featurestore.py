"""FeatureStore v1: the binary exchange format between extraction and analysis.

Layout, all little-endian::

    "BPFS" | version u32 | depth u32 | rows u32 | dim u32 | label count u32
    rows*dim float32 features, row-major
    rows uint16 labels

The label count always equals the row count.  Version 1 carries no checksum:
a flipped payload byte is read back as an altered value.
"""

from pathlib import Path
import struct

import numpy as np

from .errors import CorruptDataError, FormatError, InvalidArgumentError, UnsupportedVersionError
from .features import FeatureSet

MAGIC = b"BPFS"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
MAX_LABEL = 2**16 - 1


def expected_size(rows, dim):
    return HEADER.size + 4 * rows * dim + 2 * rows


def encode_feature_store(fs: FeatureSet) -> bytes:
    rows, dim = fs.features.shape
    if fs.labels.size and fs.labels.max() > MAX_LABEL:
        raise InvalidArgumentError(f"labels above {MAX_LABEL} do not fit the u16 label field")
    header = HEADER.pack(MAGIC, VERSION, fs.depth, rows, dim, rows)
    payload = np.ascontiguousarray(fs.features, dtype="<f4").tobytes()
    labels = np.ascontiguousarray(fs.labels, dtype="<u2").tobytes()
    return header + payload + labels


def decode_feature_store(raw: bytes, name="<bytes>") -> FeatureSet:
    if len(raw) < HEADER.size:
        raise CorruptDataError(f"{name}: file shorter than the {HEADER.size}-byte header", len(raw))
    magic, version, depth, rows, dim, label_count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    if version > VERSION:
        raise UnsupportedVersionError(f"{name}: feature store version {version} is newer than {VERSION}")
    if version < 1:
        raise FormatError(f"{name}: invalid feature store version {version}")
    if label_count != rows:
        raise CorruptDataError(f"{name}: label count {label_count} differs from row count {rows}", 20)
    size = expected_size(rows, dim)
    if len(raw) != size:
        raise CorruptDataError(f"{name}: length {len(raw)} bytes, header implies {size}", min(len(raw), size))
    end = HEADER.size + 4 * rows * dim
    features = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=HEADER.size).reshape(rows, dim)
    labels = np.frombuffer(raw, dtype="<u2", count=rows, offset=end)
    return FeatureSet(depth, features.astype(np.float32), labels.astype(np.int64))


def write_feature_store(fs: FeatureSet, path):
    Path(path).write_bytes(encode_feature_store(fs))


def read_feature_store(path) -> FeatureSet:
    path = Path(path)
    return decode_feature_store(path.read_bytes(), str(path))
