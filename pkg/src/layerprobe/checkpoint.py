"""Binary checkpoints of network parameters.

Layout, all little-endian: ``"BPNC"``, version u32, config JSON length u32,
the UTF-8 JSON of the NetConfig, then every tensor as rank u32, rank x u32
dims and raw scalars in the configured precision.  Tensor order: kernels
1..13, classifier, then the normalization statistics of layers 1..13, each a
(2, C) tensor stacking running mean and running variance.
"""

import json
from pathlib import Path
import struct

import numpy as np

from . import ops
from .errors import CorruptDataError, FormatError, InvalidArgumentError, UnsupportedVersionError
from .network import NUM_LAYERS, NetConfig, NetParams

MAGIC = b"BPNC"
VERSION = 1
_U32 = struct.Struct("<I")


def _tensors(params):
    yield from params.kernels
    yield params.classifier
    for s in params.norm_stats:
        yield np.stack([s.mean, s.var])


def encode_checkpoint(params: NetParams, config: NetConfig) -> bytes:
    dtype = np.dtype(config.dtype).newbyteorder("<")
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(blob)), blob]
    for t in _tensors(params):
        parts.append(_U32.pack(t.ndim))
        parts.extend(_U32.pack(d) for d in t.shape)
        parts.append(np.ascontiguousarray(t, dtype=dtype).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw, name):
        self.raw = raw
        self.name = name
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CorruptDataError(f"{self.name}: unexpected end of checkpoint", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(raw: bytes, name="<bytes>"):
    """Returns ``(config, params)``."""
    r = _Reader(raw, name)
    magic = r.take(4) if len(raw) >= 4 else raw
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version > VERSION:
        raise UnsupportedVersionError(f"{name}: checkpoint version {version} is newer than {VERSION}")
    if version < 1:
        raise FormatError(f"{name}: invalid checkpoint version {version}")
    length = r.u32()
    try:
        cfg_dict = json.loads(r.take(length).decode("utf-8"))
        config = NetConfig(**cfg_dict)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, InvalidArgumentError) as exc:
        raise FormatError(f"{name}: unreadable network config: {exc}") from exc
    dtype = np.dtype(config.dtype).newbyteorder("<")

    def tensor(expected_shape):
        start = r.pos
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        if shape != expected_shape:
            raise CorruptDataError(f"{name}: tensor shape {shape}, expected {expected_shape}", start)
        count = int(np.prod(shape))
        data = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
        return data.astype(config.dtype)

    kernels = []
    for n in range(1, NUM_LAYERS + 1):
        cin = config.input_channels if n == 1 else config.width
        kernels.append(tensor((3, 3, cin, config.width)))
    classifier = tensor((config.width, config.classes))
    stats = []
    for n in range(1, NUM_LAYERS + 1):
        cin = config.input_channels if n == 1 else config.width
        mv = tensor((2, cin))
        stats.append(ops.NormStats(mv[0].copy(), mv[1].copy(), ops.BN_MOMENTUM, config.norm_mode))
    if r.pos != len(raw):
        raise CorruptDataError(f"{name}: {len(raw) - r.pos} trailing bytes after last tensor", r.pos)
    return config, NetParams(kernels, classifier, stats)


def save_checkpoint(path, params, config):
    Path(path).write_bytes(encode_checkpoint(params, config))


def load_checkpoint(path):
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))
