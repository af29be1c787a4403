"""fp16/fp32 parameter storage and the binary checkpoint format.

Layout (little-endian)::

    b"ASC1"  u32 version  u8 precision  u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 dtype, u8 rank,
                u32 * rank dims, raw payload

precision: 0 = fp32, 1 = fp16. dtype: 0 = float32, 1 = float16.
"""

from __future__ import annotations

import logging
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigurationError
from .model import ParameterStore

log = logging.getLogger(__name__)

MAGIC = b"ASC1"
VERSION = 1
PRECISION_TAGS = {"fp32": 0, "fp16": 1}
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f2"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
FP16_MAX = float(np.finfo(np.float16).max)


def quantize_store(params: ParameterStore, precision: str) -> ParameterStore:
    """Round every tensor to the storage precision.

    fp16 uses IEEE binary16 round-to-nearest-even; magnitudes beyond the
    largest finite half are saturated to +-65504 and counted in a warning.
    """
    if precision not in PRECISION_TAGS:
        raise ConfigurationError(f"precision must be fp32 or fp16, got {precision!r}")
    out = {}
    saturated = 0
    for name, value in params.tensors.items():
        if precision == "fp16":
            over = np.abs(value) > FP16_MAX
            n_over = int(np.count_nonzero(over))
            if n_over:
                saturated += n_over
                value = np.clip(value, -FP16_MAX, FP16_MAX)
            out[name] = value.astype(np.float16)
        else:
            out[name] = value.astype(np.float32)
    if saturated:
        log.warning("fp16 storage saturated %d value(s) to +-%g", saturated, FP16_MAX)
    store = ParameterStore(out, precision)
    store.saturated = saturated
    return store


def dequantize_load(params: ParameterStore, dtype=np.float32) -> ParameterStore:
    """Widen stored tensors to the working precision, keeping the precision tag."""
    return ParameterStore({k: v.astype(dtype) for k, v in params.tensors.items()}, params.precision)


def encode(params: ParameterStore) -> bytes:
    tag = PRECISION_TAGS[params.precision]
    chunks = [MAGIC, struct.pack("<IBI", VERSION, tag, len(params.tensors))]
    for name, value in params.tensors.items():
        arr = np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<"))
        if arr.dtype not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode(blob: bytes, path=None) -> ParameterStore:
    def fail(msg):
        raise CheckpointError(msg, path)

    if blob[:4] != MAGIC:
        fail(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        version, tag, count = struct.unpack_from("<IBI", blob, 4)
        if version != VERSION:
            fail(f"unsupported checkpoint version {version}")
        precision = {v: k for k, v in PRECISION_TAGS.items()}.get(tag)
        if precision is None:
            fail(f"unknown precision tag {tag}")
        pos = 13
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            if code not in CODE_DTYPES:
                fail(f"tensor {name!r}: unknown dtype code {code}")
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dtype = CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                fail(f"tensor {name!r}: payload truncated")
            tensors[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        fail(f"corrupt checkpoint ({exc})")
    if pos != len(blob):
        fail(f"{len(blob) - pos} trailing bytes")
    return ParameterStore(tensors, precision)


def save_checkpoint(params: ParameterStore, path, precision: str | None = None) -> None:
    """Quantize to ``precision`` (default: the store's tag) and write atomically."""
    stored = quantize_store(params, precision or params.precision)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(stored))
    os.replace(tmp, path)


def load_checkpoint(path, widen=True) -> ParameterStore:
    """Read a checkpoint; by default widen it to float32 for computation."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint ({exc.strerror})", path) from None
    stored = decode(blob, path)
    return dequantize_load(stored) if widen else stored
