"""
Versioned binary weight files

Layout (little-endian):

    magic  b"AALW"
    u32    format version
    u32    config JSON length, then the JSON (includes share_weights)
    u8     float width in bytes (4 or 8)
    u32    number of arrays
    per array, in ``parameter_shapes`` order:
        u16 name length, name (utf-8), u8 ndim, u32 x ndim dims, raw floats
    footer b"AEND" followed by u64 length of everything before the footer
"""
import hashlib
import json
import logging
import os
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .config import EncoderConfig
from .model import EncoderWeights, parameter_shapes
from ..utils.constants import CHECKPOINT_FOOTER, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC
from ..utils.exceptions import (
    CheckpointFormatError,
    CheckpointReadError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
_FOOTER_SIZE = len(CHECKPOINT_FOOTER) + 8
_FLOAT_TYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _encode(weights: EncoderWeights) -> bytes:
    named = weights.named_parameters()
    widths = {t.dtype.itemsize for _, t in named}
    if len(widths) != 1 or next(iter(widths)) not in _FLOAT_TYPES:
        raise CheckpointFormatError(f"Weights must share one float width, got {sorted(widths)}")
    width = widths.pop()
    config_blob = json.dumps(weights.config.to_dict(), sort_keys=True).encode("utf-8")

    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_FORMAT_VERSION),
        struct.pack("<I", len(config_blob)),
        config_blob,
        struct.pack("<B", width),
        struct.pack("<I", len(named)),
    ]
    for name, tensor in named:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype=_FLOAT_TYPES[width]).tobytes())
    payload = b"".join(parts)
    return payload + CHECKPOINT_FOOTER + struct.pack("<Q", len(payload))


def save_weights(weights: EncoderWeights, path: PathLike) -> Path:
    """
    Write ``weights`` atomically (temporary file, then rename).

    Args:
        weights (EncoderWeights): Model to persist
        path: Destination file

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(_encode(weights))
    os.replace(tmp, path)
    logger.info(f"💾 Saved encoder weights to {path}")
    return path


class _Reader:
    def __init__(self, blob: bytes, source: Path):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise CheckpointTruncatedError(
                f"{self.source}: needs {end} bytes, payload holds {len(self.blob)}"
            )
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values if len(values) > 1 else values[0]


def load_weights(path: PathLike) -> EncoderWeights:
    """
    Read a weight file written by ``save_weights``.

    Shared-mode files come back with a single aliased block.

    Raises:
        CheckpointReadError: File missing or unreadable
        CheckpointFormatError: Bad magic or unreadable header
        CheckpointVersionError: Unsupported format version
        CheckpointTruncatedError: Missing or damaged tail
        CheckpointShapeError: Array shapes disagree with the embedded config
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointReadError(f"{path}: cannot read weight file ({exc.strerror or exc})") from exc
    magic_len = len(CHECKPOINT_MAGIC)
    if len(blob) < magic_len + 4:
        raise CheckpointTruncatedError(f"{path}: only {len(blob)} bytes, header incomplete")
    if blob[:magic_len] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad magic {blob[:magic_len]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    version = struct.unpack("<I", blob[magic_len:magic_len + 4])[0]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_FORMAT_VERSION}"
        )

    if len(blob) < _FOOTER_SIZE:
        raise CheckpointTruncatedError(f"{path}: footer missing")
    footer = blob[-_FOOTER_SIZE:]
    recorded = struct.unpack("<Q", footer[len(CHECKPOINT_FOOTER):])[0]
    payload_len = len(blob) - _FOOTER_SIZE
    if footer[:len(CHECKPOINT_FOOTER)] != CHECKPOINT_FOOTER or recorded != payload_len:
        raise CheckpointTruncatedError(
            f"{path}: footer damaged or file cut short ({len(blob)} bytes on disk)"
        )

    reader = _Reader(blob[:payload_len], path)
    reader.take(magic_len + 4)
    config_blob = reader.take(reader.unpack("<I"))
    try:
        config = EncoderConfig.from_dict(json.loads(config_blob.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable embedded config ({exc})") from exc

    width = reader.unpack("<B")
    if width not in _FLOAT_TYPES:
        raise CheckpointFormatError(f"{path}: unsupported float width {width}")
    dtype = _FLOAT_TYPES[width]

    expected = parameter_shapes(config)
    count = reader.unpack("<I")
    if count != len(expected):
        raise CheckpointShapeError(
            f"{path}: config implies {len(expected)} arrays, file holds {count}"
        )

    arrays: Dict[str, np.ndarray] = {}
    for expected_name, expected_shape in expected:
        name = reader.take(reader.unpack("<H")).decode("utf-8", errors="replace")
        ndim = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        shape = tuple(dims) if isinstance(dims, tuple) else (dims,)
        if name != expected_name or shape != expected_shape:
            raise CheckpointShapeError(
                f"{path}: array {name} has shape {shape}, "
                f"config expects {expected_name} with shape {expected_shape}"
            )
        size = int(np.prod(shape)) * width
        values = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape)
        arrays[name] = values.astype(dtype.newbyteorder("="), copy=True)

    if reader.offset != payload_len:
        raise CheckpointFormatError(f"{path}: {payload_len - reader.offset} unexpected trailing bytes")
    return EncoderWeights.from_arrays(config, arrays)


def weights_checksum(weights: EncoderWeights) -> str:
    """SHA-256 of the serialized parameters (config included)."""
    return hashlib.sha256(_encode(weights)).hexdigest()
