"""
Binary feature files

Layout (little-endian): magic ``AALB``, u32 version, u32 id length + utf-8 id,
u32 speaker, u32 T, u32 d_mel, u32 d_out, u8 has_labels, f32 mel (T x d_mel,
row-major), f32 target (T x d_out), then when has_labels: u32 label count and
that many u16 labels.
"""
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .features import UtteranceFeatures
from ..utils.constants import FEATURE_FORMAT_VERSION, FEATURE_MAGIC
from ..utils.exceptions import (
    FeatureFileError,
    FeatureFileMagicError,
    FeatureFileShapeError,
    FeatureFileTruncatedError,
    ShapeError,
)

PathLike = Union[str, Path]
_F32 = np.dtype("<f4")
_U16 = np.dtype("<u2")


def write_feature_file(path: PathLike, utterance: UtteranceFeatures) -> Path:
    path = Path(path)
    encoded_id = utterance.utterance_id.encode("utf-8")
    frames, mel_dim = utterance.mel.shape
    target_dim = utterance.target.shape[1]
    parts = [
        FEATURE_MAGIC,
        struct.pack("<II", FEATURE_FORMAT_VERSION, len(encoded_id)),
        encoded_id,
        struct.pack("<IIIIB", utterance.speaker_id, frames, mel_dim, target_dim,
                    int(utterance.has_phonemes)),
        np.ascontiguousarray(utterance.mel, dtype=_F32).tobytes(),
        np.ascontiguousarray(utterance.target, dtype=_F32).tobytes(),
    ]
    if utterance.has_phonemes:
        parts.append(struct.pack("<I", utterance.phonemes.size))
        parts.append(utterance.phonemes.astype(_U16).tobytes())

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(b"".join(parts))
    os.replace(tmp, path)
    return path


def read_feature_file(path: PathLike) -> UtteranceFeatures:
    """
    Read one feature file.

    Raises:
        FeatureFileMagicError: Not a feature file
        FeatureFileTruncatedError: File ends early
        FeatureFileShapeError: Label count differs from the frame count, or trailing bytes
        FeatureFileError: Unreadable file, unsupported version or a non-utf-8 id
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"{path}: cannot read feature file ({exc.strerror or exc})") from exc
    offset = 0

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(blob):
            raise FeatureFileTruncatedError(
                f"{path}: needs {offset + size} bytes, file has {len(blob)}"
            )
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    magic = blob[:len(FEATURE_MAGIC)]
    if magic != FEATURE_MAGIC:
        raise FeatureFileMagicError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    take(len(FEATURE_MAGIC))
    version, id_length = struct.unpack("<II", take(8))
    if version != FEATURE_FORMAT_VERSION:
        raise FeatureFileError(f"{path}: format version {version}, expected {FEATURE_FORMAT_VERSION}")
    try:
        utterance_id = take(id_length).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FeatureFileError(f"{path}: utterance id is not valid utf-8") from exc
    speaker, frames, mel_dim, target_dim, has_labels = struct.unpack("<IIIIB", take(17))

    mel = np.frombuffer(take(frames * mel_dim * 4), dtype=_F32).reshape(frames, mel_dim)
    target = np.frombuffer(take(frames * target_dim * 4), dtype=_F32).reshape(frames, target_dim)
    phonemes = None
    if has_labels:
        count = struct.unpack("<I", take(4))[0]
        if count != frames:
            raise FeatureFileShapeError(
                f"{path}: label length {count} differs from frame count {frames}"
            )
        phonemes = np.frombuffer(take(count * 2), dtype=_U16).astype(np.int64)
    if offset != len(blob):
        raise FeatureFileShapeError(f"{path}: {len(blob) - offset} unexpected trailing bytes")

    try:
        return UtteranceFeatures(
            utterance_id=utterance_id,
            speaker_id=int(speaker),
            mel=mel.astype(np.float32),
            target=target.astype(np.float32),
            phonemes=phonemes,
        )
    except ShapeError as exc:
        raise FeatureFileShapeError(f"{path}: {exc}") from exc
