"""
Acoustic feature transforms and the per-utterance feature record
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..utils.constants import CMVN_STD_FLOOR, DELTA_WINDOW, NUM_PHONE_CLASSES
from ..utils.exceptions import ShapeError


def _float_dtype(array: np.ndarray):
    return array.dtype if np.issubdtype(array.dtype, np.floating) else np.float64


def add_deltas(mel: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """
    Append first-order regression deltas to a T x d feature matrix.

    Edge frames are replicated, so a single frame has zero delta.

    Args:
        mel (np.ndarray): T x d log-mel features
        window (int): Regression half-width N

    Returns:
        np.ndarray: T x 2d matrix ``[mel, delta]``
    """
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ShapeError("add_deltas", mel.shape, ("T", "d"))
    frames = mel.shape[0]
    values = mel.astype(np.float64)
    padded = np.pad(values, ((window, window), (0, 0)), mode="edge")
    delta = np.zeros_like(values)
    for n in range(1, window + 1):
        delta += n * (padded[window + n:window + n + frames] - padded[window - n:window - n + frames])
    delta /= 2 * sum(n * n for n in range(1, window + 1))
    return np.concatenate([values, delta], axis=1).astype(_float_dtype(mel))


def cmvn(features: np.ndarray) -> np.ndarray:
    """Per-utterance mean and variance normalization of every column."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError("cmvn", features.shape, ("T", "d"))
    values = features.astype(np.float64)
    centered = values - values.mean(axis=0, keepdims=True)
    std = values.std(axis=0, keepdims=True)
    normalized = centered / np.maximum(std, CMVN_STD_FLOOR)
    # Constant columns map to exact zeros
    normalized[:, std[0] <= CMVN_STD_FLOOR] = 0.0
    return normalized.astype(_float_dtype(features))


def prepare_inputs(mel: np.ndarray) -> np.ndarray:
    """Encoder input: deltas appended first, then CMVN over all columns."""
    return cmvn(add_deltas(mel))


@dataclass
class UtteranceFeatures:
    """
    One utterance.

    Args:
        utterance_id (str): Unique id
        speaker_id (int): Speaker label
        mel (np.ndarray): T x d_mel log-mel features
        target (np.ndarray): T x d_out reconstruction target (already normalized)
        phonemes (np.ndarray, optional): Length-T frame labels
    """

    utterance_id: str
    speaker_id: int
    mel: np.ndarray
    target: np.ndarray
    phonemes: Optional[np.ndarray] = None
    _inputs: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.mel = np.asarray(self.mel)
        self.target = np.asarray(self.target)
        if self.mel.ndim != 2 or self.target.ndim != 2 or self.mel.shape[0] != self.target.shape[0]:
            raise ShapeError(f"utterance {self.utterance_id}", self.mel.shape, self.target.shape,
                             detail="mel and target must share the frame count")
        if self.phonemes is not None:
            self.phonemes = np.asarray(self.phonemes, dtype=np.int64)
            if self.phonemes.shape != (self.num_frames,):
                raise ShapeError(f"utterance {self.utterance_id}", self.phonemes.shape,
                                 (self.num_frames,), detail="label length must equal T")
            if self.phonemes.size and (self.phonemes.min() < 0 or self.phonemes.max() >= NUM_PHONE_CLASSES):
                raise ShapeError(f"utterance {self.utterance_id}", self.phonemes.shape,
                                 (self.num_frames,),
                                 detail=f"phoneme labels must lie in [0, {NUM_PHONE_CLASSES})")

    @property
    def num_frames(self) -> int:
        return self.mel.shape[0]

    @property
    def has_phonemes(self) -> bool:
        return self.phonemes is not None

    @property
    def inputs(self) -> np.ndarray:
        """CMVN-normalized log-mel + delta matrix (computed once)."""
        if self._inputs is None:
            self._inputs = prepare_inputs(self.mel)
        return self._inputs
