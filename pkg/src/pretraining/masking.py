"""
Frame downsampling and the masked-reconstruction corruption policy
"""
import enum
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..data_processing.data_loader import round_half_up
from ..utils.exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

DECIMATE = "decimate"
STACK = "stack"
DOWNSAMPLE_MODES = (DECIMATE, STACK)


@dataclass(frozen=True)
class MaskPolicy:
    """
    Corruption policy applied to each pre-training example.

    ``select_fraction`` of the (downsampled) frames are picked; each picked
    frame is zeroed, replaced by another frame of the same utterance or kept.
    """

    select_fraction: float = 0.15
    zero_prob: float = 0.8
    replace_prob: float = 0.1
    keep_prob: float = 0.1
    downsample_factor: int = 3
    downsample_mode: str = DECIMATE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.select_fraction < 1.0:
            raise ConfigError(f"mask.select_fraction must lie in (0, 1), got {self.select_fraction}")
        probs = (self.zero_prob, self.replace_prob, self.keep_prob)
        if min(probs) < 0 or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ConfigError(
                f"mask.zero_prob + mask.replace_prob + mask.keep_prob must equal 1, got {sum(probs)}"
            )
        if self.downsample_factor < 1:
            raise ConfigError(f"mask.downsample_factor must be >= 1, got {self.downsample_factor}")
        if self.downsample_mode not in DOWNSAMPLE_MODES:
            raise ConfigError(
                f"mask.downsample_mode must be one of {DOWNSAMPLE_MODES}, got {self.downsample_mode!r}"
            )

    def to_dict(self):
        return asdict(self)


class MaskAction(enum.IntEnum):
    ZERO = 0
    REPLACE = 1
    KEEP = 2


@dataclass
class MaskSpec:
    """
    Corruption decisions for one example.

    ``selected`` lists the chosen frame indices in increasing order;
    ``actions`` and ``sources`` run parallel to it (source is -1 unless the
    action is REPLACE). ``mask`` marks the selected frames over all T' frames.
    """

    selected: np.ndarray
    actions: np.ndarray
    sources: np.ndarray
    mask: np.ndarray

    @classmethod
    def empty(cls, num_frames: int) -> "MaskSpec":
        return cls(
            selected=np.zeros(0, dtype=np.int64),
            actions=np.zeros(0, dtype=np.int8),
            sources=np.zeros(0, dtype=np.int64),
            mask=np.zeros(num_frames, dtype=bool),
        )

    @property
    def is_empty(self) -> bool:
        return self.selected.size == 0

    def count(self, action: MaskAction) -> int:
        return int(np.count_nonzero(self.actions == action))

    def entries(self) -> List[Tuple[int, MaskAction, Optional[int]]]:
        return [
            (int(i), MaskAction(a), int(s) if a == MaskAction.REPLACE else None)
            for i, a, s in zip(self.selected, self.actions, self.sources)
        ]


def downsample(features: np.ndarray, factor: int = 3, mode: str = DECIMATE) -> np.ndarray:
    """
    Shorten a T x d matrix to T' = ceil(T / factor) frames.

    ``decimate`` keeps frames 0, factor, 2*factor, ...; ``stack``
    concatenates each group of ``factor`` consecutive frames (d * factor
    columns), zero-padding the last group.
    """
    if factor < 1:
        raise ConfigError(f"Downsample factor must be >= 1, got {factor}")
    features = np.asarray(features)
    if features.ndim not in (1, 2):
        raise ShapeError("downsample", features.shape, ("T", "d"))
    if mode == DECIMATE or factor == 1:
        return features[::factor]
    if mode != STACK:
        raise ConfigError(f"Unknown downsample mode {mode!r}")
    frames = features.shape[0]
    groups = -(-frames // factor)
    padded = np.zeros((groups * factor,) + features.shape[1:], dtype=features.dtype)
    padded[:frames] = features
    return padded.reshape(groups, -1)


def apply_mask(
    features: np.ndarray,
    policy: MaskPolicy,
    rng: np.random.Generator,
    length: Optional[int] = None,
) -> Tuple[np.ndarray, MaskSpec]:
    """
    Corrupt a T' x d matrix according to ``policy``.

    Args:
        features (np.ndarray): Downsampled frames
        policy (MaskPolicy): Selection fraction and action probabilities
        rng (np.random.Generator): Stream owned by this example
        length (int, optional): Valid frames; rows past it are padding and never selected

    Returns:
        Tuple[np.ndarray, MaskSpec]: Corrupted copy and the decisions taken
    """
    features = np.asarray(features)
    total = features.shape[0]
    length = total if length is None else int(length)
    if not 0 <= length <= total:
        raise ShapeError("apply_mask", (length,), (total,), detail="length exceeds frame count")

    count = round_half_up(policy.select_fraction * length)
    if count == 0:
        logger.warning(f"⚠️ {length} frame(s) yield an empty mask; example skipped for loss")
        return features.copy(), MaskSpec.empty(total)

    selected = np.sort(rng.choice(length, size=count, replace=False))
    draws = rng.random(count)
    actions = np.full(count, MaskAction.KEEP, dtype=np.int8)
    actions[draws < policy.zero_prob + policy.replace_prob] = MaskAction.REPLACE
    actions[draws < policy.zero_prob] = MaskAction.ZERO

    sources = np.full(count, -1, dtype=np.int64)
    replace = np.flatnonzero(actions == MaskAction.REPLACE)
    if replace.size:
        if length > 1:
            # Draw from the other length-1 frames
            drawn = rng.integers(0, length - 1, size=replace.size)
            sources[replace] = drawn + (drawn >= selected[replace])
        else:
            sources[replace] = selected[replace]

    corrupted = features.copy()
    corrupted[selected[actions == MaskAction.ZERO]] = 0
    corrupted[selected[replace]] = features[sources[replace]]

    mask = np.zeros(total, dtype=bool)
    mask[selected] = True
    return corrupted, MaskSpec(selected=selected, actions=actions, sources=sources, mask=mask)
