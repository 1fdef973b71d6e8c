"""
Padded pre-training batches
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .masking import DECIMATE, MaskPolicy, MaskSpec, apply_mask, downsample
from ..data_processing.features import UtteranceFeatures
from ..numerics import get_default_dtype
from ..utils.parallel import parallel_map, utterance_rng


def pad_sequences(arrays: Sequence[np.ndarray], dtype=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stack variable-length T x d arrays into B x T_max x d with zero padding.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Padded batch and the true lengths
    """
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    longest = int(lengths.max(initial=0))
    trailing = arrays[0].shape[1:] if arrays else ()
    out = np.zeros((len(arrays), longest) + trailing,
                   dtype=dtype if dtype is not None else get_default_dtype())
    for row, array in enumerate(arrays):
        out[row, :array.shape[0]] = array
    return out, lengths


def model_inputs(utterance: UtteranceFeatures, policy: MaskPolicy) -> np.ndarray:
    """Downsampled encoder input of one utterance."""
    return downsample(utterance.inputs, policy.downsample_factor, policy.downsample_mode)


def model_targets(utterance: UtteranceFeatures, policy: MaskPolicy) -> np.ndarray:
    """Targets (and frame labels) follow the decimation rule in every mode."""
    return downsample(utterance.target, policy.downsample_factor, DECIMATE)


@dataclass
class PretrainBatch:
    """
    One padded batch.

    ``mask`` is 1.0 at selected frames and 0.0 elsewhere, including padding.
    """

    utterance_ids: List[str]
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    specs: List[MaskSpec]

    @property
    def batch_size(self) -> int:
        return len(self.utterance_ids)

    @property
    def masked_frames(self) -> int:
        return int(self.mask.sum())


def build_pretrain_batch(
    utterances: Sequence[UtteranceFeatures],
    policy: MaskPolicy,
    step: int = 0,
    threads: int = 1,
) -> PretrainBatch:
    """
    Downsample and corrupt each utterance, then pad.

    Every utterance draws from its own stream seeded by
    (policy.seed, step, utterance id), so thread count never changes a batch.
    """

    def corrupt(utterance: UtteranceFeatures):
        frames = model_inputs(utterance, policy)
        rng = utterance_rng(policy.seed, utterance.utterance_id, step)
        corrupted, spec = apply_mask(frames, policy, rng)
        return corrupted, model_targets(utterance, policy), spec

    prepared = parallel_map(corrupt, utterances, threads)
    inputs, lengths = pad_sequences([p[0] for p in prepared])
    targets, _ = pad_sequences([p[1] for p in prepared])
    mask, _ = pad_sequences([p[2].mask for p in prepared])
    return PretrainBatch(
        utterance_ids=[u.utterance_id for u in utterances],
        inputs=inputs,
        targets=targets,
        mask=mask,
        lengths=lengths,
        specs=[p[2] for p in prepared],
    )
