"""
Frozen-encoder representations and pooled embedding export
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .heads import FusionHead, FusionMode, fuse
from ..data_processing.features import UtteranceFeatures, add_deltas
from ..encoder import EncoderWeights, forward
from ..numerics import no_grad
from ..pretraining.masking import DECIMATE, downsample
from ..utils.constants import INPUT_DIM
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)


def encoder_frames(utterance: UtteranceFeatures, factor: int = 3, mode: str = DECIMATE) -> np.ndarray:
    return downsample(utterance.inputs, factor, mode)


def frame_labels(utterance: UtteranceFeatures, factor: int = 3) -> np.ndarray:
    """Phoneme labels decimated to line up with encoder frames."""
    return downsample(utterance.phonemes, factor, DECIMATE)


def extract_representations(
    encoder: Optional[EncoderWeights],
    utterances: Sequence[UtteranceFeatures],
    downsample_factor: int = 3,
    downsample_mode: str = DECIMATE,
    threads: int = 1,
) -> List[List[np.ndarray]]:
    """
    Layer outputs of a frozen encoder, one list of L (T' x d_h) arrays per utterance.

    With ``encoder=None`` each utterance yields its single input-feature
    matrix, the baseline representation.
    """

    def encode(utterance: UtteranceFeatures) -> List[np.ndarray]:
        frames = encoder_frames(utterance, downsample_factor, downsample_mode)
        if encoder is None:
            return [frames]
        with no_grad():
            output = forward(encoder, None, frames)
        return output.representations.arrays()

    return parallel_map(encode, utterances, threads)


def export_pooled_embeddings(
    encoder: Optional[EncoderWeights],
    fusion: Optional[FusionHead],
    corpus: Sequence[UtteranceFeatures],
    path: Union[str, Path],
    downsample_factor: int = 3,
    downsample_mode: str = DECIMATE,
    threads: int = 1,
) -> Path:
    """
    Write one mean-pooled representation per utterance.

    Args:
        encoder: Frozen encoder; None exports mean-pooled raw log-mel + delta features
        fusion: Layer fusion (last layer when None)
        corpus: Utterances to embed
        path: Output CSV ``utterance_id,speaker_id,dim_0..``

    Returns:
        Path: The written file
    """
    path = Path(path)
    if encoder is None:
        width = corpus[0].mel.shape[1] * 2 if corpus else INPUT_DIM
        pooled = [add_deltas(u.mel).mean(axis=0) for u in corpus]
    else:
        width = encoder.config.hidden_dim
        fusion = fusion or FusionHead(FusionMode.LAST_LAYER, encoder.config.num_layers)
        reps = extract_representations(encoder, corpus, downsample_factor, downsample_mode, threads)
        with no_grad():
            pooled = [fuse(layers, fusion).data.mean(axis=0) for layers in reps]

    columns = ["utterance_id", "speaker_id"] + [f"dim_{i}" for i in range(width)]
    rows = [[u.utterance_id, u.speaker_id] + list(vector) for u, vector in zip(corpus, pooled)]
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    logger.info(f"💾 Wrote {len(rows)} pooled embeddings to {path}")
    return path
