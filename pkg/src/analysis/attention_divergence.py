"""
Jensen-Shannon divergence of attention distributions across layers
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..data_processing.features import UtteranceFeatures
from ..downstream.embeddings import encoder_frames
from ..encoder import AttentionRecord, EncoderWeights, forward
from ..numerics import no_grad
from ..pretraining.masking import DECIMATE
from ..utils.constants import SUCCESS_MESSAGES
from ..utils.exceptions import ConfigError, DataError, ShapeError
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-5
DEFAULT_SAMPLE_SIZE = 32


def _js_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Base-2 JS divergence along the last axis, 0 log 0 taken as 0."""
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(p > 0, p * np.log2(p / m), 0.0)
        right = np.where(q > 0, q * np.log2(q / m), 0.0)
    return np.clip(0.5 * left.sum(axis=-1) + 0.5 * right.sum(axis=-1), 0.0, 1.0)


def js_divergence(p, q) -> float:
    """
    JS divergence of two probability vectors, log base 2 (range [0, 1]).

    Raises:
        ShapeError: Lengths differ
        ValueError: A vector is negative or does not sum to 1
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise ShapeError("js_divergence", p.shape, q.shape)
    for name, vector in (("p", p), ("q", q)):
        if vector.min(initial=0.0) < 0 or abs(vector.sum() - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"js_divergence: {name} is not a probability vector (sum {vector.sum():.6g})")
    if np.array_equal(p, q):
        return 0.0
    return float(_js_rows(p, q))


def _check_indices(record: AttentionRecord, layers: Sequence[int], head: int) -> None:
    for layer in layers:
        if not 1 <= layer <= record.num_layers:
            raise ConfigError(f"Layer index {layer} outside 1..{record.num_layers}")
    if not 1 <= head <= record.num_heads:
        raise ConfigError(f"Head index {head} outside 1..{record.num_heads}")


def _row_sums(record: AttentionRecord, layer_i: int, layer_j: int, head: int) -> Tuple[float, int]:
    total, rows = 0.0, 0
    for utterance in range(record.batch_size):
        p = record.matrix(layer_i, head, utterance)
        q = record.matrix(layer_j, head, utterance)
        total += float(_js_rows(p, q).sum())
        rows += p.shape[0]
    return total, rows


def layer_pair_divergence(attn: AttentionRecord, layer_i: int, layer_j: int, head: int) -> float:
    """
    Mean over query positions of the JS divergence between two layers' rows.

    Padding is trimmed per utterance; a batch is averaged over all valid
    query frames, so longer utterances weigh more.
    """
    _check_indices(attn, (layer_i, layer_j), head)
    if layer_i == layer_j:
        return 0.0
    total, rows = _row_sums(attn, layer_i, layer_j, head)
    return total / rows if rows else 0.0


@dataclass
class JSMatrix:
    """L x L symmetric divergences for one head (``head=None`` is the head average)."""

    values: np.ndarray
    head: Optional[int] = None
    base: int = 2

    @property
    def label(self) -> str:
        return "avg" if self.head is None else f"head{self.head}"

    @property
    def num_layers(self) -> int:
        return self.values.shape[0]

    def max_off_diagonal(self) -> float:
        if self.num_layers < 2:
            return 0.0
        return float(self.values[~np.eye(self.num_layers, dtype=bool)].max())

    def write_csv(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"js_matrix_{self.label}.csv"
        columns = [f"layer_{i}" for i in range(1, self.num_layers + 1)]
        pd.DataFrame(self.values, columns=columns).to_csv(path, index=False)
        return path


def sample_utterances(
    corpus: Sequence[UtteranceFeatures], sample_size: int = DEFAULT_SAMPLE_SIZE, seed: int = 0
) -> List[UtteranceFeatures]:
    """Fixed-seed draw, returned in utterance-id order."""
    ordered = sorted(corpus, key=lambda u: u.utterance_id)
    if len(ordered) > sample_size:
        keep = np.random.default_rng(seed).choice(len(ordered), size=sample_size, replace=False)
        ordered = [ordered[i] for i in sorted(keep)]
    return ordered


def divergence_matrices(records: Sequence[AttentionRecord]) -> Tuple[List[JSMatrix], JSMatrix]:
    """Per-head and head-averaged matrices pooled over several forward passes."""
    if not records:
        raise DataError("Attention analysis needs at least one utterance")
    num_layers, num_heads = records[0].num_layers, records[0].num_heads
    totals = np.zeros((num_heads, num_layers, num_layers))
    rows = 0
    for record in records:
        for utterance in range(record.batch_size):
            length = int(record.lengths[utterance])
            rows += length
            for i in range(num_layers):
                for j in range(i + 1, num_layers):
                    p = record.probabilities[i][utterance, :, :length, :length]
                    q = record.probabilities[j][utterance, :, :length, :length]
                    per_head = _js_rows(p, q).sum(axis=-1)
                    totals[:, i, j] += per_head
                    totals[:, j, i] += per_head
    values = totals / max(rows, 1)
    heads = [JSMatrix(values[h], head=h + 1) for h in range(num_heads)]
    return heads, JSMatrix(values.mean(axis=0), head=None)


def build_js_matrices(
    encoder: EncoderWeights,
    sample: Sequence[UtteranceFeatures],
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    downsample_factor: int = 3,
    downsample_mode: str = DECIMATE,
    threads: int = 1,
) -> Tuple[List[JSMatrix], JSMatrix]:
    """
    Capture attention on an evaluation sample and compare every layer pair.

    Args:
        encoder (EncoderWeights): Frozen encoder
        sample: Candidate utterances; at most ``sample_size`` are drawn with ``seed``
        threads (int): Forward passes run in parallel up to this many workers

    Returns:
        Tuple[List[JSMatrix], JSMatrix]: One matrix per head and their mean
    """
    utterances = sample_utterances(sample, sample_size, seed)
    if not utterances:
        raise DataError("Attention analysis needs a non-empty evaluation sample")

    def capture(utterance: UtteranceFeatures) -> AttentionRecord:
        frames = encoder_frames(utterance, downsample_factor, downsample_mode)
        with no_grad():
            return forward(encoder, None, frames, capture_attention=True).attention

    records = parallel_map(capture, utterances, threads)
    heads, average = divergence_matrices(records)
    logger.info(f"{SUCCESS_MESSAGES['analysis_complete']}: {len(utterances)} utterances, "
                f"max off-diagonal {average.max_off_diagonal():.4f}")
    return heads, average


def write_js_matrices(heads: Sequence[JSMatrix], average: JSMatrix, directory: Union[str, Path]) -> List[Path]:
    return [m.write_csv(directory) for m in list(heads) + [average]]
