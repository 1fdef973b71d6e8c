"""
Layer-wise probing of frozen encoder representations
"""
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..data_processing.data_loader import CorpusSplit, index_by_id, split_corpus
from ..data_processing.features import UtteranceFeatures
from ..downstream.embeddings import extract_representations, frame_labels
from ..encoder import EncoderWeights, weights_checksum
from ..encoder.model import truncated_normal
from ..numerics import AdamW, Tensor, backward, cross_entropy, gelu, linear, no_grad
from ..pretraining.masking import DECIMATE
from ..utils.constants import INIT_STD, NUM_PHONE_CLASSES, PROBE_COLUMNS, SUCCESS_MESSAGES
from ..utils.exceptions import AalbertError, ConfigError, DataError, MissingLabelsError
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)

MAX_PROBE_FRAMES = 200_000


class ProbeDepth(str, enum.Enum):
    LINEAR = "linear"
    ONE_HIDDEN = "one_hidden"
    TWO_HIDDEN = "two_hidden"

    @property
    def num_hidden(self) -> int:
        return {"linear": 0, "one_hidden": 1, "two_hidden": 2}[self.value]


class ProbeTask(str, enum.Enum):
    PHONEME = "phoneme"
    SPEAKER = "speaker"


@dataclass(frozen=True)
class ProbeConfig:
    """One probe: classifier depth, frame-level task and 1-based target layer."""

    depth: ProbeDepth = ProbeDepth.LINEAR
    task: ProbeTask = ProbeTask.PHONEME
    layer: int = 1
    hidden_dim: int = 768
    learning_rate: float = 1e-3
    epochs: int = 10
    patience: int = 3
    batch_size: int = 256
    weight_decay: float = 0.0
    max_frames: int = MAX_PROBE_FRAMES
    seed: int = 0
    sampling_seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "depth", ProbeDepth(self.depth))
            object.__setattr__(self, "task", ProbeTask(self.task))
        except ValueError as exc:
            raise ConfigError(f"Invalid probe setting: {exc}") from None
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("probe.epochs, probe.batch_size and probe.hidden_dim must be positive")


class ProbeClassifier:
    """Frame classifier with 0, 1 or 2 GELU hidden layers."""

    def __init__(self, input_dim: int, num_classes: int, depth: ProbeDepth, hidden_dim: int, seed: int):
        rng = np.random.default_rng(seed)
        widths = [input_dim] + [hidden_dim] * depth.num_hidden + [num_classes]
        self.layers: List[Tuple[Tensor, Tensor]] = [
            (Tensor(truncated_normal(rng, (a, b), INIT_STD), requires_grad=True),
             Tensor(np.zeros(b), requires_grad=True))
            for a, b in zip(widths[:-1], widths[1:])
        ]

    def parameters(self) -> List[Tensor]:
        return [t for pair in self.layers for t in pair]

    def __call__(self, features) -> Tensor:
        hidden = features
        for index, (weight, bias) in enumerate(self.layers):
            hidden = linear(hidden, weight, bias)
            if index < len(self.layers) - 1:
                hidden = gelu(hidden)
        return hidden

    def predict(self, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        with no_grad():
            return np.concatenate([
                np.argmax(self(Tensor(features[i:i + batch_size])).data, axis=-1)
                for i in range(0, len(features), batch_size)
            ]) if len(features) else np.zeros(0, dtype=np.int64)


def majority_baseline(train_labels: np.ndarray, test_labels: np.ndarray) -> float:
    """Test accuracy of always predicting the most frequent training label."""
    if test_labels.size == 0:
        return 0.0
    majority = np.bincount(train_labels).argmax()
    return float(np.mean(test_labels == majority))


@dataclass
class FrameDataset:
    features: np.ndarray
    labels: np.ndarray


def fit_probe(
    train: FrameDataset,
    dev: FrameDataset,
    test: FrameDataset,
    num_classes: int,
    config: ProbeConfig,
) -> float:
    """
    Train a probe on frame arrays and return its test accuracy.

    The kept parameters are those of the epoch with the best dev accuracy.
    """
    if train.labels.size == 0:
        raise DataError("Probe training set is empty")
    probe = ProbeClassifier(train.features.shape[1], num_classes, config.depth, config.hidden_dim, config.seed)
    optimizer = AdamW(probe.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    best_accuracy, best_params, stale = -1.0, None, 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(train.labels.size)
        for start in range(0, order.size, config.batch_size):
            rows = order[start:start + config.batch_size]
            loss = cross_entropy(probe(Tensor(train.features[rows])), train.labels[rows])
            optimizer.zero_grad()
            backward(loss)
            optimizer.step()
        held_out = dev if dev.labels.size else train
        accuracy = float(np.mean(probe.predict(held_out.features) == held_out.labels))
        if accuracy > best_accuracy:
            best_accuracy, best_params, stale = accuracy, [p.data.copy() for p in probe.parameters()], 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for param, values in zip(probe.parameters(), best_params):
        param.data[...] = values
    if test.labels.size == 0:
        return 0.0
    return float(np.mean(probe.predict(test.features) == test.labels))


def _frames(
    reps: Dict[str, List[np.ndarray]],
    by_id: Dict[str, UtteranceFeatures],
    ids: Sequence[str],
    layer: int,
    task: ProbeTask,
    downsample_factor: int,
    max_frames: int,
    sampling_seed: int,
) -> FrameDataset:
    features, labels = [], []
    for utterance_id in ids:
        hidden = reps[utterance_id][layer - 1]
        utterance = by_id[utterance_id]
        if task == ProbeTask.PHONEME:
            labels.append(frame_labels(utterance, downsample_factor))
        else:
            labels.append(np.full(hidden.shape[0], utterance.speaker_id, dtype=np.int64))
        features.append(hidden)
    if not features:
        return FrameDataset(np.zeros((0, 1)), np.zeros(0, dtype=np.int64))
    features = np.concatenate(features)
    labels = np.concatenate(labels)
    if labels.size > max_frames:
        keep = np.sort(np.random.default_rng(sampling_seed).choice(labels.size, max_frames, replace=False))
        features, labels = features[keep], labels[keep]
    return FrameDataset(features, labels)


def _num_classes(task: ProbeTask, corpus: Sequence[UtteranceFeatures]) -> int:
    if task == ProbeTask.PHONEME:
        return NUM_PHONE_CLASSES
    return max(u.speaker_id for u in corpus) + 1


def _check_task(task: ProbeTask, corpus: Sequence[UtteranceFeatures]) -> None:
    if task == ProbeTask.PHONEME and not all(u.has_phonemes for u in corpus):
        raise MissingLabelsError("Probe task 'phoneme' needs frame labels on every utterance")


class ProbeRunner:
    """Holds frozen representations so many probe cells can share them."""

    def __init__(
        self,
        encoder: EncoderWeights,
        corpus: Sequence[UtteranceFeatures],
        split: Optional[CorpusSplit] = None,
        downsample_factor: int = 3,
        downsample_mode: str = DECIMATE,
        threads: int = 1,
        seed: int = 0,
    ):
        self.encoder = encoder
        self.corpus = list(corpus)
        self.by_id = index_by_id(corpus)
        self.split = split or split_corpus(corpus, seed)
        self.downsample_factor = downsample_factor
        self.threads = threads
        reps = extract_representations(encoder, self.corpus, downsample_factor, downsample_mode, threads)
        self.reps = {u.utterance_id: r for u, r in zip(self.corpus, reps)}

    def datasets(self, config: ProbeConfig) -> Tuple[FrameDataset, FrameDataset, FrameDataset]:
        num_layers = self.encoder.config.num_layers
        if not 1 <= config.layer <= num_layers:
            raise ConfigError(f"Probe layer {config.layer} outside 1..{num_layers}")
        _check_task(config.task, self.corpus)
        return tuple(
            _frames(self.reps, self.by_id, self.split.part(part), config.layer, config.task,
                    self.downsample_factor, config.max_frames, config.sampling_seed)
            for part in ("train", "dev", "test")
        )

    def run(self, config: ProbeConfig) -> float:
        train, dev, test = self.datasets(config)
        return fit_probe(train, dev, test, _num_classes(config.task, self.corpus), config)


def run_probe(
    encoder: EncoderWeights,
    config: ProbeConfig,
    corpus: Sequence[UtteranceFeatures],
    lr: Optional[float] = None,
    epochs: Optional[int] = None,
    split: Optional[CorpusSplit] = None,
) -> float:
    """
    Train one probe on layer ``config.layer`` of a frozen encoder.

    Returns:
        float: Frame-level test accuracy
    """
    overrides = {}
    if lr is not None:
        overrides["learning_rate"] = lr
    if epochs is not None:
        overrides["epochs"] = epochs
    config = replace(config, **overrides)
    return ProbeRunner(encoder, corpus, split, seed=config.seed).run(config)


@dataclass
class ProbeCell:
    layer: int
    depth: ProbeDepth
    task: ProbeTask
    accuracy: float


@dataclass
class ProbeReport:
    """
    Probe accuracies over the (layer, task, depth) grid.

    Rows are ordered layer-major, then task, with depth varying fastest.
    """

    cells: List[ProbeCell]
    model_id: str
    seed: int
    sampling_seed: int
    metadata: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cells)

    def accuracy(self, layer: int, depth: Union[ProbeDepth, str], task: Union[ProbeTask, str]) -> float:
        depth, task = ProbeDepth(depth), ProbeTask(task)
        for cell in self.cells:
            if (cell.layer, cell.depth, cell.task) == (layer, depth, task):
                return cell.accuracy
        raise KeyError((layer, depth.value, task.value))

    def best_layers(self) -> Dict[Tuple[str, str], int]:
        """Layer with the highest accuracy per (task, depth); ties go to the lower layer."""
        best: Dict[Tuple[str, str], ProbeCell] = {}
        for cell in self.cells:
            key = (cell.task.value, cell.depth.value)
            if key not in best or cell.accuracy > best[key].accuracy:
                best[key] = cell
        return {key: cell.layer for key, cell in best.items()}

    def to_frame(self) -> pd.DataFrame:
        rows = [(c.layer, c.depth.value, c.task.value, c.accuracy, self.seed) for c in self.cells]
        return pd.DataFrame(rows, columns=PROBE_COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def probe_sweep(
    encoder: EncoderWeights,
    corpus: Sequence[UtteranceFeatures],
    depths: Sequence[Union[ProbeDepth, str]],
    tasks: Sequence[Union[ProbeTask, str]],
    base_config: Optional[ProbeConfig] = None,
    layers: Optional[Sequence[int]] = None,
    split: Optional[CorpusSplit] = None,
    downsample_factor: int = 3,
    downsample_mode: str = DECIMATE,
    threads: int = 1,
) -> ProbeReport:
    """
    Probe every requested layer with every depth and task.

    Args:
        encoder (EncoderWeights): Frozen encoder
        corpus: Labeled utterances
        depths: Probe depths
        tasks: Frame-level tasks
        base_config: Hyperparameters shared by every cell
        layers: 1-based layers (all layers when None)
        split: Explicit split; seeded 8:1:1 otherwise
        threads (int): Cells run in parallel up to this many workers

    Returns:
        ProbeReport: Complete grid
    """
    if not depths or not tasks:
        raise ConfigError("Probe sweep needs at least one depth and one task")
    base_config = base_config or ProbeConfig()
    try:
        depths = [ProbeDepth(d) for d in depths]
        tasks = [ProbeTask(t) for t in tasks]
    except ValueError as exc:
        raise ConfigError(f"Invalid probe sweep setting: {exc}") from None
    num_layers = encoder.config.num_layers
    layers = list(layers) if layers is not None else list(range(1, num_layers + 1))
    outside = [layer for layer in layers if not 1 <= layer <= num_layers]
    if outside:
        raise ConfigError(f"Probe layer(s) {outside} outside 1..{num_layers}")

    runner = ProbeRunner(encoder, corpus, split, downsample_factor, downsample_mode,
                         threads=threads, seed=base_config.seed)
    grid = [(layer, task, depth) for layer in layers for task in tasks for depth in depths]
    logger.info(f"🚀 Probing {len(grid)} cells ({len(layers)} layers x {len(tasks)} tasks x {len(depths)} depths)")

    def run_cell(cell):
        layer, task, depth = cell
        try:
            accuracy = runner.run(replace(base_config, layer=layer, task=task, depth=depth))
        except AalbertError as exc:
            raise DataError(
                f"Probe cell (layer={layer}, depth={depth.value}, task={task.value}) failed: {exc}"
            ) from exc
        return ProbeCell(layer, depth, task, accuracy)

    cells = parallel_map(run_cell, grid, threads)
    logger.info(SUCCESS_MESSAGES['probe_complete'])
    return ProbeReport(
        cells=cells,
        model_id=weights_checksum(encoder)[:16],
        seed=base_config.seed,
        sampling_seed=base_config.sampling_seed,
        metadata={"layers": layers, "depths": [d.value for d in depths], "tasks": [t.value for t in tasks]},
    )
