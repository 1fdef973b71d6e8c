"""
Downstream phoneme and speaker classification
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .embeddings import encoder_frames, extract_representations, frame_labels
from .heads import FusionHead, FusionMode, PhonemeHead, SpeakerHead, TrainMode, fuse
from ..data_processing.data_loader import CorpusSplit, index_by_id, round_half_up, split_corpus
from ..data_processing.features import UtteranceFeatures
from ..encoder import EncoderWeights, forward
from ..numerics import AdamW, Tensor, backward, cross_entropy, no_grad
from ..pretraining.batch import pad_sequences
from ..pretraining.masking import DECIMATE
from ..utils.constants import DOWNSTREAM_TASKS, NUM_PHONE_CLASSES, PHONEME_TASK, SPEAKER_TASK, SUCCESS_MESSAGES
from ..utils.exceptions import ConfigError, DataError, MissingLabelsError

logger = logging.getLogger(__name__)

# Learning rates per adaptation mode
DEFAULT_LEARNING_RATES = {
    TrainMode.FEATURE_EXTRACTION: 1e-3,
    TrainMode.FINE_TUNE: 1e-4,
}


@dataclass
class DownstreamSettings:
    learning_rate: Optional[float] = None
    epochs: int = 20
    batch_size: int = 32
    patience: int = 5
    weight_decay: float = 0.01
    hidden_dim: int = 768
    label_fraction: float = 1.0
    downsample_factor: int = 3
    downsample_mode: str = DECIMATE
    seed: int = 0
    threads: int = 1

    def resolved_learning_rate(self, mode: TrainMode) -> float:
        return DEFAULT_LEARNING_RATES[mode] if self.learning_rate is None else self.learning_rate


@dataclass
class DownstreamResult:
    task: str
    mode: TrainMode
    fusion: FusionHead
    head: Union[PhonemeHead, SpeakerHead]
    encoder: Optional[EncoderWeights]
    test_accuracy: float
    best_dev_accuracy: float
    best_epoch: int
    train_losses: List[float] = field(default_factory=list)
    dev_accuracies: List[float] = field(default_factory=list)
    fusion_weight_history: List[np.ndarray] = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return 0 if self.encoder is None else self.encoder.config.num_layers

    def metrics_row(self) -> Dict[str, object]:
        return {
            "task": self.task,
            "mode": self.mode.value,
            "fusion": self.fusion.mode.value,
            "layer_count": self.layer_count,
            "test_accuracy": self.test_accuracy,
        }


def check_labels(task: str, utterances: Sequence[UtteranceFeatures]) -> None:
    if task not in DOWNSTREAM_TASKS:
        raise ConfigError(f"Unknown downstream task '{task}'. Known: {', '.join(DOWNSTREAM_TASKS)}")
    if task == PHONEME_TASK:
        unlabeled = [u.utterance_id for u in utterances if not u.has_phonemes]
        if unlabeled:
            raise MissingLabelsError(
                f"Task '{task}' needs frame labels; {len(unlabeled)} utterance(s) have none "
                f"(first: {unlabeled[0]})"
            )


class DownstreamTrainer:
    """
    Trains a task head on top of an encoder.

    Feature extraction encodes every utterance once with the frozen encoder
    and trains fusion + head on the cached layers. Fine-tuning trains a copy
    of the encoder together with them.
    """

    def __init__(
        self,
        encoder: Optional[EncoderWeights],
        task: str,
        mode: Union[TrainMode, str],
        fusion: Union[FusionHead, FusionMode, str],
        corpus: Sequence[UtteranceFeatures],
        settings: Optional[DownstreamSettings] = None,
        split: Optional[CorpusSplit] = None,
    ):
        self.settings = settings or DownstreamSettings()
        self.task = task
        try:
            self.mode = TrainMode(mode)
        except ValueError:
            raise ConfigError(f"Unknown downstream mode {mode!r}. Known: feature_extraction, fine_tune") from None
        check_labels(task, corpus)
        if encoder is None and self.mode == TrainMode.FINE_TUNE:
            raise ConfigError("Fine-tuning needs an encoder; the input baseline is feature extraction only")
        if not 0.0 < self.settings.label_fraction <= 1.0:
            raise ConfigError(f"downstream.label_fraction must lie in (0, 1], got {self.settings.label_fraction}")

        num_layers = 1 if encoder is None else encoder.config.num_layers
        if not isinstance(fusion, FusionHead):
            fusion = FusionHead(fusion if encoder is not None else FusionMode.LAST_LAYER, num_layers)
        if fusion.num_layers != num_layers:
            raise ConfigError(f"Fusion head covers {fusion.num_layers} layers, encoder has {num_layers}")
        self.fusion = fusion

        self.encoder = encoder.copy() if (encoder is not None and self.mode == TrainMode.FINE_TUNE) else encoder
        self.by_id = index_by_id(corpus)
        self.split = split or split_corpus(corpus, self.settings.seed)
        self.train_ids = self._labeled_subset(self.split.train)

        if encoder is None:
            rep_dim = encoder_frames(corpus[0], self.settings.downsample_factor,
                                     self.settings.downsample_mode).shape[1]
        else:
            rep_dim = encoder.config.hidden_dim
        if task == PHONEME_TASK:
            self.head = PhonemeHead(rep_dim, self.settings.hidden_dim, NUM_PHONE_CLASSES, seed=self.settings.seed)
        else:
            num_speakers = max(u.speaker_id for u in corpus) + 1
            self.head = SpeakerHead(rep_dim, num_speakers, seed=self.settings.seed)

        params = self.fusion.parameters() + self.head.parameters()
        if self.mode == TrainMode.FINE_TUNE:
            params = params + self.encoder.parameters()
        self.optimizer = AdamW(params, lr=self.settings.resolved_learning_rate(self.mode),
                               weight_decay=self.settings.weight_decay)
        self._cache: Dict[str, List[np.ndarray]] = {}

    def _labeled_subset(self, ids: List[str]) -> List[str]:
        if self.settings.label_fraction >= 1.0:
            return list(ids)
        count = max(1, round_half_up(self.settings.label_fraction * len(ids)))
        rng = np.random.default_rng([self.settings.seed, 1])
        return sorted(ids[i] for i in rng.choice(len(ids), size=count, replace=False))

    # Representations

    def _frozen_layers(self, ids: Sequence[str]) -> List[List[np.ndarray]]:
        missing = [i for i in ids if i not in self._cache]
        if missing:
            reps = extract_representations(
                self.encoder, [self.by_id[i] for i in missing], self.settings.downsample_factor,
                self.settings.downsample_mode, self.settings.threads,
            )
            self._cache.update(zip(missing, reps))
        return [self._cache[i] for i in ids]

    def _layers(self, ids: Sequence[str], training: bool, rng=None):
        """Padded per-layer tensors (B, T', d) and true lengths."""
        if self.mode == TrainMode.FINE_TUNE:
            frames = [encoder_frames(self.by_id[i], self.settings.downsample_factor,
                                     self.settings.downsample_mode) for i in ids]
            inputs, lengths = pad_sequences(frames)
            output = forward(self.encoder, None, inputs, lengths=lengths, training=training, rng=rng)
            return output.representations.hidden_states, lengths
        per_utterance = self._frozen_layers(ids)
        layers = []
        lengths = None
        for index in range(len(per_utterance[0])):
            padded, lengths = pad_sequences([rep[index] for rep in per_utterance])
            layers.append(Tensor(padded))
        return layers, lengths

    def _targets(self, ids: Sequence[str], lengths: np.ndarray):
        if self.task == SPEAKER_TASK:
            return np.array([self.by_id[i].speaker_id for i in ids]), None
        labels, _ = pad_sequences(
            [frame_labels(self.by_id[i], self.settings.downsample_factor) for i in ids], dtype=np.int64
        )
        weights = (np.arange(labels.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
        return labels, weights

    def _logits(self, ids: Sequence[str], training: bool, rng=None):
        layers, lengths = self._layers(ids, training, rng)
        fused = fuse(layers, self.fusion)
        return self.head(fused, lengths), lengths

    # Training

    def _train_epoch(self, epoch: int, history: List[np.ndarray]) -> float:
        order = np.random.default_rng([self.settings.seed, epoch]).permutation(len(self.train_ids))
        losses = []
        for start in range(0, len(order), self.settings.batch_size):
            ids = [self.train_ids[i] for i in order[start:start + self.settings.batch_size]]
            rng = np.random.default_rng([self.settings.seed, epoch, start])
            logits, lengths = self._logits(ids, training=True, rng=rng)
            targets, weights = self._targets(ids, lengths)
            loss = cross_entropy(logits, targets, weights)
            self.optimizer.zero_grad()
            backward(loss)
            self.optimizer.step()
            losses.append(loss.item())
            history.append(self.fusion.layer_weights())
        return float(np.mean(losses))

    def evaluate(self, ids: Sequence[str]) -> float:
        """Frame accuracy (phoneme) or utterance accuracy (speaker)."""
        if not ids:
            return 0.0
        correct = 0.0
        total = 0.0
        with no_grad():
            for start in range(0, len(ids), self.settings.batch_size):
                chunk = ids[start:start + self.settings.batch_size]
                logits, lengths = self._logits(chunk, training=False)
                predicted = np.argmax(logits.data, axis=-1)
                targets, weights = self._targets(chunk, lengths)
                if weights is None:
                    correct += float(np.sum(predicted == targets))
                    total += len(chunk)
                else:
                    correct += float(np.sum((predicted == targets) * weights))
                    total += float(weights.sum())
        return correct / total if total else 0.0

    def _state(self):
        encoder = self.encoder.copy() if self.mode == TrainMode.FINE_TUNE else None
        return self.fusion.snapshot(), self.head.snapshot(), encoder

    def _restore(self, state) -> None:
        fusion, head, encoder = state
        self.fusion.restore(fusion)
        self.head.restore(head)
        if encoder is not None:
            for param, values in zip(self.encoder.parameters(), encoder.parameters()):
                param.data[...] = values.data

    def run(self) -> DownstreamResult:
        if not self.train_ids:
            raise DataError("Downstream training split is empty")
        logger.info(f"🚀 Training {self.task} head ({self.mode.value}, {self.fusion.mode.value}) "
                    f"on {len(self.train_ids)} utterances")
        train_losses, dev_accuracies, history = [], [], []
        best_accuracy, best_epoch, best_state = -1.0, 0, None
        stale = 0
        for epoch in range(1, self.settings.epochs + 1):
            train_losses.append(self._train_epoch(epoch, history))
            accuracy = self.evaluate(self.split.dev) if self.split.dev else -train_losses[-1]
            dev_accuracies.append(accuracy)
            if accuracy > best_accuracy:
                best_accuracy, best_epoch, best_state = accuracy, epoch, self._state()
                stale = 0
            else:
                stale += 1
                if stale >= self.settings.patience:
                    logger.info(f"Early stop after epoch {epoch} (best epoch {best_epoch})")
                    break
        if best_state is not None:
            self._restore(best_state)

        test_accuracy = self.evaluate(self.split.test)
        logger.info(f"{SUCCESS_MESSAGES['downstream_complete']}: test accuracy {test_accuracy:.4f}")
        return DownstreamResult(
            task=self.task,
            mode=self.mode,
            fusion=self.fusion,
            head=self.head,
            encoder=self.encoder,
            test_accuracy=test_accuracy,
            best_dev_accuracy=best_accuracy,
            best_epoch=best_epoch,
            train_losses=train_losses,
            dev_accuracies=dev_accuracies,
            fusion_weight_history=history,
        )


def train_downstream(
    encoder: Optional[EncoderWeights],
    task: str,
    mode: Union[TrainMode, str],
    fusion: Union[FusionHead, FusionMode, str],
    corpus: Sequence[UtteranceFeatures],
    learning_rate: Optional[float] = None,
    epochs: Optional[int] = None,
    settings: Optional[DownstreamSettings] = None,
    split: Optional[CorpusSplit] = None,
) -> DownstreamResult:
    """
    Train a phoneme or speaker head on an encoder's representations.

    Args:
        encoder: Pre-trained encoder, or None for the input-feature baseline
        task (str): ``phoneme`` or ``speaker``
        mode: Feature extraction (frozen encoder) or fine-tuning
        fusion: Last layer or learned weighted sum
        corpus: Labeled utterances
        learning_rate: Defaults to 1e-3 (feature extraction) or 1e-4 (fine-tune)
        epochs: Epoch budget, defaulting to ``settings.epochs``; dev accuracy selects the kept epoch
        settings: Remaining hyperparameters
        split: Explicit split; a seeded 8:1:1 split otherwise

    Returns:
        DownstreamResult: Trained head and metrics
    """
    overrides = {}
    if epochs is not None:
        overrides["epochs"] = epochs
    if learning_rate is not None:
        overrides["learning_rate"] = learning_rate
    settings = replace(settings or DownstreamSettings(), **overrides)
    return DownstreamTrainer(encoder, task, mode, fusion, corpus, settings, split).run()
