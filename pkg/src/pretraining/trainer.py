"""
Masked-reconstruction pre-training loop
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .batch import PretrainBatch, build_pretrain_batch
from .masking import MaskPolicy
from ..data_processing.features import UtteranceFeatures
from ..encoder import EncoderConfig, EncoderWeights, forward, init_encoder, save_weights
from ..numerics import AdamW, Tensor, backward, l1_loss
from ..utils.constants import LOSS_COLUMNS, SUCCESS_MESSAGES
from ..utils.exceptions import ConfigError, DataError, NumericalAbort, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSettings:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 0

    def build(self, params) -> AdamW:
        return AdamW(params, lr=self.learning_rate, betas=(self.beta1, self.beta2),
                     eps=self.epsilon, weight_decay=self.weight_decay,
                     warmup_steps=self.warmup_steps)


def reconstruction_loss(predicted, target, mask, lengths: Optional[Sequence[int]] = None) -> Tensor:
    """
    L1 distance averaged over masked frames and feature dimensions.

    Args:
        predicted: (B, T, d_out) or (T, d_out) reconstruction
        target: Same-shaped clean target
        mask: (B, T) or (T,) frame selection
        lengths: True frame counts; an all-padding batch is rejected

    Returns:
        Tensor: Scalar loss, 0 (with a warning) when nothing is masked
    """
    if lengths is not None and int(np.sum(lengths)) == 0:
        raise DataError("reconstruction_loss: batch contains only padding")
    mask = np.asarray(mask)
    pred_shape = predicted.shape
    if mask.shape != tuple(pred_shape[:-1]):
        raise ShapeError("reconstruction_loss", pred_shape, mask.shape, detail="mask")
    if not mask.any():
        logger.warning("⚠️ No masked positions in batch; loss contributes 0")
    return l1_loss(predicted, target, mask)


@dataclass
class PretrainSettings:
    steps: int = 1000
    batch_size: int = 50
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0
    threads: int = 1


@dataclass
class PretrainResult:
    weights: EncoderWeights
    loss_history: List[Tuple[int, float]] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([loss for _, loss in self.loss_history])


class Pretrainer:
    """
    Runs shuffled mini-batch masked reconstruction with AdamW.

    Per step: downsample, mask, forward, masked L1, backward, update.
    """

    def __init__(
        self,
        corpus: Sequence[UtteranceFeatures],
        encoder_config: EncoderConfig,
        mask_policy: MaskPolicy,
        optimizer_settings: OptimizerSettings,
        settings: PretrainSettings,
        checkpoint_dir: Optional[Path] = None,
        loss_path: Optional[Path] = None,
        weights: Optional[EncoderWeights] = None,
    ):
        if not corpus:
            raise DataError("Pre-training needs a non-empty corpus")
        if settings.steps < 0 or settings.batch_size < 1:
            raise ConfigError("pretrain.steps must be >= 0 and pretrain.batch_size >= 1")
        self.corpus = sorted(corpus, key=lambda u: u.utterance_id)
        self.config = encoder_config
        self.policy = mask_policy
        self.settings = settings
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.loss_path = Path(loss_path) if loss_path else None
        self.weights = weights if weights is not None else init_encoder(encoder_config, settings.seed)
        self.optimizer = optimizer_settings.build(self.weights.parameters())
        self.history: List[Tuple[int, float]] = []
        self.checkpoints: List[Path] = []

    def _batches(self):
        """Endless stream of shuffled utterance groups, reshuffled each epoch."""
        epoch = 0
        size = min(self.settings.batch_size, len(self.corpus))
        while True:
            order = np.random.default_rng([self.settings.seed, epoch]).permutation(len(self.corpus))
            for start in range(0, len(order) - size + 1, size):
                yield [self.corpus[i] for i in order[start:start + size]]
            epoch += 1

    def _step(self, step: int, batch: PretrainBatch) -> float:
        dropout_rng = np.random.default_rng(np.random.SeedSequence([self.settings.seed, step]))
        output = forward(self.weights, self.config, batch.inputs, lengths=batch.lengths,
                         training=True, rng=dropout_rng)
        loss = reconstruction_loss(output.reconstruction, batch.targets, batch.mask, batch.lengths)
        value = loss.item()
        if not math.isfinite(value):
            last = self.checkpoints[-1] if self.checkpoints else "none"
            raise NumericalAbort(f"Non-finite loss {value} at step {step}; last good checkpoint: {last}")
        self.optimizer.zero_grad()
        backward(loss)
        self.optimizer.step()
        return value

    def save_checkpoint(self, name: str) -> Optional[Path]:
        if self.checkpoint_dir is None:
            return None
        path = save_weights(self.weights, self.checkpoint_dir / f"{name}.aalw")
        self.optimizer.save_state(self.checkpoint_dir / f"{name}.opt.npz")
        self.checkpoints.append(path)
        return path

    def write_loss_history(self) -> Optional[Path]:
        if self.loss_path is None:
            return None
        self.loss_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.history, columns=LOSS_COLUMNS).to_csv(self.loss_path, index=False)
        return self.loss_path

    def run(self) -> PretrainResult:
        logger.info(f"🚀 Pre-training {self.config.num_layers}-layer "
                    f"{'shared' if self.config.share_weights else 'unshared'} encoder "
                    f"for {self.settings.steps} steps")
        batches = self._batches()
        try:
            for step in range(1, self.settings.steps + 1):
                group = next(batches)
                batch = build_pretrain_batch(group, self.policy, step=step, threads=self.settings.threads)
                value = self._step(step, batch)
                self.history.append((step, value))
                if self.settings.log_every and step % self.settings.log_every == 0:
                    recent = np.mean([v for _, v in self.history[-self.settings.log_every:]])
                    logger.info(f"step {step}: mean loss {recent:.4f}")
                if self.settings.checkpoint_every and step % self.settings.checkpoint_every == 0:
                    self.save_checkpoint(f"step_{step:07d}")
        finally:
            self.write_loss_history()

        self.save_checkpoint("final")
        logger.info(SUCCESS_MESSAGES['pretrain_complete'])
        return PretrainResult(self.weights, list(self.history), list(self.checkpoints))


def pretrain(
    corpus: Sequence[UtteranceFeatures],
    encoder_config: EncoderConfig,
    mask_policy: MaskPolicy,
    optimizer_settings: OptimizerSettings,
    steps: int,
    checkpoint_every: int = 0,
    **options,
) -> PretrainResult:
    """
    Pre-train an encoder by masked reconstruction.

    Args:
        corpus: Training utterances
        encoder_config (EncoderConfig): Architecture
        mask_policy (MaskPolicy): Corruption policy (its seed drives masking)
        optimizer_settings (OptimizerSettings): AdamW hyperparameters
        steps (int): Update steps; 0 returns the initial weights
        checkpoint_every (int): Checkpoint period in steps (0 keeps only the final one)
        **options: ``batch_size``, ``log_every``, ``seed``, ``threads``,
            ``checkpoint_dir``, ``loss_path``, ``weights``

    Returns:
        PretrainResult: Trained weights, loss history and checkpoint paths
    """
    setting_names = set(asdict(PretrainSettings()))
    settings = PretrainSettings(
        steps=steps,
        checkpoint_every=checkpoint_every,
        **{k: v for k, v in options.items() if k in setting_names},
    )
    extra = {k: v for k, v in options.items() if k not in setting_names}
    unknown = set(extra) - {"checkpoint_dir", "loss_path", "weights"}
    if unknown:
        raise ConfigError(f"Unknown pre-training option(s): {', '.join(sorted(unknown))}")
    return Pretrainer(corpus, encoder_config, mask_policy, optimizer_settings, settings, **extra).run()
