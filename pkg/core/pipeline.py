"""
Experiment pipeline orchestrator: run directories, corpora and the five experiments
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import RUN_ROOT
from src.analysis import JSMatrix, build_js_matrices, write_js_matrices
from src.data_processing import CorpusLoader, CorpusSplit, UtteranceFeatures, generate_synthetic_corpus, split_corpus
from src.downstream import DownstreamResult, export_pooled_embeddings, train_downstream
from src.encoder import EncoderConfig, EncoderWeights, count_parameters, load_weights, parameter_breakdown
from src.numerics import set_default_dtype
from src.pretraining import PretrainResult, Pretrainer
from src.pretraining.masking import STACK
from src.probing import ProbeReport, probe_sweep
from src.utils.constants import (
    METRICS_COLUMNS,
    PARAMETER_COLUMNS,
    REFERENCE_ENCODER_SHAPE,
    REFERENCE_PARAMETER_TABLE,
)
from src.utils.exceptions import ConfigError, DataError
from src.utils.run_config import RunConfig

logger = logging.getLogger(__name__)

PRECISIONS = {32: np.float32, 64: np.float64}

CHECKPOINT_DIR = "checkpoints"
METRICS_DIR = "metrics"
ANALYSIS_DIR = "analysis"


def model_name(config: EncoderConfig) -> str:
    return f"{'AALBERT' if config.share_weights else 'Unshared'}-{config.num_layers}L"


def expected_input_dim(mel_dim: int, downsample_factor: int, downsample_mode: str) -> int:
    """Encoder input width for a corpus of ``mel_dim`` log-mel channels."""
    width = 2 * mel_dim
    return width * downsample_factor if downsample_mode == STACK else width


class ExperimentPipeline:
    """Runs one experiment per call inside a self-describing run directory."""

    def __init__(self, run_root: Optional[Union[str, Path]] = None):
        self.run_root = Path(run_root) if run_root else RUN_ROOT
        self.config: Optional[RunConfig] = None
        self.run_dir: Optional[Path] = None

    # Setup

    def prepare(self, config: RunConfig) -> Path:
        """
        Apply run-wide settings and create ``<run>/{checkpoints,metrics,analysis}``.

        Args:
            config (RunConfig): Resolved configuration, written to ``config.resolved``

        Returns:
            Path: The run directory
        """
        precision = config.get("run.precision")
        if precision not in PRECISIONS:
            raise ConfigError(f"run.precision must be 32 or 64, got {precision}")
        if config.get("run.threads") < 1:
            raise ConfigError(f"run.threads must be >= 1, got {config.get('run.threads')}")
        set_default_dtype(PRECISIONS[precision])

        output_dir = config.get("run.output_dir")
        if output_dir:
            run_dir = Path(output_dir)
        else:
            run_dir = self.run_root / datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        for name in (CHECKPOINT_DIR, METRICS_DIR, ANALYSIS_DIR):
            (run_dir / name).mkdir(parents=True, exist_ok=True)
        config.write_resolved(run_dir)

        self.config = config
        self.run_dir = run_dir
        logger.info(f"📁 Run directory: {run_dir}")
        return run_dir

    def _require_prepared(self) -> Tuple[RunConfig, Path]:
        if self.config is None or self.run_dir is None:
            raise ConfigError("Pipeline not prepared; call prepare(config) first")
        return self.config, self.run_dir

    def load_corpus(self, config: Optional[RunConfig] = None) -> List[UtteranceFeatures]:
        """Synthetic corpus when ``run.synthetic`` is set, else the ``data.corpus`` manifest or directory."""
        config = config or self._require_prepared()[0]
        if config.get("run.synthetic"):
            return generate_synthetic_corpus(config.synthetic_spec())
        source = config.get("data.corpus")
        if not source:
            raise ConfigError("No corpus given: set data.corpus (or --corpus) or use --synthetic")
        return CorpusLoader(source, threads=config.get("run.threads")).load()

    def split(self, corpus: List[UtteranceFeatures]) -> CorpusSplit:
        config, _ = self._require_prepared()
        return split_corpus(corpus, config.get("data.split_seed"))

    def load_encoder(self) -> EncoderWeights:
        config, _ = self._require_prepared()
        checkpoint = config.get("run.checkpoint")
        if not checkpoint:
            raise ConfigError("No checkpoint given: set run.checkpoint (or --checkpoint)")
        weights = load_weights(checkpoint)
        logger.info(f"📁 Loaded {model_name(weights.config)} encoder from {checkpoint}")
        return weights

    def _check_dims(self, encoder_config: EncoderConfig, corpus: List[UtteranceFeatures],
                    with_targets: bool = False) -> None:
        if not corpus:
            raise DataError("Corpus is empty")
        config, _ = self._require_prepared()
        provided = expected_input_dim(corpus[0].mel.shape[1], config.get("mask.downsample_factor"),
                                      config.get("mask.downsample_mode"))
        if provided != encoder_config.input_dim:
            raise DataError(f"Encoder expects input_dim {encoder_config.input_dim} "
                            f"but the corpus provides {provided}")
        if with_targets and corpus[0].target.shape[1] != encoder_config.target_dim:
            raise DataError(f"Encoder expects target_dim {encoder_config.target_dim} "
                            f"but the corpus provides {corpus[0].target.shape[1]}")

    # Experiments

    def pretrain(self) -> PretrainResult:
        """Masked reconstruction; writes ``checkpoints/`` and ``metrics/loss.csv``."""
        config, run_dir = self._require_prepared()
        corpus = self.load_corpus(config)
        encoder_config = config.encoder_config()
        self._check_dims(encoder_config, corpus, with_targets=True)
        trainer = Pretrainer(
            corpus,
            encoder_config,
            config.mask_policy(),
            config.optimizer_settings(),
            config.pretrain_settings(),
            checkpoint_dir=run_dir / CHECKPOINT_DIR,
            loss_path=run_dir / METRICS_DIR / "loss.csv",
        )
        return trainer.run()

    def downstream(self) -> DownstreamResult:
        """Train and evaluate one task head; appends a row to ``metrics/metrics.csv``."""
        config, run_dir = self._require_prepared()
        corpus = self.load_corpus(config)
        if config.get("downstream.source") == "input":
            encoder = None
        elif config.get("downstream.source") == "encoder":
            encoder = self.load_encoder()
            self._check_dims(encoder.config, corpus)
        else:
            raise ConfigError(f"downstream.source must be 'encoder' or 'input', "
                              f"got {config.get('downstream.source')!r}")

        settings = config.downstream_settings()
        result = train_downstream(
            encoder,
            config.get("downstream.task"),
            config.get("downstream.mode"),
            config.get("downstream.fusion"),
            corpus,
            epochs=settings.epochs,
            settings=settings,
            split=self.split(corpus),
        )
        self.append_metrics(result)

        if config.get("downstream.export_embeddings"):
            path = export_pooled_embeddings(
                result.encoder, result.fusion if result.encoder is not None else None, corpus,
                run_dir / ANALYSIS_DIR / "embeddings.csv",
                settings.downsample_factor, settings.downsample_mode, settings.threads,
            )
            logger.info(f"💾 Embeddings written to {path}")
        return result

    def append_metrics(self, result: DownstreamResult) -> Path:
        _, run_dir = self._require_prepared()
        path = run_dir / METRICS_DIR / "metrics.csv"
        row = pd.DataFrame([result.metrics_row()], columns=METRICS_COLUMNS)
        row.to_csv(path, mode="a", header=not path.exists(), index=False)
        return path

    def probe(self) -> ProbeReport:
        """Probe sweep over layers, depths and tasks; writes ``metrics/probe_report.csv``."""
        config, run_dir = self._require_prepared()
        corpus = self.load_corpus(config)
        encoder = self.load_encoder()
        self._check_dims(encoder.config, corpus)
        report = probe_sweep(
            encoder,
            corpus,
            depths=config.get("probe.depths"),
            tasks=config.get("probe.tasks"),
            base_config=config.probe_config(),
            layers=config.probe_layers(),
            split=self.split(corpus),
            downsample_factor=config.get("mask.downsample_factor"),
            downsample_mode=config.get("mask.downsample_mode"),
            threads=config.get("run.threads"),
        )
        path = report.write_csv(run_dir / METRICS_DIR / "probe_report.csv")
        logger.info(f"💾 Probe report written to {path}")
        return report

    def analyze_attention(self) -> Tuple[List[JSMatrix], JSMatrix]:
        """JS divergence between layer pairs on the test split; writes ``analysis/js_matrix_*.csv``."""
        config, run_dir = self._require_prepared()
        corpus = self.load_corpus(config)
        encoder = self.load_encoder()
        self._check_dims(encoder.config, corpus)
        sample = self.split(corpus).select(corpus, "test") or corpus
        heads, average = build_js_matrices(
            encoder,
            sample,
            sample_size=config.get("analysis.sample_size"),
            seed=config.get("analysis.seed"),
            downsample_factor=config.get("mask.downsample_factor"),
            downsample_mode=config.get("mask.downsample_mode"),
            threads=config.get("run.threads"),
        )
        paths = write_js_matrices(heads, average, run_dir / ANALYSIS_DIR)
        logger.info(f"💾 Wrote {len(paths)} JS matrices to {run_dir / ANALYSIS_DIR}")
        return heads, average

    def count_params(self, reference_table: bool = False) -> pd.DataFrame:
        """
        Parameter table for the configured encoder, the checkpoint, or the published sizes.

        Args:
            reference_table (bool): Count the six published configurations instead

        Returns:
            pd.DataFrame: One row per model (``PARAMETER_COLUMNS``), also written to
            ``metrics/parameters.csv``
        """
        config, run_dir = self._require_prepared()
        if reference_table:
            rows = []
            for name, layers, shared, _ in REFERENCE_PARAMETER_TABLE:
                shape = EncoderConfig(num_layers=layers, share_weights=shared, **REFERENCE_ENCODER_SHAPE)
                rows.append(self._parameter_row(name, shape, parameter_breakdown(shape)))
        elif config.get("run.checkpoint"):
            weights = self.load_encoder()
            rows = [self._parameter_row(model_name(weights.config), weights.config, count_parameters(weights))]
        else:
            encoder_config = config.encoder_config()
            rows = [self._parameter_row(model_name(encoder_config), encoder_config,
                                        parameter_breakdown(encoder_config))]
        table = pd.DataFrame(rows, columns=PARAMETER_COLUMNS)
        table.to_csv(run_dir / METRICS_DIR / "parameters.csv", index=False)
        return table

    @staticmethod
    def _parameter_row(name: str, encoder_config: EncoderConfig, counts) -> dict:
        return {
            "model": name,
            "layers": encoder_config.num_layers,
            "shared": encoder_config.share_weights,
            **counts.breakdown(),
        }


def sharing_reduction(table: pd.DataFrame, layers: int = 12) -> float:
    """Fraction of parameters removed by sharing at ``layers`` layers (1 - shared/unshared)."""
    rows = table[table["layers"] == layers]
    shared = rows[rows["shared"]]["total"]
    unshared = rows[~rows["shared"]]["total"]
    if shared.empty or unshared.empty:
        raise DataError(f"Parameter table lacks a shared/unshared pair at {layers} layers")
    return 1.0 - float(shared.iloc[0]) / float(unshared.iloc[0])


# Global pipeline instance
pipeline = ExperimentPipeline()
