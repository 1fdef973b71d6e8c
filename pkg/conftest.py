"""
Shared pytest fixtures
"""
import numpy as np
import pytest

from src.data_processing import SyntheticCorpusSpec, generate_synthetic_corpus
from src.encoder import EncoderConfig
from src.numerics import default_dtype
from src.pretraining import MaskPolicy, OptimizerSettings, pretrain

TINY_SPEC = SyntheticCorpusSpec(
    num_speakers=3,
    num_phone_classes=4,
    utterances_per_speaker=4,
    min_frames=24,
    max_frames=36,
    mel_dim=6,
    target_dim=5,
    latent_dim=6,
    min_segment_frames=3,
    max_segment_frames=6,
    seed=0,
)


def tiny_encoder_config(**overrides) -> EncoderConfig:
    values = dict(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=16, input_dim=2 * TINY_SPEC.mel_dim,
                  target_dim=TINY_SPEC.target_dim, share_weights=True, dropout_rate=0.0,
                  max_sequence_length=64)
    values.update(overrides)
    return EncoderConfig(**values)


@pytest.fixture
def float64():
    """Run the test in double precision (gradient checks)."""
    with default_dtype(np.float64):
        yield


@pytest.fixture
def tiny_corpus():
    return generate_synthetic_corpus(TINY_SPEC)


@pytest.fixture
def tiny_config():
    return tiny_encoder_config()


SMOKE_CONFIG = EncoderConfig(num_layers=2, hidden_dim=64, num_heads=4, ff_dim=256, share_weights=True,
                             dropout_rate=0.0, max_sequence_length=512)


@pytest.fixture(scope="session")
def smoke_corpus():
    return generate_synthetic_corpus(SyntheticCorpusSpec())


@pytest.fixture(scope="session")
def smoke_pretraining(smoke_corpus):
    """500 steps of masked reconstruction on the default synthetic corpus (shared by the slow tests)."""
    return pretrain(smoke_corpus, SMOKE_CONFIG, MaskPolicy(seed=0),
                    OptimizerSettings(learning_rate=1e-3, warmup_steps=50),
                    steps=500, batch_size=8, log_every=0)
