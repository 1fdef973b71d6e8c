"""
Tests for layer fusion, task heads, downstream training and embedding export
"""
import numpy as np
import pandas as pd
import pytest

from conftest import tiny_encoder_config
from src.data_processing import UtteranceFeatures
from src.downstream import (
    DownstreamSettings,
    DownstreamTrainer,
    FusionHead,
    FusionMode,
    SpeakerHead,
    TrainMode,
    export_pooled_embeddings,
    frame_labels,
    fuse,
    train_downstream,
)
from src.encoder import init_encoder
from src.numerics import Tensor
from src.utils.exceptions import ConfigError, MissingLabelsError

SETTINGS = DownstreamSettings(hidden_dim=16, batch_size=8, epochs=2, patience=5)


def layer_stack(num_layers=3, frames=4, width=5, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(frames, width)) for _ in range(num_layers)]


# Fusion

def test_saturated_weights_select_one_layer():
    layers = layer_stack()
    head = FusionHead(FusionMode.WEIGHTED_SUM, 3, raw_weights=np.array([0.0, 0.0, 50.0]))
    np.testing.assert_allclose(fuse(layers, head).data, layers[2], atol=1e-5)


def test_zero_weights_average_layers():
    layers = layer_stack()
    head = FusionHead(FusionMode.WEIGHTED_SUM, 3)
    np.testing.assert_allclose(fuse(layers, head).data, np.mean(layers, axis=0), rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(head.layer_weights(), [1 / 3] * 3, rtol=1e-6)


def test_single_layer_weighted_sum_equals_last_layer():
    layers = layer_stack(num_layers=1)
    weighted = fuse(layers, FusionHead(FusionMode.WEIGHTED_SUM, 1, raw_weights=np.array([2.7])))
    last = fuse(layers, FusionHead(FusionMode.LAST_LAYER, 1))
    np.testing.assert_allclose(weighted.data, last.data, rtol=1e-6)


def test_last_layer_fusion_has_no_parameters():
    head = FusionHead("last", 4)
    assert head.parameters() == []
    np.testing.assert_array_equal(head.layer_weights(), [0.0, 0.0, 0.0, 1.0])


def test_unknown_fusion_mode():
    with pytest.raises(ConfigError, match="fusion mode"):
        FusionHead("max", 2)


# Heads

def test_speaker_head_pools_valid_frames_only():
    head = SpeakerHead(input_dim=3, num_speakers=2, seed=0)
    features = np.random.default_rng(1).normal(size=(1, 6, 3))
    padded = features.copy()
    padded[0, 4:] = 100.0
    np.testing.assert_allclose(head(Tensor(padded), lengths=[4]).data,
                               head(Tensor(features[:, :4])).data, rtol=1e-5)


def test_speaker_head_ignores_frame_order():
    head = SpeakerHead(input_dim=3, num_speakers=4, seed=0)
    features = np.random.default_rng(2).normal(size=(7, 3))
    shuffled = features[np.random.default_rng(3).permutation(7)]
    np.testing.assert_allclose(head(Tensor(features)).data, head(Tensor(shuffled)).data, rtol=1e-5)


def test_frame_labels_are_decimated(tiny_corpus):
    utterance = tiny_corpus[0]
    np.testing.assert_array_equal(frame_labels(utterance, 3), utterance.phonemes[::3])


# Training

def test_phoneme_task_requires_labels(tiny_corpus):
    unlabeled = UtteranceFeatures("zzz", 0, tiny_corpus[0].mel, tiny_corpus[0].target)
    with pytest.raises(MissingLabelsError, match="zzz"):
        train_downstream(None, "phoneme", "feature_extraction", "last", tiny_corpus + [unlabeled],
                         settings=SETTINGS)


def test_unknown_task_and_mode(tiny_corpus):
    with pytest.raises(ConfigError, match="task"):
        train_downstream(None, "emotion", "feature_extraction", "last", tiny_corpus, settings=SETTINGS)
    with pytest.raises(ConfigError, match="mode"):
        train_downstream(None, "speaker", "adapter", "last", tiny_corpus, settings=SETTINGS)


def test_input_baseline_uses_raw_features(tiny_corpus):
    result = train_downstream(None, "speaker", "feature_extraction", "weighted_sum", tiny_corpus,
                              epochs=2, settings=SETTINGS)
    assert result.layer_count == 0
    assert result.fusion.mode == FusionMode.LAST_LAYER
    assert result.metrics_row()["layer_count"] == 0
    assert 0.0 <= result.test_accuracy <= 1.0


def test_epoch_budget_comes_from_settings(tiny_corpus):
    settings = DownstreamSettings(hidden_dim=16, batch_size=8, epochs=3, patience=5)
    result = train_downstream(None, "speaker", "feature_extraction", "last", tiny_corpus, settings=settings)
    assert len(result.train_losses) == 3
    override = train_downstream(None, "speaker", "feature_extraction", "last", tiny_corpus,
                                epochs=1, settings=settings)
    assert len(override.train_losses) == 1


def test_input_baseline_cannot_fine_tune(tiny_corpus):
    with pytest.raises(ConfigError, match="Fine-tuning"):
        train_downstream(None, "speaker", "fine_tune", "last", tiny_corpus, settings=SETTINGS)


def test_feature_extraction_leaves_encoder_untouched(tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    before = [p.data.copy() for p in encoder.parameters()]
    result = train_downstream(encoder, "phoneme", "feature_extraction", "weighted_sum", tiny_corpus,
                              epochs=2, settings=SETTINGS)
    for param, values in zip(encoder.parameters(), before):
        np.testing.assert_array_equal(param.data, values)
    assert result.encoder is encoder
    assert result.layer_count == tiny_config.num_layers
    assert all(np.isfinite(result.train_losses))


def test_fusion_weights_stay_normalized(tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    result = train_downstream(encoder, "speaker", "feature_extraction", "weighted_sum", tiny_corpus,
                              epochs=3, settings=SETTINGS)
    assert len(result.fusion_weight_history) == 3 * 2
    for weights in result.fusion_weight_history:
        assert weights.shape == (tiny_config.num_layers,)
        assert weights.sum() == pytest.approx(1.0, abs=1e-5)


def test_fine_tuning_updates_a_copy(tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    before = encoder.input_weight.data.copy()
    settings = DownstreamSettings(hidden_dim=16, batch_size=8, epochs=2, patience=5, learning_rate=1e-2)
    result = train_downstream(encoder, "phoneme", TrainMode.FINE_TUNE, "last", tiny_corpus,
                              epochs=2, settings=settings)
    np.testing.assert_array_equal(encoder.input_weight.data, before)
    assert result.encoder is not encoder
    assert not np.array_equal(result.encoder.input_weight.data, before)
    assert all(np.isfinite(result.train_losses))


def test_label_fraction_shrinks_train_split(tiny_corpus):
    settings = DownstreamSettings(hidden_dim=16, label_fraction=0.5)
    trainer = DownstreamTrainer(None, "speaker", "feature_extraction", "last", tiny_corpus, settings)
    assert len(trainer.train_ids) == 5
    assert set(trainer.train_ids) <= set(trainer.split.train)


def test_label_fraction_out_of_range(tiny_corpus):
    with pytest.raises(ConfigError, match="label_fraction"):
        DownstreamTrainer(None, "speaker", "feature_extraction", "last", tiny_corpus,
                          DownstreamSettings(label_fraction=0.0))


def test_default_learning_rates():
    settings = DownstreamSettings()
    assert settings.resolved_learning_rate(TrainMode.FEATURE_EXTRACTION) == 1e-3
    assert settings.resolved_learning_rate(TrainMode.FINE_TUNE) == 1e-4


# Embedding export

def test_embedding_export_writes_one_row_per_utterance(tmp_path, tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    path = export_pooled_embeddings(encoder, None, tiny_corpus, tmp_path / "embeddings.csv")
    table = pd.read_csv(path)
    assert len(table) == len(tiny_corpus)
    assert list(table.columns[:2]) == ["utterance_id", "speaker_id"]
    assert table.shape[1] == 2 + tiny_config.hidden_dim


def test_input_embeddings_have_mel_and_delta_width(tmp_path, tiny_corpus):
    table = pd.read_csv(export_pooled_embeddings(None, None, tiny_corpus, tmp_path / "embeddings.csv"))
    assert table.shape == (len(tiny_corpus), 2 + 2 * tiny_corpus[0].mel.shape[1])


def test_empty_corpus_writes_header_only(tmp_path):
    path = export_pooled_embeddings(None, None, [], tmp_path / "embeddings.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("utterance_id,speaker_id,dim_0")


# Smoke-run encoder

SMOKE_SETTINGS = DownstreamSettings(hidden_dim=64, batch_size=8, epochs=20, patience=5)


@pytest.mark.slow
def test_pretrained_speaker_features_beat_raw_inputs(smoke_pretraining, smoke_corpus):
    encoder = smoke_pretraining.weights
    pretrained = train_downstream(encoder, "speaker", "feature_extraction", "weighted_sum", smoke_corpus,
                                  settings=SMOKE_SETTINGS)
    raw = train_downstream(None, "speaker", "feature_extraction", "last", smoke_corpus, settings=SMOKE_SETTINGS)
    assert pretrained.test_accuracy > 0.9
    assert pretrained.test_accuracy > raw.test_accuracy


@pytest.mark.slow
def test_fine_tuning_fits_faster_than_frozen_features(smoke_pretraining, smoke_corpus):
    encoder = smoke_pretraining.weights
    settings = DownstreamSettings(hidden_dim=64, batch_size=8, epochs=1, learning_rate=1e-3)
    frozen = train_downstream(encoder, "speaker", "feature_extraction", "weighted_sum", smoke_corpus,
                              settings=settings)
    tuned = train_downstream(encoder, "speaker", "fine_tune", "weighted_sum", smoke_corpus, settings=settings)
    assert tuned.train_losses[0] < frozen.train_losses[0]
