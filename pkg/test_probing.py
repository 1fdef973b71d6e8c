"""
Tests for probing classifiers and the layer x task x depth sweep
"""
import numpy as np
import pandas as pd
import pytest

from src.data_processing import UtteranceFeatures
from src.encoder import init_encoder
from src.probing import (
    FrameDataset,
    ProbeCell,
    ProbeConfig,
    ProbeDepth,
    ProbeReport,
    ProbeRunner,
    ProbeTask,
    fit_probe,
    majority_baseline,
    probe_sweep,
    run_probe,
)
from src.utils.constants import PROBE_COLUMNS
from src.utils.exceptions import ConfigError, MissingLabelsError

FAST = ProbeConfig(hidden_dim=8, epochs=2, batch_size=64)
DEPTHS = ["linear", "one_hidden", "two_hidden"]
TASKS = ["phoneme", "speaker"]


def sweep(encoder, corpus, **options):
    return probe_sweep(encoder, corpus, DEPTHS, TASKS, base_config=FAST, **options)


def test_sweep_covers_full_grid_in_order(tiny_corpus, tiny_config):
    report = sweep(init_encoder(tiny_config, seed=0), tiny_corpus)
    assert len(report) == 12
    keys = [(c.layer, c.task.value, c.depth.value) for c in report.cells]
    assert keys == [(layer, task, depth) for layer in (1, 2) for task in TASKS for depth in DEPTHS]
    assert all(0.0 <= c.accuracy <= 1.0 for c in report.cells)
    assert len(report.model_id) == 16


def test_sweep_is_deterministic(tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    first = sweep(encoder, tiny_corpus)
    second = sweep(encoder, tiny_corpus, threads=3)
    assert [c.accuracy for c in first.cells] == [c.accuracy for c in second.cells]


def test_report_csv(tmp_path, tiny_corpus, tiny_config):
    report = sweep(init_encoder(tiny_config, seed=0), tiny_corpus, layers=[2])
    table = pd.read_csv(report.write_csv(tmp_path / "probe_report.csv"))
    assert list(table.columns) == PROBE_COLUMNS
    assert len(table) == 6
    assert set(table["layer"]) == {2}
    assert report.accuracy(2, "linear", "speaker") == pytest.approx(
        table[(table["depth"] == "linear") & (table["task"] == "speaker")]["accuracy"].iloc[0])


def test_layer_outside_encoder_is_rejected(tiny_corpus, tiny_config):
    encoder = init_encoder(tiny_config, seed=0)
    with pytest.raises(ConfigError, match="outside 1..2"):
        run_probe(encoder, ProbeConfig(layer=3), tiny_corpus)
    with pytest.raises(ConfigError, match="outside 1..2"):
        sweep(encoder, tiny_corpus, layers=[0, 1])


def test_invalid_depth_or_task():
    with pytest.raises(ConfigError):
        ProbeConfig(depth="three_hidden")
    with pytest.raises(ConfigError):
        ProbeConfig(task="emotion")


def test_phoneme_probe_requires_labels(tiny_corpus, tiny_config):
    unlabeled = [UtteranceFeatures(u.utterance_id, u.speaker_id, u.mel, u.target) for u in tiny_corpus]
    with pytest.raises(MissingLabelsError):
        run_probe(init_encoder(tiny_config, seed=0), FAST, unlabeled)


def test_probe_on_noise_matches_majority_baseline():
    rng = np.random.default_rng(0)

    def noise(frames):
        labels = rng.permutation(np.arange(frames) % 4)
        return FrameDataset(rng.normal(size=(frames, 8)), labels)

    train, dev, test = noise(4000), noise(400), noise(4000)
    accuracy = fit_probe(train, dev, test, 4, ProbeConfig(epochs=3, batch_size=128))
    assert majority_baseline(train.labels, test.labels) == pytest.approx(0.25)
    assert abs(accuracy - 0.25) <= 0.03


def test_probe_learns_separable_frames():
    rng = np.random.default_rng(1)
    centers = rng.normal(size=(3, 6)) * 4.0

    def blobs(frames):
        labels = rng.integers(0, 3, size=frames)
        return FrameDataset(centers[labels] + rng.normal(size=(frames, 6)), labels)

    accuracy = fit_probe(blobs(900), blobs(150), blobs(300), 3,
                         ProbeConfig(epochs=20, batch_size=32, learning_rate=1e-2))
    assert accuracy > 0.9


def test_majority_baseline():
    assert majority_baseline(np.array([1, 1, 2]), np.array([1, 2, 2, 1])) == 0.5
    assert majority_baseline(np.array([0]), np.array([], dtype=np.int64)) == 0.0


def test_best_layers_prefers_lower_layer_on_ties():
    cells = [
        ProbeCell(1, ProbeDepth.LINEAR, ProbeTask.PHONEME, 0.4),
        ProbeCell(2, ProbeDepth.LINEAR, ProbeTask.PHONEME, 0.6),
        ProbeCell(3, ProbeDepth.LINEAR, ProbeTask.PHONEME, 0.6),
        ProbeCell(1, ProbeDepth.LINEAR, ProbeTask.SPEAKER, 0.9),
        ProbeCell(2, ProbeDepth.LINEAR, ProbeTask.SPEAKER, 0.7),
    ]
    report = ProbeReport(cells, model_id="x", seed=0, sampling_seed=0)
    assert report.best_layers() == {("phoneme", "linear"): 2, ("speaker", "linear"): 1}
    with pytest.raises(KeyError):
        report.accuracy(4, "linear", "phoneme")


@pytest.mark.slow
def test_pretrained_layers_against_baselines(smoke_pretraining, smoke_corpus):
    runner = ProbeRunner(smoke_pretraining.weights, smoke_corpus)
    for layer in (1, 2):
        speaker = ProbeConfig(depth="linear", task="speaker", layer=layer, hidden_dim=64)
        train, _, test = runner.datasets(speaker)
        assert runner.run(speaker) > majority_baseline(train.labels, test.labels)
        for task in ("phoneme", "speaker"):
            linear = runner.run(ProbeConfig(depth="linear", task=task, layer=layer, hidden_dim=64))
            deeper = runner.run(ProbeConfig(depth="two_hidden", task=task, layer=layer, hidden_dim=64))
            assert deeper >= linear - 0.02
