"""
Configuration settings for Audio ALBERT experiments
"""
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent
RUN_ROOT = Path(os.getenv("AALBERT_RUN_ROOT", str(BASE_DIR / "run")))

# Run-wide settings
RUN_CONFIG = {
    "seed": 0,
    "threads": int(os.getenv("AALBERT_THREADS", "1")),
    "precision": int(os.getenv("AALBERT_PRECISION", "32")),  # 32 or 64
    "output_dir": "",      # empty: RUN_ROOT/<timestamp>
    "checkpoint": "",      # encoder weight file for downstream, probe, analysis
    "synthetic": False,    # generate the corpus instead of reading data.corpus
}

# Transformer encoder (large configuration)
ENCODER_CONFIG = {
    "num_layers": 12,
    "hidden_dim": 768,
    "num_heads": 12,
    "ff_dim": 3072,
    "input_dim": 160,
    "target_dim": 201,
    "share_weights": True,
    "dropout_rate": 0.1,
    "max_sequence_length": 3000,
}

# Masked reconstruction corruption
MASK_CONFIG = {
    "select_fraction": 0.15,
    "zero_prob": 0.8,
    "replace_prob": 0.1,
    "keep_prob": 0.1,
    "downsample_factor": 3,
    "downsample_mode": "decimate",  # or "stack"
    "seed": 0,
}

# AdamW
OPTIMIZER_CONFIG = {
    "learning_rate": 5e-5,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "weight_decay": 0.01,
    "warmup_steps": 0,
}

# Pre-training loop
PRETRAIN_CONFIG = {
    "steps": 1000,
    "batch_size": 50,
    "checkpoint_every": 0,  # 0: final checkpoint only
    "log_every": 50,
}

# Precomputed feature corpus
DATA_CONFIG = {
    "corpus": "",     # manifest CSV or directory of .aalb files
    "split_seed": 0,
}

# Generated corpus
SYNTHETIC_CONFIG = {
    "num_speakers": 5,
    "num_phone_classes": 10,
    "utterances_per_speaker": 10,
    "min_frames": 90,
    "max_frames": 180,
    "noise_level": 0.1,
    "seed": 0,
    "mel_dim": 80,
    "target_dim": 201,
    "latent_dim": 24,
}

# Downstream adaptation
DOWNSTREAM_CONFIG = {
    "task": "speaker",                 # speaker | phoneme
    "mode": "feature_extraction",      # feature_extraction | fine_tune
    "fusion": "weighted_sum",          # weighted_sum | last
    "source": "encoder",               # encoder | input (raw-feature baseline)
    "learning_rate": 0.0,              # 0: 1e-3 for feature extraction, 1e-4 for fine-tuning
    "epochs": 20,
    "batch_size": 32,
    "patience": 5,
    "hidden_dim": 768,
    "weight_decay": 0.01,
    "label_fraction": 1.0,
    "export_embeddings": False,
}

# Layer probing
PROBE_CONFIG = {
    "depths": ["linear", "one_hidden", "two_hidden"],
    "tasks": ["phoneme", "speaker"],
    "layers": "",          # comma-separated 1-based layers; empty: all
    "hidden_dim": 768,
    "learning_rate": 1e-3,
    "epochs": 10,
    "patience": 3,
    "batch_size": 256,
    "max_frames": 200000,
    "sampling_seed": 0,
}

# Attention divergence analysis
ANALYSIS_CONFIG = {
    "sample_size": 32,
    "seed": 0,
}

NAMESPACES = {
    "run": RUN_CONFIG,
    "encoder": ENCODER_CONFIG,
    "mask": MASK_CONFIG,
    "optimizer": OPTIMIZER_CONFIG,
    "pretrain": PRETRAIN_CONFIG,
    "data": DATA_CONFIG,
    "synthetic": SYNTHETIC_CONFIG,
    "downstream": DOWNSTREAM_CONFIG,
    "probe": PROBE_CONFIG,
    "analysis": ANALYSIS_CONFIG,
}
