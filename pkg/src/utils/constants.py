"""
Constants and mappings for the Audio ALBERT toolkit
"""

# Acoustic feature layout
MEL_DIM = 80
INPUT_DIM = 2 * MEL_DIM  # log mel + delta
DEFAULT_TARGET_DIM = 201  # log-linear spectrogram bins
NUM_PHONE_CLASSES = 72

DELTA_WINDOW = 2
CMVN_STD_FLOOR = 1e-10
LAYER_NORM_EPS = 1e-5
INIT_STD = 0.02

# Binary formats
FEATURE_MAGIC = b"AALB"
FEATURE_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"AALW"
CHECKPOINT_FOOTER = b"AEND"
CHECKPOINT_FORMAT_VERSION = 1
FEATURE_FILE_SUFFIX = ".aalb"
CHECKPOINT_SUFFIX = ".aalw"

# Downstream heads
SPEAKER_TASK = "speaker"
PHONEME_TASK = "phoneme"
DOWNSTREAM_TASKS = (PHONEME_TASK, SPEAKER_TASK)

# Published model sizes for the parameter table
REFERENCE_ENCODER_SHAPE = {
    "hidden_dim": 768,
    "num_heads": 12,
    "ff_dim": 3072,
    "input_dim": INPUT_DIM,
    "target_dim": DEFAULT_TARGET_DIM,
}

REFERENCE_PARAMETER_TABLE = [
    # (model name, layers, shared, published parameters)
    ("AALBERT-12L", 12, True, 7.4e6),
    ("AALBERT-6L", 6, True, 7.4e6),
    ("AALBERT-3L", 3, True, 7.4e6),
    ("Unshared-12L", 12, False, 84.3e6),
    ("Unshared-6L", 6, False, 44.4e6),
    ("Unshared-3L", 3, False, 21.6e6),
]

# CSV layouts
LOSS_COLUMNS = ["step", "loss"]
METRICS_COLUMNS = ["task", "mode", "fusion", "layer_count", "test_accuracy"]
PROBE_COLUMNS = ["layer", "depth", "task", "accuracy", "seed"]
MANIFEST_COLUMNS = ["utterance_id", "path", "speaker_id"]
PARAMETER_COLUMNS = ["model", "layers", "shared", "input_projection",
                     "layer_block", "layer_blocks", "reconstruction_head", "total"]

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_DATA_ERROR = 2
EXIT_NUMERIC_ABORT = 3

SUCCESS_MESSAGES = {
    'pretrain_complete': "✅ Pre-training finished",
    'downstream_complete': "✅ Downstream training finished",
    'probe_complete': "✅ Probe sweep finished",
    'analysis_complete': "✅ Attention analysis finished",
}
