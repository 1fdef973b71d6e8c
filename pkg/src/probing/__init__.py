"""
Layer-wise probing classifiers
"""
from .probe import (
    FrameDataset,
    ProbeCell,
    ProbeClassifier,
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

__all__ = [
    "FrameDataset", "ProbeCell", "ProbeClassifier", "ProbeConfig", "ProbeDepth", "ProbeReport",
    "ProbeRunner", "ProbeTask", "fit_probe", "majority_baseline", "probe_sweep", "run_probe",
]
