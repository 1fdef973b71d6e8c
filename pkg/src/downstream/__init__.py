"""
Downstream adaptation: fusion, task heads, training and embedding export
"""
from .heads import FusionHead, FusionMode, PhonemeHead, SpeakerHead, TrainMode, fuse
from .embeddings import export_pooled_embeddings, extract_representations, frame_labels
from .trainer import DownstreamResult, DownstreamSettings, DownstreamTrainer, train_downstream

__all__ = [
    "DownstreamResult", "DownstreamSettings", "DownstreamTrainer", "FusionHead", "FusionMode",
    "PhonemeHead", "SpeakerHead", "TrainMode", "export_pooled_embeddings",
    "extract_representations", "frame_labels", "fuse", "train_downstream",
]
