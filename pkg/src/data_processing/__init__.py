"""
Feature ingestion, corpus splits and the synthetic corpus
"""
from .features import UtteranceFeatures, add_deltas, cmvn, prepare_inputs
from .feature_file import read_feature_file, write_feature_file
from .data_loader import CorpusLoader, CorpusSplit, index_by_id, round_half_up, split_corpus
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus

__all__ = [
    "CorpusLoader", "CorpusSplit", "SyntheticCorpusSpec", "UtteranceFeatures", "add_deltas",
    "cmvn", "generate_synthetic_corpus", "index_by_id", "prepare_inputs", "read_feature_file",
    "round_half_up", "split_corpus", "write_feature_file",
]
