"""
Corpus loading and train/dev/test splits
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .feature_file import read_feature_file
from .features import UtteranceFeatures
from ..utils.constants import FEATURE_FILE_SUFFIX, MANIFEST_COLUMNS
from ..utils.exceptions import DataError, FeatureFileError
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


class CorpusLoader:
    """Loads feature files listed in a manifest CSV or found in a directory."""

    def __init__(self, source: PathLike, threads: int = 1):
        self.source = Path(source)
        self.threads = threads
        self.manifest: Optional[pd.DataFrame] = None

    def load_manifest(self) -> pd.DataFrame:
        """
        Read the ``utterance_id,path,speaker_id`` manifest.

        Returns:
            pd.DataFrame: Manifest rows with paths resolved against the manifest's folder
        """
        try:
            frame = pd.read_csv(self.source, dtype={"utterance_id": str, "path": str})
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"Failed to load manifest {self.source}: {e}") from e

        missing = [column for column in MANIFEST_COLUMNS if column not in frame.columns]
        if missing:
            raise DataError(f"Manifest {self.source} lacks column(s): {', '.join(missing)}")
        for column in ("utterance_id", "path"):
            frame[column] = frame[column].str.strip()
        frame["path"] = frame["path"].apply(
            lambda p: str(Path(p) if Path(p).is_absolute() else self.source.parent / p)
        )
        if frame["utterance_id"].duplicated().any():
            duplicated = frame.loc[frame["utterance_id"].duplicated(), "utterance_id"].iloc[0]
            raise DataError(f"Manifest {self.source} repeats utterance id {duplicated}")
        self.manifest = frame
        return frame

    def _read_manifest_row(self, row) -> UtteranceFeatures:
        utterance = read_feature_file(row.path)
        if utterance.utterance_id != row.utterance_id or utterance.speaker_id != int(row.speaker_id):
            raise DataError(
                f"{row.path}: file holds ({utterance.utterance_id}, speaker {utterance.speaker_id}), "
                f"manifest says ({row.utterance_id}, speaker {row.speaker_id})"
            )
        return utterance

    def load(self) -> List[UtteranceFeatures]:
        """
        Load the corpus.

        A directory is scanned for feature files; unreadable or foreign files
        are skipped with a warning. A manifest must reference only valid files.

        Returns:
            List[UtteranceFeatures]: Utterances sorted by id
        """
        if self.source.is_dir():
            utterances = self._scan_directory()
        else:
            manifest = self.load_manifest()
            utterances = parallel_map(self._read_manifest_row,
                                      list(manifest.itertuples(index=False)), self.threads)
        if not utterances:
            raise DataError(f"No utterances found in {self.source}")
        logger.info(f"📁 Loaded {len(utterances)} utterances from {self.source}")
        return sorted(utterances, key=lambda u: u.utterance_id)

    def _scan_directory(self) -> List[UtteranceFeatures]:
        utterances = []
        seen = set()
        for path in sorted(self.source.iterdir()):
            if not path.is_file():
                continue
            if path.suffix != FEATURE_FILE_SUFFIX:
                logger.warning(f"⚠️ Skipping {path.name}: not a {FEATURE_FILE_SUFFIX} feature file")
                continue
            try:
                utterance = read_feature_file(path)
            except FeatureFileError as e:
                logger.warning(f"⚠️ Skipping {path.name}: {e}")
                continue
            if utterance.utterance_id in seen:
                logger.warning(f"⚠️ Skipping {path.name}: duplicate utterance id {utterance.utterance_id}")
                continue
            seen.add(utterance.utterance_id)
            utterances.append(utterance)
        return utterances


@dataclass
class CorpusSplit:
    """Disjoint train/dev/test utterance-id lists."""

    train: List[str]
    dev: List[str]
    test: List[str]

    def __post_init__(self):
        overlap = (set(self.train) & set(self.dev)) | (set(self.train) & set(self.test)) \
            | (set(self.dev) & set(self.test))
        if overlap:
            raise DataError(f"Split parts overlap on {sorted(overlap)[:3]}")

    def part(self, name: str) -> List[str]:
        if name not in ("train", "dev", "test"):
            raise ValueError(f"Unknown split part '{name}'")
        return getattr(self, name)

    def select(self, utterances: Iterable[UtteranceFeatures], name: str) -> List[UtteranceFeatures]:
        by_id = index_by_id(utterances)
        return [by_id[utterance_id] for utterance_id in self.part(name)]


def index_by_id(utterances: Iterable[UtteranceFeatures]) -> Dict[str, UtteranceFeatures]:
    return {u.utterance_id: u for u in utterances}


def split_corpus(utterances: Sequence[UtteranceFeatures], seed: int = 0) -> CorpusSplit:
    """
    Speaker-stratified 8:1:1 split.

    Each speaker's utterances are shuffled, then dealt round-robin across
    speakers; the first part of the deal is train and the tail alternates
    between dev and test, so every speaker lands in train first.

    Args:
        utterances: Corpus
        seed (int): Shuffle seed

    Returns:
        CorpusSplit: Reproducible split with dev and test of round(N/10) each
    """
    rng = np.random.default_rng(seed)
    by_speaker: Dict[int, List[str]] = {}
    for utterance in sorted(utterances, key=lambda u: u.utterance_id):
        by_speaker.setdefault(utterance.speaker_id, []).append(utterance.utterance_id)
    groups = []
    for speaker in sorted(by_speaker):
        ids = by_speaker[speaker]
        groups.append([ids[i] for i in rng.permutation(len(ids))])

    dealt: List[str] = []
    for position in range(max((len(g) for g in groups), default=0)):
        dealt.extend(g[position] for g in groups if position < len(g))

    held_out = round_half_up(len(dealt) / 10)
    if len(dealt) >= 3:
        held_out = max(held_out, 1)
    train_count = len(dealt) - 2 * held_out
    tail = dealt[train_count:]
    return CorpusSplit(train=dealt[:train_count], dev=tail[0::2], test=tail[1::2])
