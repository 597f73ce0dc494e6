from .episode import EpisodeRecord, PromptRecord, annotate_episode
from .shard import (
    DatasetManifest,
    ManifestEntry,
    iterate_episodes,
    load_manifest,
    read_episode,
    write_dataset,
)
from .generate import generate_dataset
from .validate import ValidationReport, validate_dataset, validate_record
from .dataset import TrainDataset, TrainBatch

__all__ = [
    "EpisodeRecord",
    "PromptRecord",
    "annotate_episode",
    "DatasetManifest",
    "ManifestEntry",
    "iterate_episodes",
    "load_manifest",
    "read_episode",
    "write_dataset",
    "generate_dataset",
    "ValidationReport",
    "validate_dataset",
    "validate_record",
    "TrainDataset",
    "TrainBatch",
]
