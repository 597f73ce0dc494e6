"""Binary shard container for episode records.

A dataset directory holds one manifest (``manifest.json``) and one or more
shard files (``shard-000.bin`` ...). Each episode is a self-describing blob:

    b"VEPS" | u32 version | u32 header_len | header JSON | payload

The header carries metadata, shapes, the symbolic prompt table, and the
grounding strings; the payload is the raw arrays in a fixed order: overhead
frames (RGB8 row-major), prompt rasters, actions (f32le), gate values
(f32le), prompt ids (i32le). The manifest records byte offsets and a sha256
per blob so any episode can be read and verified independently.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import DataError
from .episode import FORMAT_VERSION, EpisodeRecord, PromptRecord, SubtaskEntry

MAGIC = b"VEPS"
_SHARD_LIMIT = 512 * 1024 * 1024


@dataclass(frozen=True)
class ManifestEntry:
    episode_id: int
    family: str
    ood: str
    seed: int
    shard: str
    offset: int
    length: int
    sha256: str
    frames: int
    success: bool
    score: float

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "family": self.family,
            "ood": self.ood,
            "seed": self.seed,
            "shard": self.shard,
            "offset": self.offset,
            "length": self.length,
            "sha256": self.sha256,
            "frames": self.frames,
            "success": self.success,
            "score": self.score,
        }

    @staticmethod
    def from_dict(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            int(d["episode_id"]),
            d["family"],
            d["ood"],
            int(d["seed"]),
            d["shard"],
            int(d["offset"]),
            int(d["length"]),
            d["sha256"],
            int(d["frames"]),
            bool(d["success"]),
            float(d["score"]),
        )


@dataclass
class DatasetManifest:
    format_version: int
    created: str
    config: dict
    config_hash: str
    registry: dict
    discarded: dict
    episodes: list[ManifestEntry]
    training_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "created": self.created,
            "config": self.config,
            "config_hash": self.config_hash,
            "registry": self.registry,
            "discarded": self.discarded,
            "training_seeds": self.training_seeds,
            "episodes": [e.to_dict() for e in self.episodes],
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            format_version=int(d["format_version"]),
            created=d["created"],
            config=d["config"],
            config_hash=d["config_hash"],
            registry=d["registry"],
            discarded=d["discarded"],
            episodes=[ManifestEntry.from_dict(e) for e in d["episodes"]],
            training_seeds=[int(s) for s in d.get("training_seeds", [])],
        )


def config_fingerprint(config: dict) -> str:
    """Stable hash of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _encode_blob(record: EpisodeRecord) -> bytes:
    T = record.frames
    header = {
        "format_version": FORMAT_VERSION,
        "family": record.family,
        "instruction": record.instruction,
        "ood": record.ood,
        "seed": record.seed,
        "success": record.success,
        "score": record.score,
        "width": record.width,
        "height": record.height,
        "frames": T,
        "events": record.events,
        "key_frames": record.key_frames,
        "prompts": [p.to_dict() for p in record.prompts],
        "grounding": record.grounding,
        "subtask_log": [s.to_dict() for s in record.subtask_log],
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode()
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header_bytes)),
        header_bytes,
        np.ascontiguousarray(record.obs, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(record.prompt_rasters, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(record.actions, dtype="<f4").tobytes(),
        np.ascontiguousarray(record.phis, dtype="<f4").tobytes(),
        np.ascontiguousarray(record.prompt_ids, dtype="<i4").tobytes(),
    ]
    return b"".join(parts)


def _decode_blob(blob: bytes) -> EpisodeRecord:
    if blob[:4] != MAGIC:
        raise DataError(f"bad episode magic {blob[:4]!r}")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported episode format version {version}")
    pos = 12
    try:
        header = json.loads(blob[pos : pos + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"episode header is not valid JSON: {exc}") from exc
    pos += header_len

    T = int(header["frames"])
    H, W = int(header["height"]), int(header["width"])
    raster_bytes = T * H * W * 3

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise DataError("episode blob truncated")
        out = blob[pos : pos + n]
        pos += n
        return out

    obs = np.frombuffer(take(raster_bytes), dtype=np.uint8).reshape(T, H, W, 3)
    prompt_rasters = np.frombuffer(take(raster_bytes), dtype=np.uint8).reshape(T, H, W, 3)
    actions = np.frombuffer(take(T * 3 * 4), dtype="<f4").reshape(T, 3)
    phis = np.frombuffer(take(T * 4), dtype="<f4")
    prompt_ids = np.frombuffer(take(T * 4), dtype="<i4")
    if pos != len(blob):
        raise DataError(f"episode blob has {len(blob) - pos} trailing bytes")

    return EpisodeRecord(
        family=header["family"],
        instruction=header["instruction"],
        ood=header["ood"],
        seed=int(header["seed"]),
        success=bool(header["success"]),
        score=float(header["score"]),
        width=W,
        height=H,
        actions=actions.copy(),
        phis=phis.copy(),
        events=[int(e) for e in header["events"]],
        key_frames=[int(k) for k in header["key_frames"]],
        prompt_ids=prompt_ids.copy(),
        prompts=[PromptRecord.from_dict(p) for p in header["prompts"]],
        grounding=list(header["grounding"]),
        subtask_log=[SubtaskEntry.from_dict(s) for s in header["subtask_log"]],
        obs=obs.copy(),
        prompt_rasters=prompt_rasters.copy(),
    )


class ShardWriter:
    """Streams episode blobs to shard files and accumulates manifest entries."""

    def __init__(self, out_dir: str | Path, *, shard_limit: int = _SHARD_LIMIT):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.shard_limit = shard_limit
        self.entries: list[ManifestEntry] = []
        self._shard_index = -1
        self._handle = None
        self._offset = 0
        self._open_next()

    def _open_next(self) -> None:
        if self._handle is not None:
            self._handle.close()
        self._shard_index += 1
        self._shard_name = f"shard-{self._shard_index:03d}.bin"
        self._handle = open(self.out_dir / self._shard_name, "wb")
        self._offset = 0

    def add(self, record: EpisodeRecord) -> ManifestEntry:
        blob = _encode_blob(record)
        if self._offset > 0 and self._offset + len(blob) > self.shard_limit:
            self._open_next()
        entry = ManifestEntry(
            episode_id=len(self.entries),
            family=record.family,
            ood=record.ood,
            seed=record.seed,
            shard=self._shard_name,
            offset=self._offset,
            length=len(blob),
            sha256=hashlib.sha256(blob).hexdigest(),
            frames=record.frames,
            success=record.success,
            score=record.score,
        )
        self._handle.write(blob)
        self._offset += len(blob)
        self.entries.append(entry)
        return entry

    def finalize(
        self,
        *,
        config: dict,
        registry: dict,
        discarded: dict | None = None,
    ) -> DatasetManifest:
        self._handle.close()
        self._handle = None
        manifest = DatasetManifest(
            format_version=FORMAT_VERSION,
            created=datetime.now(timezone.utc).isoformat(),
            config=config,
            config_hash=config_fingerprint(config),
            registry=registry,
            discarded=discarded or {"count": 0, "reasons": {}},
            episodes=self.entries,
            training_seeds=sorted({e.seed for e in self.entries}),
        )
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest.to_dict(), indent=2))
        return manifest


def write_dataset(
    out_dir: str | Path,
    records: Iterable[EpisodeRecord],
    *,
    config: dict,
    registry: dict,
    discarded: dict | None = None,
) -> DatasetManifest:
    writer = ShardWriter(out_dir)
    for record in records:
        writer.add(record)
    return writer.finalize(config=config, registry=registry, discarded=discarded)


def load_manifest(dataset_dir: str | Path) -> DatasetManifest:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    try:
        return DatasetManifest.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc


def read_episode(dataset_dir: str | Path, entry: ManifestEntry) -> EpisodeRecord:
    """Read one episode, verifying its checksum before decoding."""
    path = Path(dataset_dir) / entry.shard
    if not path.exists():
        raise DataError(f"missing shard file {path}")
    with open(path, "rb") as fh:
        fh.seek(entry.offset)
        blob = fh.read(entry.length)
    if len(blob) != entry.length:
        raise DataError(f"episode {entry.episode_id}: shard truncated")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != entry.sha256:
        raise DataError(
            f"episode {entry.episode_id}: checksum mismatch ({digest[:12]} != {entry.sha256[:12]})"
        )
    return _decode_blob(blob)


def iterate_episodes(dataset_dir: str | Path) -> Iterator[tuple[ManifestEntry, EpisodeRecord]]:
    manifest = load_manifest(dataset_dir)
    for entry in manifest.episodes:
        yield entry, read_episode(dataset_dir, entry)
