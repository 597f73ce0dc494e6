"""Flat key=value run configuration: file parsing, merging, fingerprints.

Every command-line run resolves its settings from three layers with fixed
precedence: built-in defaults, then an optional config file, then explicit
flags. The resolved mapping carries a provenance tag per key and a stable
fingerprint so any artifact can be traced back to the exact settings that
produced it.

Config files are plain text, one ``key = value`` per line. ``#`` starts a
comment; blank lines are ignored. Keys use the same snake_case names as
the corresponding long flags. Values are typed by the default they
replace: booleans accept ``true/false/1/0/yes/no``, numbers are parsed as
int or float, everything else stays a string.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

ENV_VAR = "VISTEER_CONFIG"

# Orchestration and presentation settings; changing them cannot change any
# produced artifact, so they stay out of the fingerprint.
NON_SEMANTIC_KEYS = frozenset(
    {"json", "dry_run", "workers", "out", "config", "emit_csv", "host", "port"}
)

_BOOL_WORDS = {
    "true": True,
    "false": False,
    "1": True,
    "0": False,
    "yes": True,
    "no": False,
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value file into raw string values."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def coerce(key: str, raw: str, default: Any) -> Any:
    """Type a raw string by the default value it overrides."""
    if isinstance(default, bool):
        word = raw.lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if isinstance(default, int):
        try:
            return int(raw, 10)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}") from exc
    if default is None or isinstance(default, str):
        return raw
    raise ConfigError(f"config key {key!r} has unsupported type {type(default).__name__}")


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one command, with per-key provenance."""

    command: str
    values: Mapping[str, Any]
    sources: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, fallback: Any = None) -> Any:
        return self.values.get(key, fallback)

    @property
    def fingerprint(self) -> str:
        payload = "\n".join(
            f"{k}={self.values[k]!r}"
            for k in sorted(self.values)
            if k not in NON_SEMANTIC_KEYS
        )
        return hashlib.sha256(f"{self.command}\n{payload}".encode()).hexdigest()[:12]

    def describe(self) -> str:
        """Precedence printout: one line per key, tagged with its source."""
        lines = [f"command: {self.command}", "settings (defaults < config file < flags):"]
        for key in sorted(self.values):
            source = self.sources.get(key, "default")
            lines.append(f"  {key} = {self.values[key]}  [{source}]")
        lines.append(f"fingerprint: {self.fingerprint}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "values": dict(self.values),
            "sources": dict(self.sources),
            "fingerprint": self.fingerprint,
        }


def default_config_path() -> str | None:
    """Config file named by the environment, if any."""
    return os.environ.get(ENV_VAR) or None


def resolve(
    command: str,
    defaults: Mapping[str, Any],
    flag_values: Mapping[str, Any],
    config_path: str | None = None,
) -> RunConfig:
    """Merge defaults, the config file, and explicit flags, in that order.

    ``flag_values`` must contain only flags the user actually passed.
    File keys that no subcommand default declares are rejected; keys that
    belong to other subcommands are tolerated so one file can configure a
    whole workflow, but they must still be known somewhere.
    """
    values = dict(defaults)
    sources = {key: "default" for key in defaults}

    path = config_path if config_path is not None else default_config_path()
    if path:
        file_values = parse_config_file(path)
        known = known_keys()
        for key, raw in file_values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            if key in values:
                values[key] = coerce(key, raw, defaults[key])
                sources[key] = "file"

    for key, value in flag_values.items():
        if key not in values:
            raise ConfigError(f"unknown setting {key!r} for {command}")
        values[key] = value
        sources[key] = "flag"

    return RunConfig(command=command, values=values, sources=sources)


# Populated by the command-line module at import time so file validation
# can accept any key that some subcommand understands.
_KNOWN_KEYS: set[str] = set()


def register_keys(keys) -> None:
    _KNOWN_KEYS.update(keys)


def known_keys() -> frozenset[str]:
    return frozenset(_KNOWN_KEYS)
