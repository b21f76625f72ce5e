"""Run manifests: reproducibility sidecars for every CLI output.

Each output file gets a `<name>.manifest.json` neighbor recording the
subcommand, resolved flags, content digests of every input, the tool
version, the seed, and a timestamp. Outputs themselves never embed
timestamps, so re-running a pipeline with the same inputs, flags, and
seed reproduces every data file byte for byte. The manifest timestamp
honors SOURCE_DATE_EPOCH, which makes even the sidecars reproducible
under a pinned epoch.
"""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import ConfigurationError

THREADS_ENV = "NUTRICLUSTER_THREADS"
EPOCH_ENV = "SOURCE_DATE_EPOCH"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def thread_cap() -> int | None:
    """Validated NUTRICLUSTER_THREADS value, or None when unset."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        ) from None
    if value < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def run_timestamp() -> str:
    """ISO-8601 UTC timestamp; SOURCE_DATE_EPOCH pins it when set."""
    raw = os.environ.get(EPOCH_ENV)
    if raw is not None:
        try:
            epoch = int(raw)
        except ValueError:
            raise ConfigurationError(
                f"{EPOCH_ENV} must be an integer epoch, got {raw!r}"
            ) from None
    else:
        epoch = int(datetime.now(tz=timezone.utc).timestamp())
    return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat()


def _plain(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def build_manifest(subcommand: str, flags: dict, inputs: list[str | Path],
                   seed: int | None = None) -> dict:
    """Assemble the run-level manifest shared by all outputs of a run."""
    return {
        "subcommand": subcommand,
        "flags": {key: _plain(value) for key, value in sorted(flags.items())},
        "inputs": {str(path): sha256_file(path) for path in inputs},
        "seed": seed,
        "threads": thread_cap(),
        "timestamp": run_timestamp(),
        "tool_version": __version__,
    }


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, stable float repr, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_output(path: str | Path, content: str | bytes, manifest: dict) -> Path:
    """Write one output plus its `<name>.manifest.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    path.write_bytes(data)
    sidecar = dict(manifest)
    sidecar["output"] = {"path": path.name, "sha256": sha256_bytes(data)}
    Path(f"{path}.manifest.json").write_text(dump_json(sidecar), encoding="utf-8")
    return path


def write_json_output(path: str | Path, obj, manifest: dict) -> Path:
    return write_output(path, dump_json(obj), manifest)
