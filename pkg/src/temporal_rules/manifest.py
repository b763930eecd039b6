"""Run manifests written next to every command's outputs."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

from temporal_rules import __version__

log = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def manifest_path_for(output: Path) -> Path:
    """``DIR/manifest.json`` for directories, ``<output>.manifest.json`` for files."""
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + MANIFEST_SUFFIX)


@dataclass
class RunManifest:
    """What a command read, what it wrote, and how."""

    subcommand: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    version: str = __version__
    started_at: str = field(default_factory=lambda: datetime.now(UTC).isoformat(timespec="seconds"))
    duration_seconds: float = 0.0
    input_digests: dict[str, str] = field(default_factory=dict)
    options: dict[str, Any] = field(default_factory=dict)

    def add_input(self, path: Path) -> None:
        self.inputs.append(str(path))
        self.input_digests[str(path)] = sha256_file(path)

    def add_output(self, path: Path) -> None:
        self.outputs.append(str(path))

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        log.debug("Manifest written", extra={"path": str(path)})
        return path
