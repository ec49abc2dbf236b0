"""Run manifests: what a command read, what it wrote, and how it ended.

Each artifact directory holds one ``manifest.json``. Input digests are taken
before any compute starts and the manifest is written even when the command
fails, with ``status`` set to ``"error"`` and the message kept.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .atomic import atomic_write_text

MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: str | None = None
    config_sha256: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    error: str | None = None
    exit_code: int | None = None
    artifacts: dict[str, str] = field(default_factory=dict)

    def add_input(self, path) -> None:
        if path is not None and Path(path).is_file():
            self.inputs[str(path)] = file_digest(path)

    def add_artifact(self, outdir, path) -> None:
        rel = Path(path).relative_to(outdir).as_posix()
        self.artifacts[rel] = file_digest(path)

    def finish(self, exit_code: int = 0, error: str | None = None) -> None:
        self.finished = _now()
        self.exit_code = exit_code
        self.status = "ok" if exit_code == 0 else "error"
        self.error = error

    def write(self, outdir) -> Path:
        path = Path(outdir) / MANIFEST_NAME
        atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def read_manifest(outdir) -> RunManifest:
    d = json.loads((Path(outdir) / MANIFEST_NAME).read_text())
    return RunManifest(**d)
