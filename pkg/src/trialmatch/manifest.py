"""Run manifests: the reproducibility envelope every command writes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    backend: str | None
    inputs: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    failures: list[dict] = field(default_factory=list)

    def start(self) -> "RunManifest":
        self.started_at = datetime.now(timezone.utc).isoformat()
        return self

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def finish(self) -> None:
        self.finished_at = datetime.now(timezone.utc).isoformat()

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "command": self.command,
                    "config": self.config,
                    "seed": self.seed,
                    "backend": self.backend,
                    "inputs": self.inputs,
                    "started_at": self.started_at,
                    "finished_at": self.finished_at,
                    "failures": self.failures,
                },
                f,
                ensure_ascii=False,
                sort_keys=True,
                indent=2,
            )
            f.write("\n")
        return path


def read_manifest(run_dir: str | Path) -> dict:
    with open(Path(run_dir) / "manifest.json", encoding="utf-8") as f:
        return json.load(f)
