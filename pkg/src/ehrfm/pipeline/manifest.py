"""Artifact hashing and the per-run stage manifest."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact a stage needs has not been produced."""


class StaleArtifactError(RuntimeError):
    """An input artifact no longer matches the hash its producing stage recorded."""


def hash_path(path: str | os.PathLike) -> str:
    """SHA-256 of a file, or of a directory's (relative path, file hash) listing."""
    path = Path(path)
    if path.is_dir():
        h = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(child.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(hash_path(child).encode())
            h.update(b"\n")
        return h.hexdigest()
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """``manifest.json`` in the run directory, keyed by stage name."""

    FILE = "manifest.json"

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / self.FILE
        self.stages: dict[str, dict] = {}
        self.failed: dict | None = None
        if self.path.exists():
            with open(self.path) as fh:
                data = json.load(fh)
            self.stages = data.get("stages", {})
            self.failed = data.get("failed")

    def rel(self, path: Path) -> str:
        """Run-relative key for artifacts inside the run directory, absolute otherwise."""
        path = Path(path).resolve()
        try:
            return path.relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return path.as_posix()

    def producer(self, rel: str) -> tuple[str, str] | None:
        for name, entry in self.stages.items():
            if rel in entry.get("outputs", {}):
                return name, entry["outputs"][rel]
        return None

    def check_inputs(self, paths) -> tuple[dict[str, str], list[str]]:
        """Hash inputs; raise on missing ones and collect staleness problems."""
        hashes, problems = {}, []
        for p in paths:
            p = Path(p)
            if not p.exists():
                raise MissingArtifactError(f"missing upstream artifact {self.rel(p)}")
            rel = self.rel(p)
            hashes[rel] = hash_path(p)
            known = self.producer(rel)
            if known is not None and known[1] != hashes[rel]:
                problems.append(f"{rel} changed since stage {known[0]!r} wrote it")
            if known is not None:
                upstream = self.stages[known[0]]
                for dep, recorded in upstream.get("inputs", {}).items():
                    dep_path = self.root / dep
                    if not dep_path.exists() or hash_path(dep_path) != recorded:
                        problems.append(f"stage {known[0]!r} is stale: its input {dep} changed")
        return hashes, sorted(set(problems))

    def record(self, stage: str, entry: dict) -> None:
        # drop stale claims on the same outputs by other stages
        for other in self.stages.values():
            for rel in entry.get("outputs", {}):
                other.get("outputs", {}).pop(rel, None)
        self.stages[stage] = entry
        if self.failed and self.failed.get("stage") == stage:
            self.failed = None
        self.save()

    def record_failure(self, stage: str, error: BaseException) -> None:
        self.failed = {"stage": stage, "error": f"{type(error).__name__}: {error}"}
        self.save()

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump({"stages": self.stages, "failed": self.failed}, fh, indent=2, sort_keys=True)
        os.replace(tmp, self.path)
