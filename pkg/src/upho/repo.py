"""Content-addressed, file-based results repository.

One repository = one directory tree: ``manifest.json`` at the root,
``geo/<level>.geojson`` for geometries, and
``results/<disease>/<outcome>/<analytic>/<level>/<params_hash>.json`` for
analytics payloads.  Payloads are canonical JSON (sorted keys, no
whitespace, newline-terminated) so identical logical results are identical
bytes; the manifest is updated atomically via temp-file rename and guarded
by an exclusive lock file.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DigestMismatch, NotFound, RepoLocked, WriteFailed
from .geo import Level
from .ingest import Outcome

SCHEMA_VERSION = 1
EPOCH_TS = "1970-01-01T00:00:00Z"

_HASH_LEN = 16


class Analytic(str, Enum):
    CAUSAL_STRUCTURE = "causal_structure"
    REGRESSION = "regression"
    IMPACT = "impact"
    HOTSPOTS = "hotspots"
    DISTRIBUTION = "distribution"


def to_plain(obj):
    """Recursively convert to JSON-serializable plain data.

    Handles numpy scalars/arrays, dates, Enums, dataclasses, and tuples;
    non-finite floats are rejected downstream by the canonical serializer.
    """
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return obj
    if isinstance(obj, Enum):
        return to_plain(obj.value)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (dt.date, dt.datetime)):
        return obj.isoformat()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [to_plain(v) for v in seq]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, shortest round-trip floats, no NaN/inf."""
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def params_hash(params: dict) -> str:
    digest = hashlib.sha256(canonical_json(params).encode("ascii")).hexdigest()
    return digest[:_HASH_LEN]


@dataclass(frozen=True)
class ResultKey:
    disease: str
    outcome: Outcome
    analytic: Analytic
    level: Level
    params_hash: str

    def __post_init__(self):
        if len(self.params_hash) != _HASH_LEN or any(
            c not in "0123456789abcdef" for c in self.params_hash
        ):
            raise ValueError(f"params_hash {self.params_hash!r} must be 16 hex chars")
        if "/" in self.disease or not self.disease:
            raise ValueError(f"bad disease name {self.disease!r}")

    @classmethod
    def make(cls, disease: str, outcome, analytic, level, params: dict) -> "ResultKey":
        return cls(
            disease=disease,
            outcome=Outcome(outcome),
            analytic=Analytic(analytic),
            level=Level(level),
            params_hash=params_hash(params),
        )

    @property
    def rel_path(self) -> str:
        return (
            f"results/{self.disease}/{self.outcome.value}/"
            f"{self.analytic.value}/{self.level.value}/{self.params_hash}.json"
        )

    def to_document(self) -> dict:
        return {
            "disease": self.disease,
            "outcome": self.outcome.value,
            "analytic": self.analytic.value,
            "level": self.level.value,
            "params_hash": self.params_hash,
        }

    @classmethod
    def from_rel_path(cls, rel: str) -> "ResultKey":
        parts = Path(rel).parts
        if len(parts) != 6 or parts[0] != "results" or not parts[5].endswith(".json"):
            raise ValueError(f"not a result path: {rel!r}")
        return cls(
            disease=parts[1],
            outcome=Outcome(parts[2]),
            analytic=Analytic(parts[3]),
            level=Level(parts[4]),
            params_hash=parts[5][: -len(".json")],
        )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Repo:
    """Handle on one repository directory."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def _lock_path(self) -> Path:
        return self.root / ".lock"

    # --- lifecycle ---

    @classmethod
    def initialize(cls, root, *, reproducible: bool = False) -> "Repo":
        repo = cls(root)
        repo.root.mkdir(parents=True, exist_ok=True)
        (repo.root / "geo").mkdir(exist_ok=True)
        (repo.root / "results").mkdir(exist_ok=True)
        if not repo.manifest_path.exists():
            repo._save_manifest(
                {
                    "schema_version": SCHEMA_VERSION,
                    "created": repo._now(reproducible),
                    "entries": [],
                }
            )
        return repo

    @staticmethod
    def _now(reproducible: bool) -> str:
        if reproducible:
            return EPOCH_TS
        return dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")

    def exists(self) -> bool:
        return self.manifest_path.is_file()

    # --- manifest ---

    def load_manifest(self) -> dict:
        if not self.manifest_path.is_file():
            raise NotFound(f"no manifest at {self.manifest_path}")
        return json.loads(self.manifest_path.read_text())

    def _save_manifest(self, manifest: dict) -> None:
        manifest["entries"].sort(key=lambda e: e["path"])
        text = canonical_json(manifest) + "\n"
        self._atomic_write(self.manifest_path, text.encode("ascii"))

    def _atomic_write(self, path: Path, data: bytes) -> None:
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_bytes(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise WriteFailed(f"cannot write {path.name}: {exc}", path=str(path)) from exc

    class _Lock:
        def __init__(self, path: Path):
            self.path = path
            self.fd = None

        def __enter__(self):
            try:
                self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                raise RepoLocked(
                    f"repository locked by {self.path}; remove the file if stale"
                ) from None
            return self

        def __exit__(self, *exc):
            if self.fd is not None:
                os.close(self.fd)
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass
            return False

    # --- results ---

    def write_result(self, key: ResultKey, payload) -> Path:
        """Serialize canonically, store content-addressed, update manifest.

        Idempotent: the same key and payload rewrite the same bytes and
        leave a single manifest entry.
        """
        if not self.exists():
            raise NotFound(f"repository at {self.root} is not initialized")
        text = payload if isinstance(payload, str) else canonical_json(payload) + "\n"
        data = text.encode("utf-8")
        with self._Lock(self._lock_path):
            target = self.root / key.rel_path
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise WriteFailed(str(exc), path=str(target)) from exc
            self._atomic_write(target, data)
            manifest = self.load_manifest()
            entry = {
                "key": key.to_document(),
                "path": key.rel_path,
                "bytes": len(data),
                "sha256": _sha256(data),
            }
            manifest["entries"] = [
                e for e in manifest["entries"] if e["path"] != key.rel_path
            ] + [entry]
            self._save_manifest(manifest)
        return target

    def read_result_bytes(self, key: ResultKey) -> bytes:
        manifest = self.load_manifest()
        entry = next(
            (e for e in manifest["entries"] if e["path"] == key.rel_path), None
        )
        path = self.root / key.rel_path
        if entry is None or not path.is_file():
            raise NotFound(f"no result for {key.rel_path}")
        data = path.read_bytes()
        if _sha256(data) != entry["sha256"]:
            raise DigestMismatch(f"{key.rel_path} does not match its recorded digest")
        return data

    def read_result(self, key: ResultKey) -> str:
        return self.read_result_bytes(key).decode("utf-8")

    def list_results(
        self,
        disease: Optional[str] = None,
        outcome=None,
        analytic=None,
        level=None,
    ) -> list:
        manifest = self.load_manifest()
        keys = []
        for entry in manifest["entries"]:
            key = ResultKey.from_rel_path(entry["path"])
            if disease is not None and key.disease != disease:
                continue
            if outcome is not None and key.outcome != Outcome(outcome):
                continue
            if analytic is not None and key.analytic != Analytic(analytic):
                continue
            if level is not None and key.level != Level(level):
                continue
            keys.append(key)
        return keys

    def rescan(self) -> dict:
        """Manifest reconstructed from the tree; must equal the stored one."""
        manifest = self.load_manifest()
        entries = []
        results_dir = self.root / "results"
        if results_dir.is_dir():
            for path in sorted(results_dir.rglob("*.json")):
                rel = path.relative_to(self.root).as_posix()
                key = ResultKey.from_rel_path(rel)
                data = path.read_bytes()
                entries.append(
                    {
                        "key": key.to_document(),
                        "path": rel,
                        "bytes": len(data),
                        "sha256": _sha256(data),
                    }
                )
        return {
            "schema_version": manifest["schema_version"],
            "created": manifest["created"],
            "entries": entries,
        }

    # --- geometries and side tables ---

    def write_geo(self, level: Level, feature_collection: dict) -> Path:
        path = self.root / "geo" / f"{Level(level).value}.geojson"
        self._atomic_write(path, (canonical_json(feature_collection) + "\n").encode())
        return path

    def read_geo(self, level: Level) -> dict:
        path = self.root / "geo" / f"{Level(level).value}.geojson"
        if not path.is_file():
            raise NotFound(f"no geometry stored for level {Level(level).value}")
        return json.loads(path.read_text())

    def write_table(self, name: str, document) -> Path:
        """Intermediate ingestion tables, kept outside the results tree."""
        path = self.root / "tables" / f"{name}.json"
        path.parent.mkdir(exist_ok=True)
        self._atomic_write(path, (canonical_json(document) + "\n").encode())
        return path

    def read_table(self, name: str):
        path = self.root / "tables" / f"{name}.json"
        if not path.is_file():
            raise NotFound(f"no table {name!r} in repository")
        return json.loads(path.read_text())
