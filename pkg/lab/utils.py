import csv
import hashlib
import json
import logging
import time
import zlib
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml
from django.conf import settings

from .exceptions import BudgetExceededError

logger = logging.getLogger(__name__)


# ==============================
# Random streams
# ==============================
def stream_key(tag: str) -> int:
    """Stable 32-bit key for a stream tag (method name, 'increments', ...)."""
    return zlib.crc32(tag.encode("utf-8"))


def rng_stream(seed: int, replicate: int, tag: str) -> np.random.Generator:
    """
    Philox generator keyed by (seed, replicate, tag).

    Streams for different replicates are independent and do not depend on the
    order in which replicates are drawn.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate), stream_key(tag)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# ==============================
# Config + provenance
# ==============================
def load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level of an experiment config must be a mapping")
    return data


def config_hash(config: dict) -> str:
    """Short SHA256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def package_versions() -> dict:
    versions = {}
    for name in ("numpy", "scipy", "Django", "celery", "djangorestframework", "PyYAML"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def provenance(config: dict, seed: int, replicates: int) -> dict:
    return {"config_hash": config_hash(config), "seed": int(seed), "replicates": int(replicates)}


# ==============================
# Output
# ==============================
def output_dir(out=None) -> Path:
    path = Path(out or settings.LAB_OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path, header, rows, stamp: dict | None = None) -> Path:
    """CSV with a header row; provenance columns are appended to every row when given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = list(stamp) if stamp else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header) + extra)
        for row in rows:
            writer.writerow([_cell(v) for v in row] + [stamp[k] for k in extra])
    logger.info(f"✅ wrote {path}")
    return path


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"✅ wrote {path}")
    return path


def write_manifest(out: Path, name: str, config: dict, seed: int, replicates: int, extra: dict | None = None) -> Path:
    manifest = {
        "command": name,
        "config": config,
        **provenance(config, seed, replicates),
        "versions": package_versions(),
    }
    manifest.update(extra or {})
    return write_json(Path(out) / f"{name}_manifest.json", manifest)


# ==============================
# Runtime budget
# ==============================
class Budget:
    """Wall-clock guard; `project` raises when the projected total exceeds the cap."""

    def __init__(self, seconds: float | None = None):
        self.seconds = float(seconds if seconds is not None else settings.LAB_BUDGET_SECONDS)
        self.started = time.monotonic()

    def elapsed(self) -> float:
        return time.monotonic() - self.started

    def check(self, what: str = "experiment"):
        if self.elapsed() > self.seconds:
            raise BudgetExceededError(f"{what} ran {self.elapsed():.1f}s, budget {self.seconds:.0f}s")

    def project(self, done: int, total: int, what: str = "experiment"):
        """Extrapolate linearly from `done` of `total` units of work."""
        if done <= 0:
            return
        projected = self.elapsed() * total / done
        if projected > self.seconds:
            raise BudgetExceededError(
                f"{what}: projected {projected:.1f}s after {done}/{total} units exceeds budget {self.seconds:.0f}s"
            )
