"""Run directory: hashed CSV/JSON artifacts and the provenance manifest."""

import hashlib
import json
import math
import os
import platform

import numpy as np
import pandas as pd
import psutil
import scipy
import sklearn
import statsmodels
from loguru import logger

import ffdlab
from ffdlab.modules.model import model_header

FLOAT_FORMAT = "%.12g"
HASH_PREFIX = "# config_hash="


def _plain(value):
    """JSON-safe copy: numpy scalars/arrays unwrapped, non-finite floats to null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dump_json(data, path: str) -> None:
    with open(path, "w") as f:
        json.dump(_plain(data), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def write_csv(path: str, frame: pd.DataFrame, config_hash: str) -> str:
    with open(path, "w", newline="") as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(path: str, data: dict, config_hash: str) -> str:
    dump_json({**data, "config_hash": config_hash}, path)
    return path


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_hash(path: str) -> str | None:
    with open(path) as f:
        data = json.load(f)
    return data.get("config_hash") if isinstance(data, dict) else None


def recorded_hash(path: str) -> str:
    """Config hash an artifact was stamped with, else the hash of its bytes."""
    stem, ext = os.path.splitext(path)
    found = None
    if ext == ".npz":
        found = model_header(path).get("config_hash")
    elif ext == ".json":
        found = _json_hash(path)
    else:
        with open(path) as f:
            first = f.readline().strip()
        if first.startswith(HASH_PREFIX):
            found = first[len(HASH_PREFIX) :]
        elif os.path.exists(stem + ".json"):
            # datasets keep theirs in the sidecar
            found = _json_hash(stem + ".json")
    return found or sha256_file(path)


def chained_hash(
    config_hash: str, inputs: list[str], options: dict | None = None
) -> str:
    """Hash of the resolved config, each input's own hash and any verb options."""
    parts = [config_hash, *(recorded_hash(p) for p in inputs)]
    if options:
        parts.append(json.dumps(_plain(options), sort_keys=True))
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def package_versions() -> dict:
    return {
        "ffdlab": ffdlab.__version__,
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "statsmodels": statsmodels.__version__,
        "scikit-learn": sklearn.__version__,
    }


def host_facts() -> dict:
    return {
        "python": platform.python_version(),
        "physical_cores": psutil.cpu_count(logical=False) or 1,
    }


class RunDirectory:
    """Collects stage artifacts under one directory, stamped with the config hash."""

    def __init__(self, path: str, config_hash: str):
        self.path = path
        self.config_hash = config_hash
        self.stages: dict[str, list[str]] = {}
        os.makedirs(self.path, exist_ok=True)

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def register(self, stage: str, name: str) -> str:
        self.stages.setdefault(stage, [])
        if name not in self.stages[stage]:
            self.stages[stage].append(name)
        return self.file(name)

    def write_csv(self, stage: str, name: str, frame: pd.DataFrame) -> str:
        path = write_csv(self.register(stage, name), frame, self.config_hash)
        logger.debug(f"Wrote {name} ({len(frame)} rows)")
        return path

    def write_text(self, stage: str, name: str, text: str) -> str:
        path = self.register(stage, name)
        with open(path, "w") as f:
            f.write(f"# config_hash={self.config_hash}\n")
            f.write(text)
        return path

    def write_json(self, stage: str, name: str, data: dict) -> str:
        path = write_json(self.register(stage, name), data, self.config_hash)
        logger.debug(f"Wrote {name}")
        return path

    def write_manifest(self, **fields) -> str:
        stages = [
            {
                "stage": stage,
                "artifacts": [
                    {"file": name, "sha256": sha256_file(self.file(name))}
                    for name in names
                ],
            }
            for stage, names in self.stages.items()
        ]
        manifest = {
            "config_hash": self.config_hash,
            "stages": stages,
            "versions": package_versions(),
            "host": host_facts(),
            **fields,
        }
        path = self.file("manifest.json")
        dump_json(manifest, path)
        logger.info(f"Manifest written to {path} ({len(stages)} stages)")
        return path
