"""Labeled sample collections shared by the trajectory and spin generators.

File layout (``<name>.bin``, all little-endian)::

    8 bytes   magic  b"SVDCLDS\\0"
    u32       format version (1)
    u32       length of the UTF-8 system name, then the name bytes
    f64       sigma
    u64       feature_dim
    u64       count
    f64[count * feature_dim]   features, row-major
    f64[count]                 labels (path coordinate s, or temperature)

Next to it, ``<name>.json`` holds the full generation config and seeds.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SVDCLDS\0"
VERSION = 1


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    system: str
    sigma: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape} labels"
            )
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def groups(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Distinct labels in ascending order and the row indices of each."""
        coords = np.unique(self.labels)
        return coords, [np.flatnonzero(self.labels == c) for c in coords]

    def save(self, path) -> tuple[Path, Path]:
        """Write ``path`` (binary, suffix forced to .bin) plus a JSON sidecar."""
        path = Path(path).with_suffix(".bin")
        path.parent.mkdir(parents=True, exist_ok=True)
        name = self.system.encode("utf-8")
        header = MAGIC + struct.pack("<II", VERSION, len(name)) + name
        header += struct.pack("<dQQ", self.sigma, self.feature_dim, len(self))
        path.write_bytes(
            header
            + self.features.astype("<f8").tobytes()
            + self.labels.astype("<f8").tobytes()
        )
        sidecar = path.with_suffix(".json")
        meta = {
            "system": self.system,
            "sigma": self.sigma,
            "feature_dim": self.feature_dim,
            "count": len(self),
            "config": self.config,
        }
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path, sidecar

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path).with_suffix(".bin")
        raw = path.read_bytes()
        if raw[:8] != MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        version, name_len = struct.unpack_from("<II", raw, 8)
        if version != VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        off = 16
        system = raw[off : off + name_len].decode("utf-8")
        off += name_len
        sigma, dim, count = struct.unpack_from("<dQQ", raw, off)
        off += 24
        n_feat = count * dim
        expected = off + 8 * (n_feat + count)
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
        feats = np.frombuffer(raw, "<f8", n_feat, off).reshape(count, dim)
        labels = np.frombuffer(raw, "<f8", count, off + 8 * n_feat)
        sidecar = path.with_suffix(".json")
        config = json.loads(sidecar.read_text())["config"] if sidecar.exists() else {}
        return cls(feats.astype(np.float64), labels.astype(np.float64), system, sigma, config)
