"""Similarity, variance and mutual-similarity metrics over a control path.

Two averaging conventions are available for the similarity of two feature
blocks ``F_i`` and ``F_j`` (both ``B x d`` with unit-norm rows):

``"paired"`` (default)
    mean cosine of matching rows, ``(1/B) sum_b <F_i[b], F_j[b]>``; lies in
    [-1, 1] and equals 1 only when the rows coincide.
``"gram"``
    mean of all ``B^2`` entries of ``F_i @ F_j.T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

CONVENTIONS = ("paired", "gram")


@dataclass
class FeatureBlock:
    coords: np.ndarray
    features: list[np.ndarray]

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if len(self.features) != self.coords.size:
            raise ValueError("one feature matrix per coordinate is required")
        shapes = {f.shape for f in self.features}
        if len(shapes) != 1:
            raise ValueError(f"feature blocks differ in shape: {sorted(shapes)}")
        for f in self.features:
            if np.max(np.abs(np.linalg.norm(f, axis=1) - 1.0)) > 1e-6:
                raise ValueError("feature rows must have unit norm")

    @classmethod
    def from_dataset_features(cls, labels: np.ndarray, feats: np.ndarray) -> "FeatureBlock":
        coords = np.unique(labels)
        return cls(coords, [feats[labels == c] for c in coords])


@dataclass
class MetricSeries:
    coords: np.ndarray
    similarity: np.ndarray
    variance: np.ndarray
    mutual: np.ndarray
    convention: str = "paired"

    @property
    def pair_coords(self) -> np.ndarray:
        """Midpoints of adjacent path points, where ``similarity`` lives."""
        return 0.5 * (self.coords[1:] + self.coords[:-1])


def avg_similarity(f_i: np.ndarray, f_j: np.ndarray, convention: str = "paired") -> float:
    if f_i.shape != f_j.shape:
        raise ValueError(f"shape mismatch {f_i.shape} vs {f_j.shape}")
    if convention == "paired":
        return float(np.einsum("bd,bd->", f_i, f_j) / f_i.shape[0])
    if convention == "gram":
        # sum_ab <f_i[a], f_j[b]> = <sum_a f_i[a], sum_b f_j[b]>
        return float(f_i.sum(axis=0) @ f_j.sum(axis=0) / f_i.shape[0] ** 2)
    raise ValueError(f"convention must be one of {CONVENTIONS}, got '{convention}'")


def feature_variance(f: np.ndarray) -> float:
    """Sum over dimensions of the population (1/B) variance across the batch."""
    if f.shape[0] < 2:
        raise ValueError("variance needs at least two rows")
    return float(np.var(f, axis=0).sum())


def mutual_similarity(block: FeatureBlock, convention: str = "paired") -> np.ndarray:
    n = len(block.features)
    if n < 2:
        raise ValueError("mutual similarity needs at least two points")
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = avg_similarity(block.features[i], block.features[j], convention)
    return out


def compute_series(block: FeatureBlock, convention: str = "paired") -> MetricSeries:
    mutual = mutual_similarity(block, convention)
    n = mutual.shape[0]
    sim = mutual[np.arange(n - 1), np.arange(1, n)].copy()
    var = np.array([feature_variance(f) for f in block.features])
    return MetricSeries(block.coords.copy(), sim, var, mutual, convention)


def moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average; the window is truncated at the ends."""
    x = np.asarray(x, dtype=np.float64)
    if width <= 1 or x.size == 0:
        return x.copy()
    half = width // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.size)
    return (csum[hi] - csum[lo]) / (hi - lo)


def jaggedness(x: np.ndarray, width: int = 5) -> float:
    """Mean absolute deviation of ``x`` from its centered moving average."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(np.abs(x - moving_average(x, width))))


def quadrant_contrast(mutual: np.ndarray, coords: np.ndarray, split: float) -> float:
    """Mean within-phase minus mean cross-phase entry of a mutual-similarity map."""
    low = np.asarray(coords) < split
    if low.all() or not low.any():
        raise ValueError("split does not separate the coordinates")
    within = np.concatenate([mutual[np.ix_(low, low)].ravel(),
                             mutual[np.ix_(~low, ~low)].ravel()])
    cross = mutual[np.ix_(low, ~low)].ravel()
    return float(within.mean() - cross.mean())


@dataclass
class DetectConfig:
    window: int = 3
    prominence: float = 0.05
    # detections closer than this are merged; None -> two grid spacings
    merge_distance: float | None = None
    use_similarity: bool = True
    use_variance: bool = True


@dataclass
class Detection:
    s: float
    score: float
    metrics: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"s": self.s, "metric": "+".join(self.metrics), "score": self.score}


def _extrema(y, coords, prominence, metric):
    peaks, props = find_peaks(y, prominence=prominence)
    return [Detection(float(coords[p]), float(pr), [metric])
            for p, pr in zip(peaks, props["prominences"])]


def detect_transitions(series: MetricSeries, config: DetectConfig | None = None) -> list[Detection]:
    """Smoothed-similarity minima and smoothed-variance maxima, merged and ranked.

    Similarity prominences are measured on the raw cosine scale.  The variance
    curve is min-max rescaled first, so detections do not depend on its units.
    Merged detections sit at the location of their strongest member and carry
    the summed score.  Sorted by score, highest first.
    """
    cfg = config or DetectConfig()
    found: list[Detection] = []
    if cfg.use_similarity and series.similarity.size >= 3:
        sim = moving_average(series.similarity, cfg.window)
        found += _extrema(-sim, series.pair_coords, cfg.prominence, "similarity")
    if cfg.use_variance and series.variance.size >= 3:
        var = moving_average(series.variance, cfg.window)
        span = var.max() - var.min()
        if span > 1e-12 * max(1.0, abs(var.max())):
            found += _extrema((var - var.min()) / span, series.coords, cfg.prominence, "variance")
    if not found:
        return []
    gap = cfg.merge_distance
    if gap is None:
        gap = 2.0 * float(np.median(np.diff(series.coords))) if series.coords.size > 1 else 0.0
    found.sort(key=lambda d: -d.score)
    merged: list[Detection] = []
    for det in found:
        for m in merged:
            if abs(m.s - det.s) <= gap:
                m.score += det.score
                m.metrics += [k for k in det.metrics if k not in m.metrics]
                break
        else:
            merged.append(Detection(det.s, det.score, list(det.metrics)))
    merged.sort(key=lambda d: (-d.score, d.s))
    return merged


def similarity_minimum(series: MetricSeries) -> float:
    """Path coordinate of the lowest raw similarity value."""
    return float(series.pair_coords[int(np.argmin(series.similarity))])


def plateau_similarity(series: MetricSeries, critical: float, margin: float) -> float:
    """Mean similarity at least ``margin`` away from ``critical``."""
    c = series.pair_coords
    keep = np.abs(c - critical) >= margin
    return float(series.similarity[keep].mean()) if keep.any() else math.nan
