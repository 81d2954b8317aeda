"""Augmentations that produce the positive views for contrastive training.

Trajectories get a random invertible linear map of the state, applied at every
time step.  Spin lattices get an element of the Ising symmetry group: a global
flip, an optional mirror and a rotation by a multiple of 90 degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ising import SpinConfig
from .linalg import make_rng, project_semi_orthogonal, project_semi_orthogonal_many


@dataclass(frozen=True)
class LinearMap:
    """``m = u @ diag(sv) @ v.T`` with stored factors for exact inversion."""

    u: np.ndarray
    sv: np.ndarray
    v: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return (self.u * self.sv) @ self.v.T

    @property
    def inverse(self) -> np.ndarray:
        return (self.v / self.sv) @ self.u.T

    @property
    def det_abs(self) -> float:
        return float(np.prod(self.sv))


def random_linear_map(dim: int, rng: np.random.Generator,
                      sv_range: tuple[float, float] = (0.5, 2.0)) -> LinearMap:
    lo, hi = sv_range
    if not 0 < lo <= hi:
        raise ValueError(f"singular-value range must be positive, got {sv_range}")
    u = project_semi_orthogonal(rng.standard_normal((dim, dim)))
    v = project_semi_orthogonal(rng.standard_normal((dim, dim)))
    sv = np.exp(rng.uniform(math.log(lo), math.log(hi), size=dim))
    return LinearMap(u, sv, v)


def apply_linear_map(x: np.ndarray, m: np.ndarray, state_dim: int) -> np.ndarray:
    """Apply ``m`` to every time step of a flattened (time x state) vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % state_dim:
        raise ValueError(f"length {x.shape[-1]} is not a multiple of state_dim {state_dim}")
    steps = x.reshape(x.shape[:-1] + (-1, state_dim))
    return (steps @ m.T).reshape(x.shape)


def augment_trajectory(x: np.ndarray, state_dim: int, seed: int, *,
                       sv_range: tuple[float, float] = (0.5, 2.0),
                       return_map: bool = False):
    lmap = random_linear_map(state_dim, make_rng(seed), sv_range)
    out = apply_linear_map(x, lmap.matrix, state_dim)
    return (out, lmap) if return_map else out


def transform_spins(spins: np.ndarray, flip: bool, mirror: bool, n_rot: int) -> np.ndarray:
    """Mirror (left-right), then rotate by ``n_rot`` quarter turns, then flip."""
    out = np.fliplr(spins) if mirror else spins
    out = np.rot90(out, n_rot)
    return -out if flip else out.copy()


def augment_spins(x: SpinConfig, seed: int) -> SpinConfig:
    """Uniformly random element of the lattice symmetry group times spin flip."""
    rng = make_rng(seed)
    flip, mirror, n_rot = rng.integers(0, 2), rng.integers(0, 2), rng.integers(0, 4)
    return SpinConfig(x.l, transform_spins(x.spins, bool(flip), bool(mirror), int(n_rot)),
                      x.temperature)


class SpinAugment:
    """Batch version of :func:`augment_spins` on flattened (possibly noisy) lattices."""

    kind = "spin_symmetry"

    def __init__(self, l: int):
        self.l = l

    def __call__(self, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = batch.shape[0]
        lat = batch.reshape(n, self.l, self.l)
        flip = rng.integers(0, 2, size=n)
        mirror = rng.integers(0, 2, size=n)
        n_rot = rng.integers(0, 4, size=n)
        out = np.empty_like(lat)
        for i in range(n):
            out[i] = transform_spins(lat[i], bool(flip[i]), bool(mirror[i]), int(n_rot[i]))
        return out.reshape(n, -1)

    def describe(self) -> dict:
        return {"kind": self.kind, "l": self.l}


class LinearSVDAugment:
    """Batch version of :func:`augment_trajectory`: one random map per sample."""

    kind = "linear_svd"

    def __init__(self, state_dim: int, sv_range: tuple[float, float] = (0.5, 2.0)):
        if not 0 < sv_range[0] <= sv_range[1]:
            raise ValueError(f"singular-value range must be positive, got {sv_range}")
        self.state_dim = state_dim
        self.sv_range = tuple(sv_range)

    def maps(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` stacked random maps, same distribution as :func:`random_linear_map`."""
        d = self.state_dim
        lo, hi = self.sv_range
        g = rng.standard_normal((2, n, d, d))
        u = project_semi_orthogonal_many(g[0])
        v = project_semi_orthogonal_many(g[1])
        sv = np.exp(rng.uniform(math.log(lo), math.log(hi), size=(n, d)))
        return (u * sv[:, None, :]) @ np.swapaxes(v, 1, 2)

    def __call__(self, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = batch.shape[0]
        m = self.maps(n, rng)
        steps = batch.reshape(n, -1, self.state_dim)
        return (steps @ np.swapaxes(m, 1, 2)).reshape(batch.shape)

    def describe(self) -> dict:
        return {"kind": self.kind, "state_dim": self.state_dim, "sv_range": list(self.sv_range)}
