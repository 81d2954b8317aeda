"""Single-spin Metropolis sampler for the 2-D nearest-neighbour Ising model.

Units: J = 1, k_B = 1, no external field, periodic boundaries.  A sweep
visits the sites in raster order (row by row, left to right) and consumes
exactly one uniform deviate per site, accepted or not, so a chain is
bit-reproducible from its seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .dataset import Dataset
from .linalg import make_rng

T_CRITICAL = 2.0 / math.log(1.0 + math.sqrt(2.0))
EQUILIBRATION_SWEEPS = 1000
DECORRELATION_SWEEPS = 100
CONFIGS_PER_TEMPERATURE = 20


@dataclass
class SpinConfig:
    l: int
    spins: np.ndarray
    temperature: float

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=np.int8)
        if self.spins.shape != (self.l, self.l):
            raise ValueError(f"spins must be {self.l}x{self.l}, got {self.spins.shape}")
        if not np.all(np.abs(self.spins) == 1):
            raise ValueError("spins must be +1 or -1")

    @property
    def magnetization(self) -> float:
        return float(self.spins.mean())

    @property
    def energy(self) -> int:
        return ising_energy(self.spins)


def temperature_grid() -> np.ndarray:
    """The 51 temperatures 1.0, 1.05, ..., 3.5."""
    return 1.0 + 0.05 * np.arange(51)


def ising_energy(spins: np.ndarray) -> int:
    """``-sum_<ij> s_i s_j`` over nearest-neighbour bonds (each bond once)."""
    s = np.asarray(spins, dtype=np.int64)
    return int(-(s * np.roll(s, 1, axis=0)).sum() - (s * np.roll(s, 1, axis=1)).sum())


@numba.njit(cache=True)
def _sweeps(spins, uniforms, accept4, accept8, energy, record):
    # uniforms: (n_sweeps, l*l). Returns final energy; if record, per-sweep (E, |M|).
    l = spins.shape[0]
    n_sweeps = uniforms.shape[0]
    trace = np.zeros((n_sweeps if record else 0, 2))
    mag = 0
    for i in range(l):
        for j in range(l):
            mag += spins[i, j]
    flips = 0
    for t in range(n_sweeps):
        k = 0
        for i in range(l):
            for j in range(l):
                s = spins[i, j]
                nb = (spins[(i + 1) % l, j] + spins[(i - 1) % l, j]
                      + spins[i, (j + 1) % l] + spins[i, (j - 1) % l])
                de = 2 * s * nb
                u = uniforms[t, k]
                k += 1
                if de <= 0 or (de == 4 and u < accept4) or (de == 8 and u < accept8):
                    spins[i, j] = -s
                    energy += de
                    mag -= 2 * s
                    flips += 1
        if record:
            trace[t, 0] = energy
            trace[t, 1] = abs(mag)
    return energy, flips, trace


class Chain:
    """A Metropolis chain that can be advanced in blocks of sweeps."""

    def __init__(self, l: int, t: float, seed: int, *stream: int):
        if l < 2 or t <= 0:
            raise ValueError(f"need l >= 2 and t > 0, got l={l}, t={t}")
        self.l = l
        self.t = float(t)
        self.rng = make_rng(seed, *stream)
        self.spins = (2 * self.rng.integers(0, 2, size=(l, l)) - 1).astype(np.int64)
        self.energy = ising_energy(self.spins)
        self.flips = 0
        self.attempts = 0
        self._a4 = math.exp(-4.0 / self.t)
        self._a8 = math.exp(-8.0 / self.t)

    def run(self, n_sweeps: int, record: bool = False) -> np.ndarray:
        """Advance ``n_sweeps``; with ``record`` return per-sweep ``(E, |M|)``."""
        u = self.rng.random((n_sweeps, self.l * self.l))
        self.energy, flips, trace = _sweeps(self.spins, u, self._a4, self._a8,
                                            self.energy, record)
        self.flips += flips
        self.attempts += n_sweeps * self.l * self.l
        return trace

    def config(self) -> SpinConfig:
        return SpinConfig(self.l, self.spins.copy(), self.t)


def metropolis_sample(l: int, t: float, n_sweeps: int, seed: int) -> SpinConfig:
    """Configuration after ``n_sweeps`` sweeps from a seeded random lattice."""
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    chain = Chain(l, t, seed)
    chain.run(n_sweeps)
    return chain.config()


def generate_ising_dataset(l: int, sigma: float, seed: int, *,
                           equilibration: int = EQUILIBRATION_SWEEPS,
                           decorrelation: int = DECORRELATION_SWEEPS,
                           per_temperature: int = CONFIGS_PER_TEMPERATURE) -> Dataset:
    """``per_temperature`` flattened configurations at each grid temperature.

    Gaussian noise ``sqrt(2 sigma) N(0, I)`` is added to the real-valued copy of
    the spins, never to the Monte Carlo dynamics.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    temps = temperature_grid()
    feats = np.empty((temps.size * per_temperature, l * l))
    row = 0
    for i, t in enumerate(temps):
        chain = Chain(l, t, seed, 0, i)
        chain.run(equilibration)
        for _ in range(per_temperature):
            chain.run(decorrelation)
            feats[row] = chain.spins.ravel()
            row += 1
        if sigma > 0:
            block = slice(row - per_temperature, row)
            noise = make_rng(seed, 1, i).standard_normal((per_temperature, l * l))
            feats[block] += math.sqrt(2.0 * sigma) * noise
    config = {
        "system": "ising",
        "l": l,
        "sigma": float(sigma),
        "seed": int(seed),
        "temperatures": temps.tolist(),
        "equilibration_sweeps": equilibration,
        "decorrelation_sweeps": decorrelation,
        "configs_per_temperature": per_temperature,
        "sweep_order": "raster",
    }
    return Dataset(feats, np.repeat(temps, per_temperature), "ising", float(sigma), config)
