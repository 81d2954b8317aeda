"""Noisy trajectory datasets for parameterized 2-D dynamical systems.

Models are registered under a name and share one vectorized right-hand-side
signature::

    rhs(x, p) -> dx/dt

where ``x`` has shape ``(n, state_dim)`` and ``p`` has shape ``(n, n_params)``
(one row of control parameters per trajectory).  Two normal forms with known
bifurcations ship fully specified (``hopf`` and ``saddle_node``).  The three
benchmark systems ``snichopf``, ``sho`` and ``cellcycle`` are registered as
slots whose ``rhs`` raises until a concrete model is supplied through
:func:`register_model`; their control paths, grids and dataset sizes are
complete.

Noise enters, by default, as the diffusion term of the SDE::

    x[k+1] = x[k] + dt * rhs(x[k]) + sqrt(2 sigma) * sqrt(dt) * xi[k]

With ``noise_mode="observation"`` the integration is deterministic and
``sqrt(2 sigma) * N(0, I)`` is added to the stored (observed, downsampled)
states instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .linalg import make_rng

OVERFLOW_LIMIT = 1e12
TEST_BATCH = 500
NOISE_MODES = ("diffusion", "observation")


class IntegrationError(RuntimeError):
    pass


class DatasetCountError(RuntimeError):
    pass


@dataclass(frozen=True)
class DynModel:
    name: str
    state_dim: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    param_names: tuple[str, ...]
    ic_low: tuple[float, ...]
    ic_high: tuple[float, ...]
    # maps states (..., state_dim) -> observed (..., obs_dim); None = identity
    observe: Callable[[np.ndarray], np.ndarray] | None = None
    obs_dim: int | None = None
    # maps params (n, n_params) -> array of regime names; needed for oversampling
    regime: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def observed_dim(self) -> int:
        return self.obs_dim if self.obs_dim is not None else self.state_dim

    def observed(self, states: np.ndarray) -> np.ndarray:
        return states if self.observe is None else self.observe(states)


@dataclass(frozen=True)
class ControlPath:
    name: str
    s_range: tuple[float, float]
    map: Callable[[np.ndarray], np.ndarray]
    critical_points: tuple[float, ...] = ()

    def __call__(self, s) -> np.ndarray:
        return self.map(np.asarray(s, dtype=np.float64))

    def grid(self, n_points: int) -> np.ndarray:
        return np.linspace(self.s_range[0], self.s_range[1], n_points)


@dataclass
class Trajectory:
    s: float
    params: np.ndarray
    times: np.ndarray
    states: np.ndarray


@dataclass(frozen=True)
class SystemSetup:
    """Data-generation settings of one system (sizes and grid layout)."""

    model: str
    path: str
    grid: tuple[tuple[float, float, int], ...]
    train_count: int
    t_end: float
    n_points: int = 400
    n_transient: int = 0
    n_keep: int = 100
    train_ics: int = 30
    test_ics: int = 1200
    test_batch: int = TEST_BATCH
    oversample: tuple[tuple[str, int], ...] = ()

    @property
    def n_steps(self) -> int:
        return self.n_points - 1

    def keep_indices(self) -> np.ndarray:
        usable = self.n_points - self.n_transient
        return self.n_transient + downsample_indices(usable, self.n_keep)

    def grid_params(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, n) for lo, hi, n in self.grid]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# -- models ------------------------------------------------------------------


def hopf_rhs(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Supercritical Hopf normal form; params (mu, omega)."""
    mu, om = p[..., 0], p[..., 1]
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    g = mu - r2
    return np.stack([g * x[..., 0] - om * x[..., 1], om * x[..., 0] + g * x[..., 1]], axis=-1)


def saddle_node_rhs(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Saddle-node normal form ``x' = mu + x^2, y' = -y``; params (mu,)."""
    return np.stack([p[..., 0] + x[..., 0] ** 2, -x[..., 1]], axis=-1)


def _hopf_regime(p: np.ndarray) -> np.ndarray:
    return np.where(p[..., 0] > 0, "oscillatory", "monostable")


def _unplugged(name: str, signature: str):
    def rhs(x, p):
        raise NotImplementedError(
            f"no right-hand side registered for '{name}'. Transcribe the model "
            f"from its reference and install it with "
            f"register_model(DynModel(name='{name}', rhs=..., ...)); expected "
            f"signature: {signature}"
        )

    return rhs


def _cellcycle_observe(states: np.ndarray) -> np.ndarray:
    # state order: C2, CP, pM, M, Y, YP.  CT = C2+CP+pM+M, YT = Y+YP+pM+M.
    c2, cp, pm, m, y, yp = (states[..., i] for i in range(6))
    ct = c2 + cp + pm + m
    yt = y + yp + pm + m
    return np.stack([m / ct, yt / ct], axis=-1)


_DEFAULT_MODELS = {
    "hopf": DynModel("hopf", 2, hopf_rhs, ("mu", "omega"), (-2.0, -2.0), (2.0, 2.0),
                     regime=_hopf_regime),
    # finite-time blow-up for mu > 0: keep the horizon short and start left of the node
    "saddle_node": DynModel("saddle_node", 2, saddle_node_rhs, ("mu",),
                            (-2.0, -2.0), (-1.0, 2.0)),
    "snichopf": DynModel(
        "snichopf", 2, _unplugged("snichopf", "rhs(x[n,2], p[n,(k, alpha)]) -> [n,2]"),
        ("k", "alpha"), (-2.0, -2.0), (2.0, 2.0)),
    "sho": DynModel(
        "sho", 2, _unplugged("sho", "rhs(x[n,2], p[n,(epsilon, A)]) -> [n,2]; "
                                    "oversampling also needs regime(p) -> labels"),
        ("epsilon", "A"), (-2.0, -2.0), (2.0, 2.0)),
    "cellcycle": DynModel(
        "cellcycle", 6,
        _unplugged("cellcycle", "rhs(x[n,6] = (C2, CP, pM, M, Y, YP), p[n,(k6, k4)]) -> [n,6]"),
        ("k6", "k4"), (0.0,) * 6, (1.0,) * 6, observe=_cellcycle_observe, obs_dim=2),
}

_models: dict[str, DynModel] = dict(_DEFAULT_MODELS)
_critical_points: dict[str, tuple[float, ...]] = {"hopf": (0.0,), "saddle_node": (0.0,)}


def register_model(model: DynModel, critical_points: Sequence[float] | None = None) -> None:
    """Install ``model`` under its name, optionally with path ground truth."""
    _models[model.name] = model
    if critical_points is not None:
        _critical_points[model.name] = tuple(float(c) for c in critical_points)


def reset_models() -> None:
    _models.clear()
    _models.update(_DEFAULT_MODELS)
    _critical_points.clear()
    _critical_points.update({"hopf": (0.0,), "saddle_node": (0.0,)})


def get_model(name: str) -> DynModel:
    try:
        return _models[name]
    except KeyError:
        raise ValueError(f"unknown system '{name}'; known: {sorted(_models)}") from None


# -- control paths -------------------------------------------------------------


def _snichopf_map(s):
    k = np.where(s <= np.pi, 1.5 * np.cos(s), 3.0 * (s / np.pi - 1.5))
    alpha = np.where(s <= np.pi, 1.5 * np.sin(s), 0.0)
    return np.stack([k, alpha], axis=-1)


def _sho_map(s):
    return np.stack([4.0 * np.cos(s) + 1.0, 7.0 * np.sin(s) + 3.0], axis=-1)


def _cellcycle_map(s):
    return np.stack([s, -100.0 * s + 1010.0], axis=-1)


def _hopf_map(s):
    return np.stack([s, np.ones_like(s)], axis=-1)


def _saddle_node_map(s):
    return s[..., None]


_PATHS = {
    "snichopf": ((0.0, 2.0 * math.pi), _snichopf_map),
    "sho": ((0.0, math.pi / 2.0), _sho_map),
    "cellcycle": ((0.1, 10.0), _cellcycle_map),
    "hopf": ((-1.0, 1.0), _hopf_map),
    "saddle_node": ((-1.0, 0.2), _saddle_node_map),
}

SETUPS = {
    "snichopf": SystemSetup("snichopf", "snichopf",
                            ((-1.5, 1.5, 32), (0.0, 1.5, 32)), 1024, 50.0),
    "sho": SystemSetup("sho", "sho", ((1.0, 5.0, 32), (3.0, 10.0, 32)), 1764, 50.0,
                       oversample=(("oscillatory", 490), ("excitable", 250))),
    "cellcycle": SystemSetup("cellcycle", "cellcycle",
                             ((0.1, 10.0, 64), (10.0, 1000.0, 64)), 4096, 200.0,
                             n_points=450, n_transient=50),
    "hopf": SystemSetup("hopf", "hopf", ((-1.0, 1.0, 32), (0.5, 1.5, 32)), 1024, 50.0),
    "saddle_node": SystemSetup("saddle_node", "saddle_node", ((-1.0, 0.2, 1024),), 1024, 4.0),
}


def control_path(system: str) -> ControlPath:
    """Control-parameter path of ``system`` with its known critical points."""
    if system not in _PATHS:
        raise ValueError(f"unknown system '{system}'; known: {sorted(_PATHS)}")
    s_range, fn = _PATHS[system]
    crit = _critical_points.get(system, ())
    return ControlPath(system, s_range, fn, crit)


def get_setup(system: str) -> SystemSetup:
    if system not in SETUPS:
        raise ValueError(f"unknown system '{system}'; known: {sorted(SETUPS)}")
    return SETUPS[system]


# -- integration -----------------------------------------------------------------


def downsample_indices(n_points: int, n_keep: int) -> np.ndarray:
    """``n_keep`` near-uniform indices into ``range(n_points)``, endpoints included."""
    if not 1 <= n_keep <= n_points:
        raise ValueError(f"cannot keep {n_keep} of {n_points} points")
    if n_keep == 1:
        return np.zeros(1, dtype=np.int64)
    return np.round(np.linspace(0, n_points - 1, n_keep)).astype(np.int64)


def _integrate(rhs, params, x0, dt, n_steps, kicks) -> np.ndarray:
    # kicks: (n_steps, n, d) pre-scaled noise increments, or None
    x = np.array(x0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(n_steps):
        x = x + dt * rhs(x, params)
        if kicks is not None:
            x = x + kicks[k]
        if not np.all(np.abs(x) <= OVERFLOW_LIMIT):
            raise IntegrationError(
                f"state overflow (|x| > {OVERFLOW_LIMIT:g}) at step {k + 1}; "
                "parameters or step size are outside the stable range"
            )
        out[k + 1] = x
    return out


def euler_maruyama(model: DynModel, params, x0, t_end: float, n_steps: int,
                   sigma: float, seed: int) -> Trajectory:
    """Integrate one trajectory with additive noise of intensity ``sigma``.

    Returns ``n_steps + 1`` states at ``t = 0, dt, ..., t_end``.  With
    ``sigma == 0`` no random numbers are drawn and the result is independent
    of ``seed``.
    """
    if n_steps < 1 or t_end <= 0 or sigma < 0:
        raise ValueError("need n_steps >= 1, t_end > 0 and sigma >= 0")
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, model.state_dim)
    p = np.asarray(params, dtype=np.float64).reshape(1, -1)
    dt = t_end / n_steps
    kicks = None
    if sigma > 0:
        xi = make_rng(seed).standard_normal((n_steps, 1, model.state_dim))
        kicks = math.sqrt(2.0 * sigma * dt) * xi
    states = _integrate(model.rhs, p, x0, dt, n_steps, kicks)[:, 0, :]
    times = np.linspace(0.0, t_end, n_steps + 1)
    return Trajectory(s=float("nan"), params=p[0], times=times, states=states)


def _simulate_cells(model, setup, params, x0, noise, sigma, noise_mode):
    # params, x0: (n, .); noise: (n_steps or n_keep, n, d) standard normals or None
    dt = setup.t_end / setup.n_steps
    kicks = None
    if sigma > 0 and noise_mode == "diffusion":
        kicks = math.sqrt(2.0 * sigma * dt) * noise
    states = _integrate(model.rhs, params, x0, dt, setup.n_steps, kicks)
    obs = model.observed(states[setup.keep_indices()])  # (n_keep, n, obs_dim)
    if sigma > 0 and noise_mode == "observation":
        obs = obs + math.sqrt(2.0 * sigma) * noise
    return np.ascontiguousarray(obs.transpose(1, 0, 2)).reshape(obs.shape[1], -1)


def _draw_ics(rng, model, n):
    return rng.uniform(model.ic_low, model.ic_high, size=(n, model.state_dim))


def _cell_noise(rng, model, setup, n, sigma, noise_mode):
    if sigma == 0:
        return None
    if noise_mode == "diffusion":
        return rng.standard_normal((setup.n_steps, n, model.state_dim))
    return rng.standard_normal((setup.n_keep, n, model.observed_dim))


def _one_per_cell(model, setup, params, sigma, seed, noise_mode, stream):
    # each cell gets its own stream: pick 1 of `train_ics` candidate ICs, then noise
    n = params.shape[0]
    x0 = np.empty((n, model.state_dim))
    noise = None
    for c in range(n):
        rng = make_rng(seed, *stream, c)
        cand = _draw_ics(rng, model, setup.train_ics)
        x0[c] = cand[rng.integers(setup.train_ics)]
        eps = _cell_noise(rng, model, setup, 1, sigma, noise_mode)
        if eps is not None:
            if noise is None:
                noise = np.empty((eps.shape[0], n, eps.shape[2]))
            noise[:, c] = eps[:, 0]
    return _simulate_cells(model, setup, params, x0, noise, sigma, noise_mode)


def _check_args(sigma, noise_mode):
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if noise_mode not in NOISE_MODES:
        raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got '{noise_mode}'")


def _oversample_params(model, setup, regime, count, seed, idx):
    if model.regime is None:
        raise NotImplementedError(
            f"model '{model.name}' has no regime classifier; oversampling "
            f"'{regime}' needs DynModel.regime"
        )
    lo = np.array([g[0] for g in setup.grid])
    hi = np.array([g[1] for g in setup.grid])
    rng = make_rng(seed, 2, idx)
    found: list[np.ndarray] = []
    n_found = 0
    for _ in range(4000):
        cand = rng.uniform(lo, hi, size=(256, lo.size))
        hit = cand[np.asarray(model.regime(cand)) == regime]
        found.append(hit)
        n_found += hit.shape[0]
        if n_found >= count:
            return np.concatenate(found)[:count]
    raise RuntimeError(f"could not draw {count} '{regime}' parameters for '{model.name}'")


def generate_training_set(system: str, sigma: float, seed: int, *,
                          noise_mode: str = "diffusion",
                          setup: SystemSetup | None = None) -> Dataset:
    """Grid (plus regime oversampling) training set at the configured sizes.

    Labels are the first control parameter of each sample.
    """
    _check_args(sigma, noise_mode)
    setup = setup or get_setup(system)
    model = get_model(setup.model)
    params = setup.grid_params()
    feats = [_one_per_cell(model, setup, params, sigma, seed, noise_mode, (0,))]
    all_params = [params]
    for i, (regime, count) in enumerate(setup.oversample):
        extra = _oversample_params(model, setup, regime, count, seed, i)
        feats.append(_one_per_cell(model, setup, extra, sigma, seed, noise_mode, (3, i)))
        all_params.append(extra)
    features = np.concatenate(feats)
    if features.shape[0] != setup.train_count:
        raise DatasetCountError(
            f"{system}: generated {features.shape[0]} samples, setup requires {setup.train_count}"
        )
    config = _config(system, sigma, seed, noise_mode, setup, split="train")
    return Dataset(features, np.concatenate(all_params)[:, 0], system, float(sigma), config)


def generate_test_set(system: str, sigma: float, n_path_points: int, seed: int, *,
                      noise_mode: str = "diffusion", shared_ics: bool = False,
                      setup: SystemSetup | None = None) -> Dataset:
    """``test_batch`` trajectories at each of ``n_path_points`` evenly spaced s.

    With ``shared_ics`` every path point starts from the same ``test_batch``
    initial conditions (drawn once, stream ``(seed, 4)``), so row ``b`` of
    adjacent blocks differs only through the parameters and the noise.
    """
    _check_args(sigma, noise_mode)
    if n_path_points < 2:
        raise ValueError("need at least 2 path points")
    setup = setup or get_setup(system)
    model = get_model(setup.model)
    path = control_path(setup.path)
    s_grid = path.grid(n_path_points)
    b = setup.test_batch
    if shared_ics:
        rng = make_rng(seed, 4)
        shared = _draw_ics(rng, model, setup.test_ics)[rng.choice(setup.test_ics, size=b, replace=False)]
    blocks = []
    for j, s in enumerate(s_grid):
        rng = make_rng(seed, 1, j)
        cand = _draw_ics(rng, model, setup.test_ics)
        x0 = cand[rng.choice(setup.test_ics, size=b, replace=False)]
        if shared_ics:
            x0 = shared
        params = np.broadcast_to(path(s), (b, len(model.param_names)))
        noise = _cell_noise(rng, model, setup, b, sigma, noise_mode)
        blocks.append(_simulate_cells(model, setup, params, x0, noise, sigma, noise_mode))
    labels = np.repeat(s_grid, b)
    config = _config(system, sigma, seed, noise_mode, setup, split="test",
                     n_path_points=n_path_points)
    return Dataset(np.concatenate(blocks), labels, system, float(sigma), config)


def _config(system, sigma, seed, noise_mode, setup, **extra) -> dict:
    cfg = {
        "system": system,
        "sigma": float(sigma),
        "seed": int(seed),
        "noise_mode": noise_mode,
        "setup": {
            "model": setup.model,
            "path": setup.path,
            "grid": [list(g) for g in setup.grid],
            "train_count": setup.train_count,
            "t_end": setup.t_end,
            "n_points": setup.n_points,
            "n_transient": setup.n_transient,
            "n_keep": setup.n_keep,
            "train_ics": setup.train_ics,
            "test_ics": setup.test_ics,
            "test_batch": setup.test_batch,
            "oversample": [list(o) for o in setup.oversample],
        },
    }
    cfg.update(extra)
    return cfg


def with_setup(system: str, **changes) -> SystemSetup:
    """Copy of a registered setup with some fields replaced."""
    return replace(get_setup(system), **changes)
