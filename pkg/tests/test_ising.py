import math

import numpy as np
import pytest

from svdcl.ising import (T_CRITICAL, Chain, SpinConfig, _sweeps,
                         generate_ising_dataset, ising_energy, metropolis_sample,
                         temperature_grid)

from oracles import ising_exact


def block_stats(x, n_blocks=100):
    blocks = np.asarray(x)[: len(x) // n_blocks * n_blocks].reshape(n_blocks, -1).mean(axis=1)
    return blocks.mean(), blocks.std(ddof=1) / math.sqrt(n_blocks)


def test_onsager_constant():
    assert T_CRITICAL == pytest.approx(2.269185, abs=1e-6)


def test_temperature_grid():
    t = temperature_grid()
    assert t.size == 51 and t[0] == 1.0 and t[-1] == pytest.approx(3.5)
    np.testing.assert_allclose(np.diff(t), 0.05)


def test_energy_of_ordered_and_checkerboard():
    assert ising_energy(np.ones((4, 4))) == -32
    cb = np.indices((4, 4)).sum(axis=0) % 2 * 2 - 1
    assert ising_energy(cb) == 32


def test_spinconfig_validation():
    with pytest.raises(ValueError):
        SpinConfig(2, np.array([[1, 0], [1, 1]]), 1.0)
    with pytest.raises(ValueError):
        SpinConfig(3, np.ones((2, 2)), 1.0)


def test_sample_is_valid_and_deterministic():
    a = metropolis_sample(6, 2.0, 10, seed=4)
    b = metropolis_sample(6, 2.0, 10, seed=4)
    assert np.array_equal(a.spins, b.spins)
    assert set(np.unique(a.spins)) <= {-1, 1}
    with pytest.raises(ValueError):
        metropolis_sample(1, 2.0, 10, 0)
    with pytest.raises(ValueError):
        metropolis_sample(4, 0.0, 10, 0)


def test_incremental_energy_matches_recomputation():
    chain = Chain(7, 2.3, 5)
    for _ in range(50):
        chain.run(1)
        assert chain.energy == ising_energy(chain.spins)


def test_l3_magnetization_matches_enumeration():
    t = 2.269
    chain = Chain(3, t, 17)
    chain.run(1000)
    trace = chain.run(50000, record=True)
    mean, err = block_stats(trace[:, 1] / 9)
    _, exact_m = ising_exact(3, t)
    assert abs(mean - exact_m) <= 3 * err


def test_deep_ferromagnet_orders():
    hits = sum(abs(metropolis_sample(10, 1.0, 1000, seed).magnetization) > 0.9 for seed in range(100))
    assert hits >= 99


def test_infinite_temperature_limit():
    chain = Chain(100, 1e6, 3)
    start = chain.spins.copy()
    chain.run(1)
    # every proposed flip is accepted; the decorrelated lattice keeps half its spins up
    assert chain.flips / chain.attempts > 0.999
    assert np.array_equal(chain.spins, -start)
    assert abs((chain.spins > 0).mean() - 0.5) <= 0.05


def test_detailed_balance_single_site():
    # flip frequencies of a fixed site in a frozen 3x3 lattice obey the Metropolis ratio
    t = 1.7
    rng = np.random.default_rng(0)
    base = rng.choice([-1, 1], size=(3, 3)).astype(np.int64)
    base[0, 0] = 1
    other = base.copy()
    other[0, 0] = -1
    de = ising_energy(other) - ising_energy(base)
    # one sweep restricted to site (0,0): give every other site u = 1 (never flips)
    n = 40000
    u = np.ones((n, 9))
    u[:, 0] = rng.random(n)
    fwd = bwd = 0
    for i in range(n):
        s = base.copy()
        _sweeps(s, u[i:i + 1], math.exp(-4 / t), math.exp(-8 / t), ising_energy(base), False)
        fwd += s[0, 0] == -1
        s = other.copy()
        _sweeps(s, u[i:i + 1], math.exp(-4 / t), math.exp(-8 / t), ising_energy(other), False)
        bwd += s[0, 0] == 1
    p_fwd, p_bwd = fwd / n, bwd / n
    ratio = p_fwd / p_bwd
    expected = math.exp(-de / t)
    se = expected * math.sqrt((1 - p_fwd) / (p_fwd * n) + (1 - p_bwd) / (p_bwd * n))
    assert abs(ratio - expected) <= 4 * se + 1e-12


@pytest.fixture(scope="module")
def ising10():
    return generate_ising_dataset(10, 0.0, seed=0)


def test_dataset_layout(ising10):
    assert len(ising10) == 1020 and ising10.feature_dim == 100
    assert set(np.unique(ising10.features)) == {-1.0, 1.0}
    coords, groups = ising10.groups()
    np.testing.assert_allclose(coords, temperature_grid())
    assert all(g.size == 20 for g in groups)


def test_dataset_magnetization_decreases(ising10):
    coords, groups = ising10.groups()
    m = np.array([np.abs(ising10.features[g].mean(axis=1)).mean() for g in groups])
    assert m[:5].mean() > 0.95 and m[-5:].mean() < 0.4
    assert np.polyfit(coords, m, 1)[0] < 0


def test_dataset_l20_and_noise():
    ds = generate_ising_dataset(20, 0.3, seed=1, equilibration=10, decorrelation=2)
    assert ds.feature_dim == 400 and len(ds) == 1020
    clean = generate_ising_dataset(20, 0.0, seed=1, equilibration=10, decorrelation=2)
    noise = ds.features - clean.features
    assert abs(noise.std() - math.sqrt(0.6)) < 0.01
    np.testing.assert_array_equal(np.abs(clean.features), 1.0)
