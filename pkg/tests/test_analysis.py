import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapsesim.analysis import (
    StatisticsError,
    cic_deposit,
    factorization_diagnostic,
    factorization_null,
    fourier_mode,
    kinetic_temperature,
    pair_factorization_distance,
    sample_pairs,
    seam_gradient,
    temperature_profile,
    write_mode_csv,
    write_profile_csv,
    y_averaged_profile,
)


def snapshot(positions, velocities, lx=10.0, ly=None):
    return SimpleNamespace(positions=np.asarray(positions, float), velocities=np.asarray(velocities, float),
                           lx=lx, ly=lx if ly is None else ly)


def random_snapshot(n, seed=0, lx=10.0, sigma=1.0):
    rng = np.random.default_rng(seed)
    return snapshot(rng.uniform(0, lx, (n, 2)), rng.normal(0, sigma, (n, 2)), lx)


def test_temperature_single_particle():
    assert kinetic_temperature(snapshot([[1, 1]], [[1, 0]])) == 0.5


@given(st.floats(0.1, 10))
def test_temperature_scales_quadratically(c):
    s = random_snapshot(20, 1)
    scaled = snapshot(s.positions, c * s.velocities)
    assert kinetic_temperature(scaled) == pytest.approx(c**2 * kinetic_temperature(s), rel=1e-12)


def test_temperature_of_gaussian_gas():
    sigma = 0.8
    s = random_snapshot(10_000, 4, sigma=sigma)
    se = sigma**2 * math.sqrt(1 / 10_000)
    assert abs(kinetic_temperature(s) - sigma**2) < 3 * se


def test_cic_particle_on_node():
    ng = 8
    f = cic_deposit(snapshot([[2.5, 5.0]], [[2.0, 0.0]]), ng)
    assert f.values[2, 4] * f.cell_area == pytest.approx(2.0)
    assert np.count_nonzero(f.values) == 1


def test_cic_particle_at_cell_centre_and_wrap():
    ng = 8
    f = cic_deposit(snapshot([[9.375, 0.625]], [[2.0, 0.0]]), ng)
    weights = f.values * f.cell_area / 2.0
    for node in [(7, 0), (0, 0), (7, 1), (0, 1)]:
        assert weights[node] == pytest.approx(0.25)


def test_cic_conserves_energy():
    s = random_snapshot(1000, 2)
    f = cic_deposit(s, 64)
    assert f.total() == pytest.approx(0.5 * np.sum(s.velocities**2), rel=1e-12)


def test_profile_of_uniform_field_and_mean():
    s = random_snapshot(500, 3)
    f = cic_deposit(s, 32)
    assert y_averaged_profile(f).mean() == pytest.approx(f.values.mean(), rel=1e-12)
    const = type(f)(np.full((16, 16), 2.5), 10.0, 10.0)
    assert np.allclose(y_averaged_profile(const), 2.5)


def test_two_temperature_step_profile():
    n = 40_000
    rng = np.random.default_rng(5)
    pos = rng.uniform(0, 20.0, (n, 2))
    cold = pos[:, 0] < 10.0
    vel = rng.normal(0, 1, (n, 2)) * np.where(cold, math.sqrt(0.5), math.sqrt(0.7))[:, None]
    prof = temperature_profile(snapshot(pos, vel, 20.0), ng=128, bins=32)
    assert prof[2:14].mean() / prof[18:30].mean() == pytest.approx(0.5 / 0.7, rel=0.03)
    assert seam_gradient(prof) > 0.1


def test_profile_matches_particle_histogram():
    s = random_snapshot(20_000, 6)
    s.velocities *= (1 + 0.5 * np.sin(2 * np.pi * s.positions[:, :1] / s.lx))
    ng = 64
    prof = y_averaged_profile(cic_deposit(s, ng))
    # node x_i collects particles from [x_i - h, x_i + h]; compare with the cell-centred histogram
    e = 0.5 * np.sum(s.velocities**2, axis=1)
    hist = np.bincount((s.positions[:, 0] / s.lx * ng).astype(int), weights=e, minlength=ng)
    hist /= (s.lx / ng) * s.ly
    smoothed = 0.5 * (hist + np.roll(hist, 1))
    assert np.max(np.abs(prof - smoothed)) < 0.1 * prof.mean()


def test_zero_mode_equals_temperature():
    s = random_snapshot(300, 7)
    assert fourier_mode(s, 0) == kinetic_temperature(s)


@given(st.floats(0, 10), st.integers(1, 20))
@settings(max_examples=25)
def test_translation_changes_phase_only(shift, n_x):
    s = random_snapshot(50, 8)
    moved = snapshot(s.positions + [shift, 0.0], s.velocities)
    k = 2 * np.pi * n_x / s.lx
    assert fourier_mode(moved, n_x) == pytest.approx(fourier_mode(s, n_x) * np.exp(-1j * k * shift), abs=1e-12)


@pytest.mark.parametrize("n_x", [1, 4, 14])
def test_homogeneous_modes_shrink_like_shot_noise(n_x):
    def rms(n):
        return np.sqrt(np.mean([abs(fourier_mode(random_snapshot(n, seed), n_x)) ** 2 for seed in range(40)]))

    # |e(k)|^2 has mean <v^4>/(4n) = 2/n for unit Gaussian components
    assert rms(1000) == pytest.approx(math.sqrt(2 / 1000), rel=0.3)
    assert rms(1000) / rms(10_000) == pytest.approx(math.sqrt(10), rel=0.3)


@pytest.mark.parametrize("n,m", [(10, 45), (200, 500), (5000, 10_000)])
def test_sampled_pairs_are_distinct(n, m):
    i, j = sample_pairs(n, m, 1)
    assert len(i) == m
    assert np.all(i < j) and np.all(j < n) and np.all(i >= 0)
    assert len(set(zip(i.tolist(), j.tolist()))) == m


def test_independent_velocities_sit_at_null_floor():
    s = random_snapshot(10_000, 9)
    value = factorization_diagnostic(s, bins=16, max_pairs=200_000, rng=1)
    mean, std = factorization_null(s, bins=16, max_pairs=200_000, rng=1)
    assert abs(value - mean) < 3 * std


def test_correlated_pairs_far_above_floor():
    v = np.random.default_rng(2).normal(size=200_000)
    perfect = pair_factorization_distance(v, v, 16)
    shuffled = pair_factorization_distance(v, np.random.default_rng(3).permutation(v), 16)
    assert perfect > 50 * shuffled


def test_reflection_invariance():
    s = random_snapshot(2000, 10)
    flipped = snapshot(s.positions, -s.velocities)
    kw = dict(bins=12, max_pairs=50_000, rng=4)
    assert factorization_diagnostic(s, **kw) == pytest.approx(factorization_diagnostic(flipped, **kw), rel=1e-12)


def test_insufficient_statistics():
    with pytest.raises(StatisticsError):
        factorization_diagnostic(random_snapshot(50, 1))
    with pytest.raises(StatisticsError):
        factorization_diagnostic(random_snapshot(200, 1), bins=16, max_pairs=500)


def test_csv_writers(tmp_path):
    write_profile_csv(tmp_path / "p.csv", [0.0, 0.5], [1.0 / 3, 2.0], comment="config_hash=abc")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "x,e_kin_y"
    assert float(lines[2].split(",")[1]) == 1.0 / 3
    write_mode_csv(tmp_path / "m.csv", [(0.25, 4, 3 + 4j)])
    row = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")
    assert int(row[1]) == 4 and float(row[4]) == 5.0
