import math

import numba
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapsesim.md.engine import (
    BlowUpError,
    DynamicsSpec,
    InitializationError,
    ParticleSystem,
    equilibrate,
    join_systems,
    make_system,
    quantize,
    random_positions,
    reverse_momenta,
    run,
)
from collapsesim.md.forces import GeometryError
from collapsesim.md.potential import smoothed_lj_pair


def _box(n, density=0.7):
    return math.sqrt(n / density)


def _ideal(n, spec, seed=0):
    side = 40.0
    rng = np.random.default_rng(seed)
    return ParticleSystem(rng.uniform(0, side, (n, 2)), np.zeros((n, 2)), side, side, spec, seed=seed)


@pytest.mark.parametrize("kwargs", [
    dict(mode="chaotic"),
    dict(dt=0.0),
    dict(mode="deterministic", noise_amplitude=1e-3),
    dict(mode="grw_noise", noise_amplitude=1.0, gamma=0.1),
    dict(mode="dissipative_grw", noise_amplitude=1.0, gamma=0.1, noise_temp=1.0),
    dict(mode="dissipative_grw", noise_amplitude=1.0, gamma=0.5, noise_temp=math.inf),
])
def test_invalid_dynamics_rejected(kwargs):
    with pytest.raises(ValueError):
        DynamicsSpec(**kwargs)


def test_dissipative_constructor_satisfies_fluctuation_dissipation():
    spec = DynamicsSpec.dissipative(gamma=0.3, noise_temp=0.6)
    assert spec.noise_amplitude**2 == pytest.approx(2 * 0.3 * 0.6, rel=1e-14)
    assert spec.momentum_diffusion == pytest.approx(0.18)


def test_free_particle_moves_by_velocity_times_dt():
    s = ParticleSystem([[1.0, 2.0], [20.0, 20.0]], [[0.5, -0.3], [0.0, 0.0]], 30.0, 30.0)
    x0 = s.positions.copy()
    v = s.velocities.copy()
    run(s, 1)
    assert np.array_equal(s.positions, x0 + quantize(v * s.dynamics.dt))
    assert np.allclose(s.positions, x0 + v * s.dynamics.dt, rtol=0, atol=1e-12)
    assert s.time == pytest.approx(0.0025) and s.step == 1


def test_positions_wrap_into_box():
    s = ParticleSystem([[29.999, 0.0005]], [[1.0, -1.0]], 30.0, 30.0)
    run(s, 1)
    assert np.all((s.positions >= 0) & (s.positions < 30.0))


@pytest.mark.parametrize("seed", [0, 5])
def test_deterministic_mode_ignores_seed(seed):
    a = make_system(300, _box(300), _box(300), 0.8, seed=1)
    b = a.copy()
    b.seed = seed + 17
    run(a, 50)
    run(b, 50)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)


def test_reverse_twice_is_identity_and_keeps_temperature():
    s = make_system(100, _box(100), _box(100), 0.7, seed=2)
    v0 = s.velocities.copy()
    t0 = s.kinetic_temperature()
    reverse_momenta(s)
    assert s.kinetic_temperature() == t0
    reverse_momenta(s)
    assert np.array_equal(s.velocities, v0)


def test_retrace_is_bit_exact():
    s = make_system(200, _box(200), _box(200), 0.8, seed=4)
    run(s, 200)
    p0, v0, step0 = s.positions.copy(), s.velocities.copy(), s.step
    run(s, 2000)
    reverse_momenta(s)
    run(s, 2000)
    reverse_momenta(s)
    assert np.array_equal(s.positions, p0) and np.array_equal(s.velocities, v0)
    assert s.step == step0 + 4000


def test_results_independent_of_thread_count():
    base = make_system(400, _box(400), _box(400), 0.8, seed=9)
    a, b = base.copy(), base.copy()
    prev = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        run(a, 100)
    finally:
        numba.set_num_threads(prev)
    run(b, 100)
    assert np.array_equal(a.positions, b.positions)


def test_bound_pair_energy_drift():
    side = 8.0
    s = ParticleSystem([[3.0, 4.0], [4.15, 4.0]], [[0.0, 0.05], [0.0, -0.05]], side, side)

    def energy():
        d = s.positions[0] - s.positions[1]
        d -= side * np.rint(d / side)
        return smoothed_lj_pair(np.hypot(*d))[0] + 0.5 * np.sum(s.velocities**2)

    e0 = energy()
    worst = 0.0
    for _ in range(1000):
        run(s, 100)
        worst = max(worst, abs(energy() - e0))
    assert s.step == 100_000
    assert worst / abs(e0) < 1e-5


def test_momentum_conserved_in_dense_fluid():
    s = make_system(500, _box(500), _box(500), 0.8, seed=3)
    assert np.all(s.net_momentum() == 0.0)
    run(s, 500)
    # only lattice rounding of the kicks can change the total
    assert np.all(np.abs(s.net_momentum()) < 500 * 500 * 2.0**-40 / s.dynamics.dt)


def test_noise_variance_grows_linearly():
    amp = 1.0
    spec = DynamicsSpec(mode="grw_noise", noise_amplitude=amp, interacting=False)
    s = _ideal(10_000, spec, seed=8)
    steps = 400
    run(s, steps)
    t = steps * spec.dt
    comps = s.velocities.ravel()
    expected = 2 * spec.momentum_diffusion * t
    se = expected * math.sqrt(2 / comps.size)
    assert abs(comps.var() - expected) < 3 * se
    assert abs(comps.mean()) < 3 * math.sqrt(expected / comps.size)


def test_noise_is_reproducible_and_seeded():
    spec = DynamicsSpec(mode="grw_noise", noise_amplitude=0.5, interacting=False)
    a, b, c = _ideal(50, spec, 1), _ideal(50, spec, 1), _ideal(50, spec, 1)
    c.seed = 2
    for s in (a, b, c):
        run(s, 10)
    assert np.array_equal(a.velocities, b.velocities)
    assert not np.array_equal(a.velocities, c.velocities)


def test_split_runs_match_single_run():
    spec = DynamicsSpec(mode="grw_noise", noise_amplitude=0.5)
    a = make_system(200, _box(200), _box(200), 0.8, seed=6, dynamics=spec)
    b = a.copy()
    run(a, 40)
    run(b, 15)
    run(b, 25)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)


def test_dissipative_gas_thermalizes():
    spec = DynamicsSpec.dissipative(gamma=1.0, noise_temp=0.6, interacting=False)
    s = _ideal(2000, spec, seed=3)
    run(s, 2000)
    temps = []
    for _ in range(12):
        run(s, 100)
        temps.append(s.kinetic_temperature())
    assert np.mean(temps) == pytest.approx(0.6, rel=0.02)


def test_blow_up_reports_step():
    s = ParticleSystem([[5.0, 5.0], [5.0, 5.0], [1.0, 1.0]], np.zeros((3, 2)), 12.0, 12.0)
    s.step = 7
    with pytest.raises(BlowUpError) as info:
        run(s, 3)
    assert info.value.step == 7


def test_initial_velocity_statistics():
    s = make_system(20_000, _box(20_000), _box(20_000), 0.75, seed=1)
    assert np.all(s.net_momentum() == 0.0)
    assert s.kinetic_temperature() == pytest.approx(0.75**2, rel=0.02)


def test_random_insertion_fails_when_too_dense():
    with pytest.raises(InitializationError):
        random_positions(400, 12.0, 12.0, rng=0, max_attempts=50)
    pos = random_positions(30, 12.0, 12.0, rng=0)
    d = pos[:, None] - pos[None]
    d -= 12.0 * np.rint(d / 12.0)
    r = np.hypot(d[..., 0], d[..., 1]) + np.eye(30) * 99
    assert r.min() >= 0.8 - 1e-9


def test_equilibrate_reports_temperature():
    s = make_system(400, _box(400), _box(400), 0.75, seed=2)
    s, temp = equilibrate(s, 0.75, 400)
    assert s.step == 400 and 0.3 < temp < 0.9
    assert np.all(np.abs(s.net_momentum()) < 1e-6)


@pytest.fixture(scope="module")
def halves():
    n = 600
    ly = _box(2 * n)
    lx = n / (0.7 * ly)
    left = make_system(n, lx, ly, 0.75, seed=1)
    right = make_system(n, lx, ly, 0.85, seed=2)
    run(left, 200)
    run(right, 200)
    return left, right


def test_join_preserves_particles_and_velocities(halves):
    left, right = halves
    joined = join_systems(left, right)
    assert joined.n == left.n + right.n
    assert joined.time == 0.0 and joined.step == 0
    assert joined.lx == pytest.approx(left.lx + right.lx)
    assert np.array_equal(joined.velocities[: left.n], left.velocities)
    assert joined.velocities[left.n:].var() == right.velocities.var()


def test_join_leaves_no_close_cross_seam_pairs(halves):
    left, right = halves
    joined = join_systems(left, right)
    a, b = joined.positions[: left.n], joined.positions[left.n:]
    d = a[:, None] - b[None]
    d -= np.array([joined.lx, joined.ly]) * np.rint(d / [joined.lx, joined.ly])
    assert np.hypot(d[..., 0], d[..., 1]).min() >= 0.8


def test_join_rejects_mismatched_geometry(halves):
    left, right = halves
    taller = ParticleSystem(right.positions, right.velocities, right.lx, right.ly + 1.0)
    with pytest.raises(GeometryError):
        join_systems(left, taller)


@given(st.integers(0, 2**32), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_quantize_idempotent_and_lattice_exact(seed, step):
    x = np.random.default_rng(seed).uniform(-100, 100, 8)
    q = quantize(x)
    assert np.array_equal(quantize(q), q)
    assert np.all(np.abs(q - x) <= 2.0**-41)
    dt = 0.0025
    assert np.array_equal(quantize((q / dt) * dt), q)
