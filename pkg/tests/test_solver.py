import io

import numpy as np
import pytest
from scipy.integrate import quad

import nlwdecay.Utils as utils
import nlwdecay.Solver as solver
import nlwdecay.Energies as energies
from nlwdecay.Geometry import PowerParams
from nlwdecay.Solver import Gaussian, Bump, Tail, Zero, RadialGrid, FieldState


P3 = PowerParams(3.0, 1.5)


@pytest.fixture
def small_grid():
    return RadialGrid.from_spacing(20.0, 1 / 32)


## ---------- Profiles ---------- ##

@pytest.mark.parametrize('profile', [Gaussian(1.3, 0.7), Bump(2.0, 1.0, 2.5), Tail(0.5, 3.0), Tail(1.0, 2.0)])
def test_profile_moment_matches_quadrature(profile):
    for x in (0.5, 1.7, 4.0):
        breaks = [b for b in (1.0, 2.5) if b < x]
        val, _ = quad(lambda s: s * profile(s), 0, x, points=breaks or None)
        assert profile.moment(x) == pytest.approx(val, rel=1e-9, abs=1e-14)


@pytest.mark.parametrize('profile', [Gaussian(1.3, 0.7), Bump(2.0, 1.0, 2.5), Tail(0.5, 3.0)])
def test_profile_derivative(profile):
    r = np.linspace(0.1, 3.0, 7)
    h = 1e-6
    np.testing.assert_allclose(profile.derivative(r), (profile(r + h) - profile(r - h)) / (2 * h), atol=1e-7)


def test_bump_support():
    bump = Bump(1.0, 1.0, 2.0)
    assert bump(0.5) == 0.0 and bump(1.0) == 0.0 and bump(2.0) == 0.0 and bump(3.0) == 0.0
    assert bump(1.5) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Bump(1.0, 2.0, 1.0)


def test_profile_description_roundtrip():
    data = solver.DataProfile(Gaussian(2.0, 0.5), Tail(1.0, 4.0))
    back = solver.data_from_description(data.describe())
    r = np.linspace(0, 5, 11)
    np.testing.assert_array_equal(back.position(r), data.position(r))
    np.testing.assert_array_equal(back.velocity(r), data.velocity(r))
    assert solver.ProfileKind['bump'] is solver.ProfileKind.BUMP


## ---------- Grid and states ---------- ##

def test_grid_spacing():
    grid = RadialGrid.from_spacing(64.0, 1 / 256)
    assert grid.n == 16384
    assert grid.dt == pytest.approx(grid.dr / 2)
    assert grid.refine(2).dr == pytest.approx(grid.dr / 2)
    assert grid.r[-1] == pytest.approx(64.0)


@pytest.mark.parametrize('kwargs', [dict(r_max=1.0, n=8), dict(r_max=1.0, n=32, cfl=1.5), dict(r_max=-1.0, n=32)])
def test_grid_rejects(kwargs):
    with pytest.raises(ValueError):
        RadialGrid(**kwargs)


def test_domain_of_dependence_guard():
    grid = RadialGrid(64.0, 1024)
    assert grid.guard_violation(40.0, 10.0, 6.0) is None
    assert 'domain-of-dependence' in grid.guard_violation(40.0, 20.0, 6.0)


def test_radial_quotient_even_extrapolation():
    r = np.linspace(0, 1, 11)
    psi = r * (1 + r**2)
    out = solver.radial_quotient(psi, r)
    assert out[0] == pytest.approx(1.0, abs=1e-14)


def test_init_state(small_grid):
    state = solver.init_state(Gaussian(1.0, 1.0), small_grid)
    assert state.t == 0.0
    assert state.psi[0] == 0.0
    np.testing.assert_allclose(state.psi, small_grid.r * np.exp(-small_grid.r**2))
    np.testing.assert_array_equal(state.pi, 0.0)


def test_init_state_tail_admission(small_grid):
    # (gamma0 + 3)/2 = 2.25
    with pytest.raises(utils.DivergenceError):
        solver.init_state(Tail(1.0, 2.0), small_grid, P3, require_finite=True)
    solver.init_state(Tail(1.0, 3.0), small_grid, P3, require_finite=True)
    with pytest.raises(ValueError):
        solver.init_state(Tail(1.0, 3.0), small_grid, require_finite=True)


## ---------- Time stepping ---------- ##

def test_zero_data_stays_zero(small_grid):
    state = solver.init_state(Zero(), small_grid)
    for _ in range(10):
        state = solver.step(state, P3, small_grid)
    np.testing.assert_array_equal(state.psi, 0.0)
    assert state.t == pytest.approx(10 * small_grid.dt)


def test_odd_symmetry(small_grid):
    plus = solver.evolve(solver.init_state(Gaussian(1.0, 1.0), small_grid), 2.0, 1.0, P3, small_grid)
    minus = solver.evolve(solver.init_state(Gaussian(-1.0, 1.0), small_grid), 2.0, 1.0, P3, small_grid)
    np.testing.assert_array_equal(minus.psi, -plus.psi)


def test_energy_drift_small(small_grid):
    traj = solver.evolve(solver.init_state(Gaussian(1.0, 1.0), small_grid), 5.0, 0.5, P3, small_grid)
    E = np.array([energies.conserved_energy(s, 3.0, small_grid) for s in traj.snapshots])
    assert np.max(np.abs(E - E[0])) / E[0] < 5e-3


def test_numerical_domain_of_dependence(small_grid):
    traj = solver.evolve(solver.init_state(Bump(1.0, 1.0, 2.0), small_grid), 2.0, 2.0, P3, small_grid)
    far = small_grid.r > 2.0 + 4 * 2.0 + 2 * small_grid.dr
    np.testing.assert_array_equal(traj.psi[-1][far], 0.0)


def test_nonlinear_step_needs_params(small_grid):
    state = solver.init_state(Gaussian(), small_grid)
    with pytest.raises(ValueError):
        solver.step(state, None, small_grid)
    solver.step(state, None, small_grid, linear=True)


def test_blowup_detected(small_grid):
    psi = np.zeros(small_grid.n + 1)
    psi[5] = np.nan
    with pytest.raises(utils.BlowupError):
        solver.step(FieldState(0.0, psi, np.zeros_like(psi)), P3, small_grid)


## ---------- Linear oracle ---------- ##

def test_dalembert_initial_data():
    phi0, phi1 = Gaussian(1.0, 1.0), Gaussian(0.5, 2.0)
    r = np.linspace(0.0, 5.0, 21)
    np.testing.assert_allclose(solver.dalembert_linear(phi0, phi1, 0.0, r), phi0(r), atol=1e-14)
    h = 1e-5
    rate = (solver.dalembert_linear(phi0, phi1, h, r) - solver.dalembert_linear(phi0, phi1, -h, r)) / (2 * h)
    np.testing.assert_allclose(rate, phi1(r), atol=1e-6)


def test_dalembert_axis_limit():
    phi0, phi1 = Gaussian(1.0, 1.0), Bump(1.0, 0.5, 2.0)
    at_axis = solver.dalembert_linear(phi0, phi1, 1.3, 0.0)
    near = solver.dalembert_linear(phi0, phi1, 1.3, 1e-6)
    assert at_axis == pytest.approx(near, rel=1e-5)


def test_linear_evolution_matches_oracle():
    profile = Gaussian(1.0, 1.0)
    errors = []
    for dr in (1 / 32, 1 / 64):
        grid = RadialGrid.from_spacing(20.0, dr)
        traj = solver.evolve(solver.init_state(profile, grid), 4.0, 4.0, P3, grid, linear=True)
        exact = solver.dalembert_linear(profile, Zero(), traj.T, grid.r)
        errors.append(np.max(np.abs(traj.phi[-1] - exact)))
    assert errors[1] < 2e-3
    assert errors[0] / errors[1] > 3.0


## ---------- Trajectories ---------- ##

def test_evolve_snapshot_times():
    grid = RadialGrid(4.0, 64)
    traj = solver.evolve(solver.init_state(Gaussian(), grid), 1.0, 0.25, P3, grid)
    np.testing.assert_allclose(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    partial = solver.evolve(solver.init_state(Gaussian(), grid), 0.3, 1.0, P3, grid)
    assert partial.T == pytest.approx(0.3)
    assert len(partial) == 2


def test_evolve_rejects_bad_horizon():
    grid = RadialGrid(4.0, 64)
    with pytest.raises(ValueError):
        solver.evolve(solver.init_state(Gaussian(), grid), -1.0, 0.25, P3, grid)
    with pytest.raises(ValueError):
        solver.evolve(solver.init_state(Gaussian(), grid), 1.0, 0.0, P3, grid)


def test_compact_truncation():
    grid = RadialGrid(4.0, 128)
    state = solver.init_state(Gaussian(1.0, 0.3), grid)
    with pytest.raises(ValueError):
        solver.evolve_compact(state, 4.0, 0.5, P3, grid, R=4.0)
    sub = PowerParams(2.4, 1.3)
    # (u* v*)^{p-3} grows toward the apex for p < 3
    traj = solver.evolve_compact(state, 3.9, 0.1, sub, grid, R=4.0, ceiling=10.0)
    assert traj.metadata['truncated']
    assert traj.T < 3.9
    whole = solver.evolve_compact(state, 1.0, 0.1, P3, grid, R=4.0)
    assert not whole.metadata['truncated']
    assert whole.compact


def test_compact_freezes_outside_cone():
    grid = RadialGrid(4.0, 128)
    state = solver.init_state(Gaussian(1.0, 0.3), grid)
    state = FieldState(0.0, state.psi + grid.r * 1e-3, state.pi)
    nxt = solver.step_compact(state, P3, grid, 4.0)
    outside = grid.r >= 4.0 - grid.dt - grid.dr / 2
    np.testing.assert_array_equal(nxt.psi[outside], state.psi[outside])


def test_trajectory_rejects_unordered_times():
    grid = RadialGrid(4.0, 64)
    s = solver.init_state(Gaussian(), grid)
    with pytest.raises(ValueError):
        solver.Trajectory.from_states([s, s], grid, P3)


## ---------- Interpolation ---------- ##

def _manufactured(grid, times):
    # phi = g(r) (1 + t) with a cubic g
    g = 1 + grid.r + grid.r**2 - 0.3 * grid.r**3
    states = [FieldState(t, grid.r * g * (1 + t), grid.r * g) for t in times]
    return solver.Trajectory.from_states(states, grid, P3)


def test_cubic_interpolation_exact_for_cubics():
    grid = RadialGrid(4.0, 64)
    traj = _manufactured(grid, [0.0, 0.5, 1.0])
    t = np.array([0.1, 0.37, 0.8])
    r = np.array([0.5, 1.23, 3.0])
    exact = (1 + r + r**2 - 0.3 * r**3) * (1 + t)
    np.testing.assert_allclose(traj.interpolator.phi_cubic(t, r), exact, rtol=1e-11)


def test_bilinear_interpolation_at_nodes():
    grid = RadialGrid(4.0, 64)
    traj = _manufactured(grid, [0.0, 0.5, 1.0])
    phi, phi_t, _ = traj.interpolator.values(0.5, grid.r[10])
    assert phi == pytest.approx(traj.phi[1, 10])
    assert phi_t == pytest.approx(traj.phi_t[1, 10])


def test_interpolation_domain():
    grid = RadialGrid(4.0, 64)
    traj = _manufactured(grid, [0.0, 0.5])
    with pytest.raises(ValueError):
        traj.interpolator.phi(0.7, 1.0)
    with pytest.raises(ValueError):
        traj.interpolator.phi(0.2, 4.5)


## ---------- Persistence ---------- ##

def test_save_and_load_trajectory(tmp_path):
    grid = RadialGrid(4.0, 64)
    traj = solver.evolve(solver.init_state(Gaussian(), grid), 0.5, 0.25, P3, grid, profile=Gaussian())
    solver.save_trajectory(traj, tmp_path)
    back = solver.load_trajectory(tmp_path)
    np.testing.assert_array_equal(back.psi, traj.psi)
    np.testing.assert_array_equal(back.times, traj.times)
    assert back.params == traj.params
    assert back.metadata['profile'] == traj.metadata['profile']


def test_snapshot_header():
    fh = io.BytesIO()
    psi = np.arange(5.0)
    size = solver.write_snapshot(fh, 1.5, psi, -psi, 0.25, 0.125, P3, image=True)
    assert size == 56 + 2 * 8 * 5
    fh.seek(0)
    info, back, pi = solver.read_snapshot(fh)
    assert info['image'] and info['version'] == utils.FORMAT_VERSION
    assert info['t'] == 1.5 and info['n'] == 4 and info['p'] == 3.0
    np.testing.assert_array_equal(back, psi)
    np.testing.assert_array_equal(pi, -psi)


def test_snapshot_bad_magic():
    fh = io.BytesIO(b'XXXX' + bytes(52))
    with pytest.raises(ValueError):
        solver.read_snapshot(fh)
    with pytest.raises(EOFError):
        solver.read_snapshot(io.BytesIO(b'NLWD'))
