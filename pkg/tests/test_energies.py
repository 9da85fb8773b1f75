import numpy as np
import pytest
from scipy.integrate import quad

import nlwdecay.Utils as utils
import nlwdecay.Solver as solver
import nlwdecay.Geometry as geometry
import nlwdecay.Energies as energies
from nlwdecay.Geometry import PowerParams
from nlwdecay.Solver import Gaussian, Tail, Zero, RadialGrid
from nlwdecay.Energies import MultiplierKind, MultiplierSpec


P3 = PowerParams(3.0, 1.5)


@pytest.fixture(scope='module')
def gaussian_traj():
    grid = RadialGrid.from_spacing(16.0, 1 / 32)
    return solver.evolve(solver.init_state(Gaussian(), grid), 4.0, 0.25, P3, grid, profile=Gaussian())


@pytest.fixture(scope='module')
def zero_traj():
    grid = RadialGrid.from_spacing(8.0, 1 / 16)
    return solver.evolve(solver.init_state(Zero(), grid), 2.0, 0.25, P3, grid, profile=Zero())


@pytest.fixture(scope='module')
def long_traj():
    grid = RadialGrid.from_spacing(64.0, 1 / 16)
    return solver.evolve(solver.init_state(Gaussian(), grid), 48.0, 0.5, P3, grid, profile=Gaussian())


## ---------- Conserved energy ---------- ##

def test_gaussian_energy_value():
    # phi = exp(-r^2), p = 3
    dens = lambda r: r**2 * (2 * r**2 * np.exp(-2 * r**2) + np.exp(-4 * r**2) / 4)
    exact = 4 * np.pi * quad(dens, 0, np.inf)[0]
    assert exact == pytest.approx(3.1271, abs=1e-4)
    grid = RadialGrid.from_spacing(16.0, 1 / 64)
    state = solver.init_state(Gaussian(), grid)
    assert energies.conserved_energy(state, 3.0, grid) == pytest.approx(exact, rel=1e-3)


def test_energy_scaling_with_amplitude():
    grid = RadialGrid.from_spacing(16.0, 1 / 64)
    quad1, pot1 = energies.energy_parts(solver.init_state(Gaussian(1.0), grid), 3.0, grid)
    quad2, pot2 = energies.energy_parts(solver.init_state(Gaussian(2.0), grid), 3.0, grid)
    assert quad2 == pytest.approx(4 * quad1, rel=1e-12)
    assert pot2 == pytest.approx(16 * pot1, rel=1e-12)


def test_linear_energy_drops_potential():
    grid = RadialGrid.from_spacing(16.0, 1 / 64)
    state = solver.init_state(Gaussian(), grid)
    quad_part, _ = energies.energy_parts(state, 3.0, grid)
    assert energies.conserved_energy(state, 3.0, grid, linear=True) == pytest.approx(quad_part)


def test_conservation_along_trajectory(gaussian_traj):
    E = np.array([energies.conserved_energy(s, 3.0, gaussian_traj.grid) for s in gaussian_traj.snapshots])
    assert np.max(np.abs(E - E[0])) / E[0] < 5e-3


## ---------- Weighted data norms ---------- ##

def test_weighted_energy_dominates(gaussian_traj):
    state0 = gaussian_traj.snapshot(0)
    grid = gaussian_traj.grid
    E = energies.conserved_energy(state0, 3.0, grid)
    E0 = energies.weighted_initial_energy(state0, P3, grid, 0)
    E1 = energies.weighted_initial_energy(state0, P3, grid, 1)
    assert E0 > E
    assert E1 > E0
    with pytest.raises(ValueError):
        energies.weighted_initial_energy(state0, P3, grid, 2)


def test_weighted_energy_divergent_tail():
    grid = RadialGrid.from_spacing(16.0, 1 / 16)
    state0 = solver.init_state(Tail(1.0, 1.2), grid)
    with pytest.raises(utils.DivergenceError):
        energies.weighted_initial_energy(state0, P3, grid, 0, profile=Tail(1.0, 1.2))
    # the same data without a profile is evaluated on the truncated grid
    assert np.isfinite(energies.weighted_initial_energy(state0, P3, grid, 0))


def test_weighted_energy_parts(gaussian_traj):
    grid = gaussian_traj.grid
    state0 = gaussian_traj.snapshot(0)
    quad, pot = energies.weighted_energy_parts(state0, P3, grid)
    assert quad + pot == pytest.approx(energies.weighted_initial_energy(state0, P3, grid, 0), rel=1e-12)
    quad2, pot2 = energies.weighted_energy_parts(solver.init_state(Gaussian(2.0), grid), P3, grid)
    assert quad2 == pytest.approx(4 * quad, rel=1e-12)
    assert pot2 == pytest.approx(16 * pot, rel=1e-12)


## ---------- Potential decay ---------- ##

def test_pecher_exponents():
    assert energies.pecher_exponent(3.0) == -2
    assert energies.pecher_exponent(1.5) == 1
    assert energies.pecher_pointwise_exponent(3.0) == pytest.approx(-1.0)
    assert np.isnan(energies.pecher_pointwise_exponent(4.0))


def test_pecher_check_needs_a_decade(gaussian_traj):
    with pytest.raises(ValueError):
        energies.pecher_rate_check(gaussian_traj)


def test_spacetime_integral_nondecreasing(gaussian_traj):
    acc = energies.spacetime_weighted_integral(gaussian_traj)
    assert acc[0] == 0.0
    assert np.all(np.diff(acc) >= 0)
    assert acc[-1] > 0


def test_pecher_rate_for_cubic(long_traj):
    fit = energies.pecher_rate_check(long_traj, t_min=3.0)
    assert fit.status == 'ok'
    assert fit.theory == -2
    assert fit.slope <= -1.7
    assert fit.within


def test_spacetime_integral_saturates(long_traj):
    # doubling T from 24 to 48 adds less than 5%
    acc = energies.spacetime_weighted_integral(long_traj)
    half = np.interp(24.0, long_traj.times, acc)
    assert (acc[-1] - half) / acc[-1] < 0.05


## ---------- Fluxes ---------- ##

def test_cone_flux_guards(gaussian_traj):
    with pytest.raises(ValueError):
        energies.cone_weighted_flux(gaussian_traj, (1.0, 0.0), 1.6)
    with pytest.raises(ValueError):
        energies.cone_weighted_flux(gaussian_traj, (5.0, 0.0), 1.2)
    with pytest.raises(ValueError):
        energies.cone_weighted_flux(gaussian_traj, (3.0, 14.0), 1.2)
    assert energies.cone_weighted_flux(gaussian_traj, (0.0, 2.0), 1.2) == 0.0


def test_cone_flux_sup(gaussian_traj):
    apexes = energies.apex_grid(gaussian_traj, n_t=3, n_r=3)
    assert len(apexes) == 9
    res = energies.cone_flux_sup(gaussian_traj, 1.2, apexes, n_r=16, n_s=16)
    assert res.sup == pytest.approx(res.table.flux.max())
    assert res.sup > 0
    assert len(res.table) == 9


def test_outgoing_flux(gaussian_traj, zero_traj):
    assert energies.outgoing_flux(zero_traj, 0.0) == 0.0
    assert energies.outgoing_flux(gaussian_traj, 0.5) > 0
    with pytest.raises(ValueError):
        energies.outgoing_flux(gaussian_traj, 3.0)


def test_hyperboloid_flux_truncation(gaussian_traj):
    with pytest.warns(UserWarning):
        flux = energies.hyperboloid_flux(gaussian_traj, t_extent=10.0)
    assert flux.truncated
    assert flux.t_extent == pytest.approx(gaussian_traj.T)
    assert flux.total > 0


def test_outgoing_flux_vanishes_beyond_support():
    grid = RadialGrid.from_spacing(32.0, 1 / 16)
    bump = solver.Bump(1.0, 1.0, 2.0)
    traj = solver.evolve(solver.init_state(bump, grid), 4.0, 0.25, P3, grid, profile=bump)
    assert energies.outgoing_flux(traj, -10.0) == 0.0


def test_outgoing_flux_decays_in_u(long_traj):
    slope, fluxes = energies.outgoing_flux_decay(long_traj, [-1.0, -2.0, -4.0, -8.0])
    assert fluxes[0] > 0
    assert slope <= -P3.gamma0 + 0.4


def test_hyperboloid_flux_refinement():
    totals = []
    for dr in (1 / 16, 1 / 32):
        grid = RadialGrid.from_spacing(16.0, dr)
        traj = solver.evolve(solver.init_state(Gaussian(), grid), 4.0, 0.25, P3, grid, profile=Gaussian())
        totals.append(energies.hyperboloid_flux(traj).total)
    assert abs(totals[0] - totals[1]) / totals[1] < 0.02


## ---------- Commuted fluxes ---------- ##

def test_commuted_flux_zero(zero_traj):
    for Z in ('t', 'r'):
        flux = energies.commuted_hyperboloid_flux(zero_traj, Z=Z)
        assert flux.total == 0.0
        assert flux.energy == 0.0


def test_commutator_lookup():
    assert energies.Commutator['t'] is energies.Commutator.T
    assert energies.Commutator[energies.Commutator.R] is energies.Commutator.R
    with pytest.raises(ValueError):
        energies.Commutator['theta']


def test_commuted_flux_rejects_compact():
    grid = RadialGrid.from_spacing(4.0, 1 / 16)
    compact = solver.evolve_compact(solver.init_state(Gaussian(), grid), 1.0, 0.25, P3, grid, R=4.0)
    with pytest.raises(ValueError):
        energies.commuted_hyperboloid_flux(compact, Z='t')


@pytest.mark.parametrize('Z', ['t', 'r'])
def test_commuted_flux_quadratic_in_linear_data(Z):
    grid = RadialGrid.from_spacing(16.0, 1 / 32)
    fluxes = []
    for A in (1.0, 2.0):
        traj = solver.evolve(solver.init_state(Gaussian(A), grid), 3.0, 0.25, P3, grid, linear=True)
        fluxes.append(energies.commuted_hyperboloid_flux(traj, Z=Z))
    assert fluxes[0].potential == 0.0
    assert fluxes[0].total > 0
    assert fluxes[1].total == pytest.approx(4 * fluxes[0].total, rel=1e-10)


@pytest.mark.parametrize('Z', ['t', 'r'])
def test_commuted_flux_refinement(Z):
    totals = []
    for dr in (1 / 16, 1 / 32):
        grid = RadialGrid.from_spacing(16.0, dr)
        traj = solver.evolve(solver.init_state(Gaussian(), grid), 3.0, 0.25, P3, grid)
        flux = energies.commuted_hyperboloid_flux(traj, Z=Z)
        assert flux.potential > 0
        totals.append(flux.total)
    assert abs(totals[0] - totals[1]) / totals[1] < 0.05


## ---------- Multipliers ---------- ##

@pytest.mark.parametrize('kind, gamma, height', [
    (MultiplierKind.EXTERIOR, 2.0, None),
    (MultiplierKind.COMPACT, 0.5, None),
    (MultiplierKind.COMPACT, 1.2, 1.0),
    (MultiplierKind.RWEIGHTED, 2.5, None),
])
def test_multiplier_rejects(kind, gamma, height):
    with pytest.raises(ValueError):
        MultiplierSpec(kind, gamma, height)


def test_multiplier_kind_lookup():
    assert MultiplierKind['exterior'] is MultiplierKind.EXTERIOR
    assert MultiplierKind.valid() == ['EXTERIOR', 'COMPACT', 'CLASSICAL', 'RWEIGHTED']


def test_angular_coefficients():
    t, r = np.meshgrid(np.linspace(0, 100, 41), np.linspace(0, 100, 41), indexing='ij')
    for gamma in (1.1, 1.5, 1.9):
        coeff = energies.angular_coefficient(MultiplierSpec(MultiplierKind.EXTERIOR, gamma), t, r)
        assert np.all(coeff >= -1e-12)
    tc, rc = np.meshgrid(np.linspace(0, 0.95, 20), np.linspace(0, 0.95, 20), indexing='ij')
    inside = rc < 1 - tc
    for gamma in (0.2, 0.5, 0.8):
        coeff = energies.angular_coefficient(MultiplierSpec(MultiplierKind.COMPACT, gamma, 1.0), tc[inside], rc[inside])
        assert np.all(coeff >= -1e-12)
    classical = energies.angular_coefficient(MultiplierSpec(MultiplierKind.CLASSICAL), t, r)
    np.testing.assert_array_equal(classical, 0.0)
    rw = energies.angular_coefficient(MultiplierSpec(MultiplierKind.RWEIGHTED, 2.0), 1.0, np.array([0.5, 2.0]))
    np.testing.assert_allclose(rw, 0.0, atol=1e-14)


def test_exterior_chi_on_axis():
    # chi = b / r has a finite limit b_r on the axis
    mult = MultiplierSpec(MultiplierKind.EXTERIOR, 1.5)
    axis = energies.multiplier_fields(mult, 3.0, 0.0)
    near = energies.multiplier_fields(mult, 3.0, 1e-7)
    assert float(axis.chi) == pytest.approx(float(near.chi), rel=1e-6)


def test_deformation_contraction():
    weights = geometry.null_weights(np.array([1.0, 2.0]), np.array([0.5, 1.0]))
    derivs = (np.array([0.3, -1.0]), np.array([2.0, 0.1]), np.array([0.5, 0.5]), np.array([1.0, 0.2]))
    classical = energies.deformation_contraction(MultiplierSpec(MultiplierKind.CLASSICAL), weights, derivs, 3.0)
    np.testing.assert_allclose(classical, 0.0, atol=1e-14)
    ext = energies.deformation_contraction(MultiplierSpec(MultiplierKind.EXTERIOR, 1.5), weights, derivs, 3.0)
    assert ext.shape == (2,)
    cone = geometry.compact_cone_weights(2.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        energies.deformation_contraction(MultiplierSpec(MultiplierKind.COMPACT, 0.5, 1.0), cone, (1, 1, 0, 1), 3.0)


## ---------- Energy identity ---------- ##

def test_region_constructors():
    with pytest.raises(ValueError):
        energies.exterior_domain(1.0, 0.5, 4.0)
    with pytest.raises(ValueError):
        energies.exterior_domain(-2.0, 1.0, 4.0)
    cone = energies.backward_cone(3.0)
    assert cone.t1 == 3.0
    assert float(cone.r_hi(1.0)) == 2.0


def test_identity_on_zero_solution(zero_traj):
    mult = MultiplierSpec(MultiplierKind.EXTERIOR, 1.5)
    audit = energies.energy_identity_residual(zero_traj, mult, energies.time_slab(0.0, 2.0, 4.0))
    assert audit.residual == 0.0
    assert audit.bulk == 0.0


def test_identity_region_guard(zero_traj):
    mult = MultiplierSpec(MultiplierKind.CLASSICAL)
    with pytest.raises(ValueError):
        energies.energy_identity_residual(zero_traj, mult, energies.time_slab(0.0, 3.0, 4.0))
    with pytest.raises(ValueError):
        energies.energy_identity_residual(zero_traj, mult, energies.time_slab(0.0, 1.0, 9.0))


def test_classical_identity_balances():
    grid = RadialGrid.from_spacing(16.0, 1 / 32)
    traj = solver.evolve(solver.init_state(Gaussian(), grid), 3.0, grid.dt, P3, grid)
    audit = energies.energy_identity_residual(traj, MultiplierSpec(MultiplierKind.CLASSICAL),
                                              energies.time_slab(0.0, 3.0, 10.0))
    assert audit.residual < 0.05
    assert set(audit.pieces) == {'initial', 'final', 'inner', 'outer'}


@pytest.fixture(scope='module')
def audit_traj():
    grid = RadialGrid.from_spacing(32.0, 1 / 32)
    return solver.evolve(solver.init_state(Gaussian(), grid), 10.0, 4 * grid.dt, P3, grid, profile=Gaussian())


@pytest.mark.parametrize('mult, region', [
    (MultiplierSpec(MultiplierKind.RWEIGHTED, 1.5), energies.time_slab(0.0, 8.0, 16.0)),
    (MultiplierSpec(MultiplierKind.EXTERIOR, 1.5), energies.exterior_domain(-6.0, 0.0, 8.0)),
])
def test_weighted_identities_balance(audit_traj, mult, region):
    audit = energies.energy_identity_residual(audit_traj, mult, region)
    assert audit.residual < 1e-2


def test_compact_identity_balances():
    R = 4.0
    grid = RadialGrid.from_spacing(R, 1 / 32)
    traj = solver.evolve_compact(solver.init_state(Gaussian(), grid), 2.0, grid.dt, P3, grid, R)
    audit = energies.energy_identity_residual(traj, MultiplierSpec(MultiplierKind.COMPACT, 0.5, R),
                                              energies.backward_cone(0.9 * R, 1.8))
    assert audit.residual < 1e-2


def test_compact_region_guard():
    # the cone region must stay off the frozen nodes by the cone boundary
    R = 4.0
    grid = RadialGrid.from_spacing(R, 1 / 16)
    traj = solver.evolve_compact(solver.init_state(Gaussian(), grid), 2.0, grid.dt, P3, grid, R)
    with pytest.raises(ValueError):
        energies.energy_identity_residual(traj, MultiplierSpec(MultiplierKind.COMPACT, 0.5, R),
                                          energies.backward_cone(R, 1.8))


## ---------- Reports ---------- ##

def test_energy_report_frame(gaussian_traj, tmp_path):
    report = energies.energy_report(gaussian_traj, profile=Gaussian(), us=(0.5,), apexes=[(2.0, 1.0)])
    df = report.to_frame()
    assert list(df.columns[:6]) == energies.EnergyReport.COLUMNS
    assert len(df) == len(gaussian_traj)
    assert df['outgoing_u0.5'].isna().sum() == len(df) - 1
    assert np.isfinite(df['cone_t2_r1'].iloc[-1])
    report.write_csv(tmp_path / 'energy.csv')
    assert (tmp_path / 'energy.csv').exists()
