import numpy as np
import pytest

import nlwdecay.Solver as solver
import nlwdecay.Geometry as geometry
import nlwdecay.Conformal as conformal
from nlwdecay.Geometry import PowerParams, HyperboloidSpec
from nlwdecay.Solver import Gaussian, Zero, RadialGrid


SPEC = HyperboloidSpec()
P3 = PowerParams(3.0, 1.5)


def _interior_points(n=50, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 50, n)
    r = rng.uniform(0, 0.95, n) * geometry.hyperboloid_radius(t, SPEC)
    return t, r


@pytest.fixture(scope='module')
def linear_traj():
    grid = RadialGrid.from_spacing(16.0, 1 / 16)
    return solver.evolve(solver.init_state(Gaussian(), grid), 6.0, grid.dt, P3, grid, linear=True)


## ---------- The map ---------- ##

def test_origin_maps_to_axis():
    chart = conformal.forward_map(0.0, 0.0)
    assert chart.Lambda == pytest.approx(9.0)
    assert chart.t_tilde == pytest.approx(0.5)
    assert chart.r_tilde == 0.0


def test_round_trip():
    t, r = _interior_points()
    chart = conformal.forward_map(t, r)
    tb, rb = conformal.inverse_map(chart.t_tilde, chart.r_tilde)
    np.testing.assert_allclose(tb, t, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(rb, r, rtol=1e-10, atol=1e-10)


def test_image_lies_in_cone():
    t, r = _interior_points()
    chart = conformal.forward_map(t, r)
    assert np.all(chart.t_tilde > 0)
    assert np.all(chart.t_tilde + chart.r_tilde < SPEC.R_star)


def test_map_domains():
    r_edge = float(geometry.hyperboloid_radius(1.0, SPEC))
    with pytest.raises(ValueError):
        conformal.forward_map(1.0, 1.01 * r_edge)
    with pytest.raises(ValueError):
        conformal.forward_map(1.0, -0.5)
    with pytest.raises(ValueError):
        conformal.inverse_map(0.5, 0.4)


def test_jacobian():
    t, r = _interior_points(20)
    r = np.maximum(r, 0.5)
    err = conformal.jacobian_check(t, r, h=1e-4)
    assert np.max(err) < 1e-6


def test_weight_equivalence():
    t, r = _interior_points(200)
    eq = conformal.weight_equivalence_check(t, r)
    assert eq.identity_error < 1e-12
    assert 0 < eq.c1 <= eq.c2
    assert 0 < eq.c3 <= eq.c4
    assert eq.samples == 200
    with pytest.raises(ValueError):
        conformal.weight_equivalence_check(-0.5, 0.0)


## ---------- Transformed fields ---------- ##

def test_image_grid_nodes():
    image = conformal.ImageGrid(0.0, 1.0, 0.0, 0.5, 0.25)
    np.testing.assert_allclose(image.t_nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(image.r_nodes, [0.0, 0.25, 0.5])


def test_image_grid_for(linear_traj):
    image = conformal.image_grid_for(linear_traj, t_range=(0.55, 0.7), r_hi=0.04)
    assert image.h > 0
    assert image.r_lo == pytest.approx(3 * image.h)
    with pytest.raises(ValueError):
        conformal.image_grid_for(linear_traj, t_range=(0.55, 0.8), r_hi=0.1)


def test_transform_zero_field():
    grid = RadialGrid.from_spacing(8.0, 1 / 8)
    traj = solver.evolve(solver.init_state(Zero(), grid), 2.0, 0.5, P3, grid)
    image = conformal.ImageGrid(0.5, 0.7, 0.0, 0.02, 0.01)
    with pytest.warns(UserWarning):
        fld = conformal.transform_field(traj, image)
    assert fld.values.shape == (image.t_nodes.size, image.r_nodes.size)
    assert fld.valid.any() and not fld.valid.all()
    np.testing.assert_array_equal(fld.values[fld.valid], 0.0)
    assert np.isnan(fld.values[~fld.valid]).all()


def test_transform_scales_by_lambda(linear_traj):
    image = conformal.ImageGrid(0.55, 0.6, 0.0, 0.02, 0.01)
    fld = conformal.transform_field(linear_traj, image)
    t, r = conformal.inverse_map(0.55, 0.01)
    expected = ((t + SPEC.t_shift)**2 - r**2) * linear_traj.interpolator.phi(t, r)
    assert fld.values[0, 1] == pytest.approx(float(expected))


def test_linear_residual_small(linear_traj):
    image = conformal.image_grid_for(linear_traj, t_range=(0.55, 0.7), r_hi=0.04)
    res = conformal.conformal_residual(linear_traj, image)
    assert res.points > 0
    assert res.max_rel < 0.1


def test_nonlinear_residual_converges():
    residuals = []
    for dr in (1 / 32, 1 / 64):
        grid = RadialGrid.from_spacing(16.0, dr)
        traj = solver.evolve(solver.init_state(Gaussian(), grid), 6.0, 4 * grid.dt, P3, grid, profile=Gaussian())
        image = conformal.image_grid_for(traj, (0.55, 0.7), 0.04)
        residuals.append(conformal.conformal_residual(traj, image).max_rel)
    assert residuals[0] / residuals[1] >= 3.0


def test_write_transformed(tmp_path):
    grid = RadialGrid.from_spacing(8.0, 1 / 8)
    traj = solver.evolve(solver.init_state(Zero(), grid), 2.0, 0.5, P3, grid)
    image = conformal.ImageGrid(0.5, 0.7, 0.0, 0.02, 0.01)
    with pytest.warns(UserWarning):
        fld = conformal.transform_field(traj, image)
    path = conformal.write_transformed(fld, tmp_path / 'image.bin', P3)
    with open(path, 'rb') as fh:
        info, psi, _ = solver.read_snapshot(fh)
    assert info['image']
    assert info['t'] == pytest.approx(0.5)
    assert psi.size == image.r_nodes.size


## ---------- Energy transport ---------- ##

def test_hyperboloid_image_energy():
    grid = RadialGrid.from_spacing(16.0, 1 / 32)
    traj = solver.evolve(solver.init_state(Gaussian(), grid), 4.0, 0.25, P3, grid)
    value, ratio = conformal.hyperboloid_image_energy(traj)
    assert value > 0
    assert np.isfinite(ratio) and ratio > 0
    zero = solver.evolve(solver.init_state(Zero(), grid), 1.0, 0.25, P3, grid)
    value, ratio = conformal.hyperboloid_image_energy(zero)
    assert value == 0.0
    assert np.isnan(ratio)
