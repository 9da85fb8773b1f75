import numpy as np
import pytest
from scipy.integrate import quad

import nlwdecay
import nlwdecay.Geometry as geometry
from nlwdecay.Geometry import PowerParams, Regime, HyperboloidSpec


def test_package_reexports_classes():
    assert nlwdecay.PowerParams is PowerParams
    assert nlwdecay.HyperboloidSpec is HyperboloidSpec
    assert nlwdecay.CommutedField.__module__ == 'nlwdecay.Energies'


## ---------- Exponents ---------- ##

def test_power_params_regimes():
    assert PowerParams(4.0, 1.5).regime is Regime.SUPER
    assert PowerParams(2.4, 1.3).regime is Regime.SUB
    assert PowerParams(3.0, 1.5).regime is Regime.SUPER


def test_epsilon_default_inside_interval():
    params = PowerParams(3.0, 1.5)
    assert params.epsilon == pytest.approx(0.025)
    assert 0 < params.epsilon < (params.gamma0 - 1) / 10


@pytest.mark.parametrize('p, gamma0, epsilon', [
    (5.0, 1.5, None),
    (0.5, 1.2, None),
    (2.4, 1.5, None),      # gamma0 >= p - 1
    (2.8, 1.2, None),      # below 4/(p-1) - 1 above the threshold
    (3.0, 1.5, 0.05),      # epsilon not below (gamma0-1)/10
])
def test_power_params_rejects(p, gamma0, epsilon):
    with pytest.raises(ValueError):
        PowerParams(p, gamma0, epsilon)


def test_power_violations_lists_everything():
    issues = geometry.power_violations(3.0, 2.5, 1.0)
    assert len(issues) == 2
    assert any("epsilon" in msg for msg in issues)
    assert len(geometry.power_violations(3.0, 1.5, 0.2)) == 1


## ---------- Weights ---------- ##

def test_null_weights_values():
    w = geometry.null_weights(3.0, 1.0)
    assert w.u == 1.0 and w.v == 2.0
    assert w.u_plus == pytest.approx(np.sqrt(2))
    assert w.v_plus == pytest.approx(np.sqrt(5))


def test_null_weights_rejects_negative_radius():
    with pytest.raises(ValueError):
        geometry.null_weights(1.0, -0.1)


def test_interior_region():
    assert geometry.interior_region_contains(0.0, 2.0)
    assert not geometry.interior_region_contains(0.0, 2.5)
    with pytest.raises(ValueError):
        geometry.interior_region_contains(-1.0, 0.0)


def test_compact_cone_weights():
    w = geometry.compact_cone_weights(2.0, 0.5, 0.5)
    assert w.u_star == 2.0 and w.v_star == 1.0
    assert w.Lambda_cc == pytest.approx(0.5)
    outside = geometry.compact_cone_weights(2.0, 1.5, 1.0)
    assert np.isinf(outside.Lambda_cc)


## ---------- Hyperboloid ---------- ##

def test_hyperboloid_radius_and_slope():
    spec = HyperboloidSpec()
    t = np.array([0.0, 1.0, 5.0])
    r = geometry.hyperboloid_radius(t, spec)
    ts = t + spec.t_shift
    np.testing.assert_allclose(ts**2 - r**2, spec.kappa * ts, rtol=1e-12)
    h = 1e-6
    fd = (geometry.hyperboloid_radius(t + h, spec) - geometry.hyperboloid_radius(t - h, spec)) / (2 * h)
    np.testing.assert_allclose(geometry.hyperboloid_slope(t, spec), fd, rtol=1e-7)


def test_hyperboloid_interior():
    spec = HyperboloidSpec()
    r = geometry.hyperboloid_radius(1.0, spec)
    assert geometry.in_hyperboloid_interior(1.0, 0.99 * r, spec)
    assert not geometry.in_hyperboloid_interior(1.0, 1.01 * r, spec)
    with pytest.raises(ValueError):
        geometry.hyperboloid_radius(-2.8, spec)


## ---------- Quadrature ---------- ##

def test_composite_gauss_exact_for_cubics():
    x, w = geometry.composite_gauss(0.0, 2.0, 3, order=2)
    assert np.sum(w * x**3) == pytest.approx(4.0, rel=1e-13)


def test_sphere_integral_smooth():
    res = geometry.sphere_integral(np.exp, order=16)
    assert res.converged
    assert res.value == pytest.approx(np.e - 1 / np.e, rel=1e-13)


def test_sphere_integral_endpoint_singularity():
    def f(s):
        return (1 - s)**-0.5
    res = geometry.sphere_integral(f, refine="hi")
    assert res.intervals > 1
    assert res.value == pytest.approx(2 * np.sqrt(2), rel=1e-3)


def test_sphere_integral_bad_mode():
    with pytest.raises(ValueError):
        geometry.sphere_integral(np.exp, refine='middle')


## ---------- Backward cones ---------- ##

def test_cone_point_on_axis_and_apex():
    r, tau = geometry.cone_point(2.0, 0.0, 0.3)
    assert r == pytest.approx(2.0)
    # the cone through the origin
    r, tau = geometry.cone_point(1.0, 1.0, 1.0)
    assert r == 0.0 and tau == 1.0


def test_cone_geometry_volume():
    # sum of the cone measure is the ball volume 4/3 pi t0^3
    cone = geometry.cone_geometry((2.0, 1.0), n_r=8, n_s=8)
    assert np.sum(cone.measure) == pytest.approx(4 / 3 * np.pi * 8.0, rel=1e-12)
    np.testing.assert_allclose(cone.t, 2.0 - cone.rt)


def test_cone_geometry_sphere_average():
    # mean of r^2 over the sphere of radius rt about distance r0 is r0^2 + rt^2
    cone = geometry.cone_geometry((1.5, 2.0), n_r=4, n_s=8)
    mean = np.sum(cone.s_weights[None, :] * cone.r**2, axis=1) / 2
    np.testing.assert_allclose(mean, 4.0 + cone.rt**2, rtol=1e-12)


def test_cone_geometry_rejects():
    with pytest.raises(ValueError):
        geometry.cone_geometry((-1.0, 0.0))
    with pytest.raises(ValueError):
        geometry.cone_geometry((1.0, 0.0), rt=np.array([2.0]))


def test_quadrature_matches_scipy():
    val, _ = quad(lambda s: np.cos(3 * s), -1, 1)
    assert geometry.sphere_integral(lambda s: np.cos(3 * s), order=32).value == pytest.approx(val, rel=1e-12)
