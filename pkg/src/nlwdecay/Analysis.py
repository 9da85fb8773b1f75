# nlwdecay packages
import nlwdecay.Utils as utils
import nlwdecay.Solver as solver
import nlwdecay.Geometry as geometry
import nlwdecay.Energies as energies
from nlwdecay.Geometry import Regime

# stats packages
import numpy as np
from scipy.optimize import bisect
from scipy.integrate import trapezoid, cumulative_trapezoid

# miscellaneous packages
import warnings
from dataclasses import dataclass, field


## ---------- Exponents ---------- ##

def alpha_p(p):
    if not (utils.P_MIN < p < utils.P_MAX):
        raise ValueError(f"alpha_p needs 1 < p < 5, got p={p}")
    return (3 + (p - 2)**2) / ((p + 1) * (5 - p))


def scattering_f(p):
    # positive exactly where the mixed norm argument closes
    return p - 2 + (p - 1)**2 * alpha_p(p) - 1


def sign_changes(f, lo, hi, step=1e-3):
    x = np.arange(lo, hi + step / 2, step)
    vals = np.sign([f(xx) for xx in x])
    vals = vals[vals != 0]
    return int(np.sum(vals[1:] != vals[:-1]))


def scattering_threshold(lo=2.0, hi=3.0, xtol=1e-8):
    """Root p* of scattering_f on [lo, hi] by bisection."""
    if np.sign(scattering_f(lo)) == np.sign(scattering_f(hi)):
        raise ValueError(f"scattering_f does not change sign on [{lo}, {hi}]")
    return bisect(scattering_f, lo, hi, xtol=xtol)


def theorem_exponents(params, region='interior'):
    """(a, b) of the pointwise bound |phi| <~ v+^{-a} u+^{-b}."""
    if region not in ('interior', 'exterior'):
        raise ValueError(f"region must be 'interior' or 'exterior', got {region!r}")
    p, g0 = params.p, params.gamma0
    if params.regime is Regime.SUPER:
        return 1.0, (g0 - 1) / 2
    if region == 'interior':
        return alpha_p(p) * g0, g0 / (p + 1)
    return alpha_p(p) * g0, (p - 1) * g0 / (p + 1)


## ---------- Decay fits ---------- ##

@dataclass(frozen=True)
class Window:
    """Sampling window for decay fits, n_t times in [t_lo, t_hi].

    The outgoing lines u = const in `null_bands` carry the v+ decay, the
    fixed radii in `radii` (near the axis, past the transient) carry the
    u+ decay once a is known.
    """
    t_lo: float = 10.0
    t_hi: float = 80.0
    null_bands: tuple = (0.5, 1.0, 1.5)
    radii: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    n_t: int = 64

    def __post_init__(self):
        if not (0 <= self.t_lo < self.t_hi):
            raise ValueError(f"need 0 <= t_lo < t_hi, got [{self.t_lo}, {self.t_hi}]")
        if len(self.null_bands) == 0 or len(self.radii) == 0 or self.n_t < 2:
            raise ValueError("a window needs null bands, radii and at least two sample times")
        if min(self.null_bands) < 0 or min(self.radii) < 0:
            raise ValueError("null bands and radii must be nonnegative")

    @classmethod
    def after_transient(cls, diameter, t_hi, **kwargs):
        # skip t < 4 x data diameter
        return cls(t_lo=4 * diameter, t_hi=t_hi, **kwargs)

    def points(self):
        """(t, r, band, along_null) for every sample; band indexes the
        null bands first, then the radii."""
        t = np.linspace(self.t_lo, self.t_hi, self.n_t)
        u = np.asarray(self.null_bands, dtype=float)
        rad = np.asarray(self.radii, dtype=float)
        Tn, U = np.meshgrid(t, u, indexing='ij')
        Tr, Rr = np.meshgrid(t, rad, indexing='ij')
        bn = np.broadcast_to(np.arange(u.size), Tn.shape)
        br = np.broadcast_to(u.size + np.arange(rad.size), Tr.shape)
        T = np.concatenate([Tn.ravel(), Tr.ravel()])
        R = np.concatenate([(Tn - 2 * U).ravel(), Rr.ravel()])
        band = np.concatenate([bn.ravel(), br.ravel()])
        null = np.concatenate([np.ones(Tn.size, dtype=bool), np.zeros(Tr.size, dtype=bool)])
        keep = (R >= 0) & (R <= T)
        return T[keep], R[keep], band[keep], null[keep]

    def region(self):
        t, r, _, _ = self.points()
        return 'interior' if np.all(geometry.interior_region_contains(t, r)) else 'exterior'

    def describe(self):
        return (f"null bands {list(self.null_bands)} and radii {list(self.radii)} "
                f"over t in [{self.t_lo:g}, {self.t_hi:g}]")


@dataclass(frozen=True)
class DecayFit:
    log_C: float
    a: float
    b: float
    residual: float
    samples: int
    v_decades: float
    window: str
    reliable: bool


def _lstsq(A, y, what):
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        warnings.warn(f"the {what} design is rank deficient, its exponent is not identified")
    return coef, A @ coef - y


def fit_samples(t, r, values, band, along_null, window='samples', floor=utils.FIT_FLOOR):
    """Fit of log|phi| = log C - a log v+ - b log u+ in two stages.

    a is the common v+ slope along the null bands, each band with its own
    intercept so the profile across u drops out. With a fixed, log C and b
    come from the fixed-radius samples. The residual is the rms over both.
    """
    t, r, values = (np.asarray(x, dtype=float).ravel() for x in (t, r, values))
    band = np.asarray(band).ravel()
    along_null = np.asarray(along_null, dtype=bool).ravel()
    keep = np.isfinite(values) & (np.abs(values) >= floor)
    if keep.sum() < utils.FIT_MIN_SAMPLES:
        raise ValueError(f"decay fit needs at least {utils.FIT_MIN_SAMPLES} samples above the floor, got {int(keep.sum())}")
    w = geometry.null_weights(t, r)
    lv, lu = np.log(np.asarray(w.v_plus)), np.log(np.asarray(w.u_plus))
    y = np.log(np.abs(np.where(keep, values, 1.0)))
    decades = float((lv[keep].max() - lv[keep].min()) / np.log(10))
    if decades < 1 - 1e-6:
        raise ValueError(f"decay fit needs one decade in v+, the samples span {decades:.3g}")
    on_null, on_radius = keep & along_null, keep & ~along_null
    if on_null.sum() < 3 or on_radius.sum() < 3:
        raise ValueError("decay fit needs samples above the floor on both the null bands and the radii")
    labels, idx = np.unique(band[on_null], return_inverse=True)
    A = np.column_stack([np.eye(labels.size)[idx], -lv[on_null]])
    coef, res_null = _lstsq(A, y[on_null], 'null band')
    a = float(coef[-1])
    B = np.column_stack([np.ones(int(on_radius.sum())), -lu[on_radius]])
    coef, res_rad = _lstsq(B, y[on_radius] + a * lv[on_radius], 'fixed radius')
    resid = float(np.sqrt(np.mean(np.concatenate([res_null, res_rad])**2)))
    reliable = resid <= utils.FIT_MAX_RESIDUAL
    if not reliable:
        warnings.warn(f"unreliable decay fit over {window}: rms log-residual {resid:.3g}")
    return DecayFit(float(coef[0]), a, float(coef[1]), resid, int(keep.sum()), decades, window, reliable)


def fit_decay(traj, window=Window()):
    t, r, band, null = window.points()
    inside = (t <= traj.T) & (r <= traj.grid.r_max)
    if not inside.all():
        warnings.warn(f"{int((~inside).sum())} window samples fall outside the trajectory and are dropped")
    t, r, band, null = t[inside], r[inside], band[inside], null[inside]
    return fit_samples(t, r, traj.interpolator.phi(t, r), band, null, window.describe())


@dataclass(frozen=True)
class TheoremComparison:
    a_theory: float
    b_theory: float
    da: float
    db: float
    two_sided: bool
    passed: bool
    pointwise_reference: float


def theorem_compare(fit, params, region='interior', tol=0.15):
    """Signed deviations from the theorem's exponents.

    Above the conformal-decay threshold the linear rate is sharp, so a must
    match to within tol. Below it the theorem is an upper bound only and a
    needs to be at least a_theory - tol. Unreliable fits never pass.
    """
    a_th, b_th = theorem_exponents(params, region)
    da, db = fit.a - a_th, fit.b - b_th
    two_sided = params.regime is Regime.SUPER
    ok = abs(da) <= tol if two_sided else da >= -tol
    return TheoremComparison(a_th, b_th, da, db, two_sided, bool(ok and fit.reliable),
                             energies.pecher_pointwise_exponent(params.p))


## ---------- Representation formula ---------- ##

@dataclass(frozen=True)
class RepresentationCheck:
    reconstructed: float
    solver: float
    discrepancy: float
    linear_part: float
    nonlinear_part: float


def _spherical_mean(f, r0, radius, s, w):
    r, _ = geometry.cone_point(r0, radius, s)
    return 2 * np.pi * float(np.sum(w * f(np.asarray(r))))


def _mean_rate(prof, r0, t0, s, w):
    # d/dt0 of the sphere integral of prof over radius t0
    try:
        r, tau = geometry.cone_point(r0, t0, s)
        return 2 * np.pi * float(np.sum(w * prof.derivative(np.asarray(r)) * np.asarray(tau)))
    except NotImplementedError:
        h = 1e-4 * t0
        return (_spherical_mean(prof, r0, t0 + h, s, w) - _spherical_mean(prof, r0, t0 - h, s, w)) / (2 * h)


def representation_check(traj, apex, profile=None, n_r=utils.QUAD_ORDER, n_s=utils.QUAD_ORDER, linear=None):
    """Kirchhoff reconstruction of phi at the apex.

    4 pi phi(q) = t0 M[phi1] + d/dt0 (t0 M[phi0]) - int over the backward
    cone of |phi|^{p-1} phi r~ dr~ domega~, with M the sphere integral over
    radius t0. The data means are exact; the cone term uses the trajectory.
    """
    if traj.compact:
        raise ValueError("the representation formula applies to full-space trajectories only")
    linear = traj.linear if linear is None else linear
    if profile is None:
        if traj.metadata.get('profile') is None:
            raise ValueError("trajectory carries no data profile; pass one explicitly")
        profile = solver.data_from_description(traj.metadata['profile'])
    data = solver.as_data(profile)
    t0, r0 = float(apex[0]), float(apex[1])
    energies._apex_guard(traj, t0, r0)
    sol = float(traj.interpolator.phi_cubic(t0, r0))
    if t0 == 0:
        val = float(data.position(r0))
        return RepresentationCheck(val, sol, abs(val - sol) / max(abs(sol), 1e-8), val, 0.0)
    s, w = geometry.gauss_legendre(n_s)
    M0 = _spherical_mean(data.position, r0, t0, s, w)
    M1 = _spherical_mean(data.velocity, r0, t0, s, w)
    lin = t0 * M1 + M0 + t0 * _mean_rate(data.position, r0, t0, s, w)
    nonlin = 0.0
    if not linear:
        cone = geometry.cone_geometry((t0, r0), n_r, n_s)
        tt = np.broadcast_to(cone.t[:, None], cone.r.shape)
        phi = traj.interpolator.phi_cubic(tt, cone.r)
        p = traj.params.p
        weight = 2 * np.pi * (cone.rt_weights * cone.rt)[:, None] * cone.s_weights[None, :]
        nonlin = float(np.sum(np.abs(phi)**(p - 1) * phi * weight))
    rec = (lin - nonlin) / (4 * np.pi)
    return RepresentationCheck(rec, sol, abs(rec - sol) / max(abs(sol), 1e-8),
                               lin / (4 * np.pi), nonlin / (4 * np.pi))


## ---------- Scattering ---------- ##

def mixed_norm(traj, p=None, cumulative=False):
    """int_0^T (int |phi|^{2p} dx)^{1/2} dt, the p-th power of the
    L^p_t L^{2p}_x norm over the trajectory."""
    p = traj.params.p if p is None else p
    r, dr = traj.grid.r, traj.grid.dr
    inner = np.sqrt(4 * np.pi * trapezoid(np.abs(traj.phi)**(2 * p) * r**2, dx=dr, axis=1))
    if len(traj) == 1:
        return np.zeros(1) if cumulative else 0.0
    if cumulative:
        return cumulative_trapezoid(inner, traj.times, initial=0.0)
    return float(trapezoid(inner, traj.times))


@dataclass(frozen=True)
class ScatteringReport:
    p_star: float
    f_at_root: float
    bracket_ok: bool
    sign_changes: int
    mixed_norm_partial: float = np.nan
    converged: bool = None
    series: np.ndarray = field(default=None, repr=False)


def scattering_report(traj=None, p=None, saturation=0.1):
    """p* with its bracket check and, given a trajectory, the mixed-norm
    accumulator; it counts as converged when the second half of [0, T]
    adds less than `saturation` of the total."""
    p_star = scattering_threshold()
    bracket = 2.3541 < p_star < 2.3542
    changes = sign_changes(scattering_f, 2.0, 3.0)
    if traj is None:
        return ScatteringReport(p_star, scattering_f(p_star), bracket, changes)
    series = mixed_norm(traj, p, cumulative=True)
    total = float(series[-1])
    half = float(np.interp(traj.T / 2, traj.times, series))
    converged = bool(total == 0 or (total - half) < saturation * total)
    return ScatteringReport(p_star, scattering_f(p_star), bracket, changes, total, converged, series)
