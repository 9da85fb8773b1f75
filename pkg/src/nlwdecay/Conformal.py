# nlwdecay packages
import nlwdecay.Solver as solver
import nlwdecay.Energies as energies
import nlwdecay.Geometry as geometry
from nlwdecay.Geometry import HyperboloidSpec

# stats packages
import numpy as np

# miscellaneous packages
import warnings
from dataclasses import dataclass, field


## ---------- The map ---------- ##

@dataclass(frozen=True)
class ConformalChart:
    t: np.ndarray
    r: np.ndarray
    R_star: float
    t_star: np.ndarray
    Lambda: np.ndarray
    t_tilde: np.ndarray
    r_tilde: np.ndarray
    u_star_img: np.ndarray
    v_star_img: np.ndarray


def forward_map(t, r, spec=HyperboloidSpec()):
    """Phi: (t, r) -> (t~, r~) = (R* - t*/Lambda, r/Lambda), Lambda = (t*)^2 - r^2."""
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    if not np.all(geometry.in_hyperboloid_interior(t, r, spec)):
        raise ValueError("points outside the hyperboloid interior D cannot be mapped")
    ts = spec.t_star(t)
    lam = ts**2 - r**2
    tt = spec.R_star - ts / lam
    rt = r / lam
    out = (t, r, spec.R_star, ts, lam, tt, rt, spec.R_star - tt + rt, spec.R_star - tt - rt)
    return ConformalChart(*(x if isinstance(x, float) else geometry._scalar(x) for x in out))


def inverse_map(t_tilde, r_tilde, spec=HyperboloidSpec()):
    tt, rt = np.broadcast_arrays(np.asarray(t_tilde, dtype=float), np.asarray(r_tilde, dtype=float))
    a = spec.R_star - tt
    if np.any(rt < 0) or np.any(a <= rt):
        raise ValueError(f"points outside the image cone t~ + r~ < R*={spec.R_star:g} cannot be mapped back")
    lam = 1 / (a**2 - rt**2)
    return geometry._scalar(a * lam - spec.t_shift), geometry._scalar(rt * lam)


def jacobian_check(t, r, h=1e-4, spec=HyperboloidSpec()):
    """Relative deviation of the finite-difference volume factor of Phi,
    det(d(t~, r~)/d(t, r)) (r~/r)^2, from Lambda^{-4}."""
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))

    def img(tq, rq):
        c = forward_map(tq, rq, spec)
        return np.asarray(c.t_tilde), np.asarray(c.r_tilde)
    tp, rp = img(t + h, r)
    tm, rm = img(t - h, r)
    tq, rq = img(t, r + h)
    tn, rn = img(t, r - h)
    det = ((tp - tm) * (rq - rn) - (tq - tn) * (rp - rm)) / (4 * h**2)
    c = forward_map(t, r, spec)
    lam = np.asarray(c.Lambda)
    vol = np.abs(det) * (np.asarray(c.r_tilde) / r)**2
    return geometry._scalar(np.abs(vol * lam**4 - 1))


@dataclass(frozen=True)
class WeightEquivalence:
    c1: float
    c2: float
    c3: float
    c4: float
    identity_error: float
    samples: int


def weight_equivalence_check(t, r, spec=HyperboloidSpec()):
    """Empirical constants with c1/u+ <= R*-t~ <= c2/u+ and c3/v+ <= R*-t~-r~ <= c4/v+."""
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(t < 0):
        raise ValueError("weight equivalences are checked on t >= 0 only")
    c = forward_map(t, r, spec)
    w = geometry.null_weights(t, r)
    first = (spec.R_star - np.asarray(c.t_tilde)) * np.asarray(w.u_plus)
    second = np.asarray(c.v_star_img) * np.asarray(w.v_plus)
    exact = 1 / (np.asarray(c.t_star) + r)
    err = np.max(np.abs(np.asarray(c.v_star_img) / exact - 1))
    return WeightEquivalence(float(first.min()), float(first.max()), float(second.min()),
                             float(second.max()), float(err), int(t.size))


## ---------- Transformed fields ---------- ##

@dataclass(frozen=True)
class ImageGrid:
    t_lo: float
    t_hi: float
    r_lo: float
    r_hi: float
    h: float

    @property
    def t_nodes(self):
        return self.t_lo + self.h * np.arange(int(np.floor((self.t_hi - self.t_lo) / self.h + 1e-9)) + 1)

    @property
    def r_nodes(self):
        return self.r_lo + self.h * np.arange(int(np.floor((self.r_hi - self.r_lo) / self.h + 1e-9)) + 1)


def image_grid_for(traj, t_range=(0.55, 0.75), r_hi=0.05, scale=1.0, margin=3, spec=HyperboloidSpec()):
    """Image grid whose spacing maps to at most `scale` source cells.

    The spacing is dr times the smallest radial stretch dr~/dr over the box,
    and the inner edge keeps `margin` cells off the axis.
    """
    t_lo, t_hi = t_range
    tt, rr = np.meshgrid(np.linspace(t_lo, t_hi, 9), np.linspace(0.0, r_hi, 9), indexing='ij')
    if np.any(tt + rr >= spec.R_star):
        raise ValueError(f"image box reaches the cone t~ + r~ = R*={spec.R_star:g}")
    t, r = inverse_map(tt, rr, spec)
    ts = np.asarray(t) + spec.t_shift
    lam = ts**2 - np.asarray(r)**2
    stretch = (ts**2 + np.asarray(r)**2) / lam**2
    h = scale * traj.grid.dr * float(stretch.min())
    return ImageGrid(t_lo, t_hi, margin * h, r_hi, h)


@dataclass(frozen=True)
class TransformedField:
    t_tilde: np.ndarray
    r_tilde: np.ndarray
    values: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    Lambda: np.ndarray = field(repr=False)


def transform_field(traj, image, spec=HyperboloidSpec(), method='linear'):
    """phi~ = Lambda phi at the preimages of the image grid nodes.

    phi is interpolated bilinearly by default; method='cubic' uses the
    Lagrange/Hermite interpolant. Nodes whose preimage is outside the
    trajectory are flagged invalid and hold NaN.
    """
    tn, rn = image.t_nodes, image.r_nodes
    TT, RR = np.meshgrid(tn, rn, indexing='ij')
    t, r = (np.asarray(x) for x in inverse_map(TT, RR, spec))
    lam = (t + spec.t_shift)**2 - r**2
    valid = (t >= 0) & (t <= traj.T) & (r <= traj.grid.r_max)
    vals = np.full(TT.shape, np.nan)
    if valid.any():
        interp = traj.interpolator
        sample = interp.phi_cubic if method == 'cubic' else interp.phi
        vals[valid] = lam[valid] * sample(t[valid], r[valid])
    if not valid.all():
        warnings.warn(f"{int((~valid).sum())} image nodes have preimages outside the trajectory")
    return TransformedField(tn, rn, vals, valid, lam)


@dataclass(frozen=True)
class ConformalResidual:
    max_abs: float
    max_rel: float
    scale: float
    points: int
    excluded: int


def conformal_residual(traj, image, spec=HyperboloidSpec(), collar=None, linear=None):
    """Max-norm residual of phi~_tt - lap~ phi~ + Lambda^{3-p}|phi~|^{p-1}phi~
    by centered differences on the image grid; the collar v*~ < collar is left out."""
    collar = 0.02 * spec.R_star if collar is None else collar
    linear = traj.linear if linear is None else linear
    p = traj.params.p
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        fld = transform_field(traj, image, spec, method='cubic')
    f, h = fld.values, image.h
    if f.shape[0] < 3 or f.shape[1] < 3:
        raise ValueError("image grid needs at least 3 nodes per direction")
    tc = fld.t_tilde[1:-1, None]
    rc = fld.r_tilde[None, 1:-1]
    center = f[1:-1, 1:-1]
    f_tt = (f[2:, 1:-1] - 2 * center + f[:-2, 1:-1]) / h**2
    f_rr = (f[1:-1, 2:] - 2 * center + f[1:-1, :-2]) / h**2
    f_r = (f[1:-1, 2:] - f[1:-1, :-2]) / (2 * h)
    lap = f_rr + 2 / rc * f_r
    if linear:
        nonlin = np.zeros_like(center)
    else:
        lam_cc = 1 / ((spec.R_star - tc)**2 - rc**2)
        nonlin = lam_cc**(3 - p) * np.abs(center)**(p - 1) * center
    res = f_tt - lap + nonlin
    ok = np.isfinite(res) & (spec.R_star - tc - rc >= collar)
    excluded = int(ok.size - ok.sum())
    if not ok.any():
        raise ValueError("no image node with a valid stencil outside the collar")
    scale = float(np.max((np.abs(f_tt) + np.abs(lap) + np.abs(nonlin))[ok]))
    max_abs = float(np.max(np.abs(res[ok])))
    return ConformalResidual(max_abs, max_abs / scale if scale > 0 else 0.0, scale, int(ok.sum()), excluded)


def write_transformed(fld, path, params=None):
    """One snapshot per image time, in the solver's binary format with the image flag."""
    with open(path, 'wb') as fh:
        for k, tt in enumerate(fld.t_tilde):
            row = fld.values[k]
            solver.write_snapshot(fh, tt, row, np.zeros_like(row), 0.0 if len(fld.r_tilde) < 2 else
                                  float(fld.r_tilde[1] - fld.r_tilde[0]), 0.0, params, image=True)
    return path


## ---------- Energy transport ---------- ##

def hyperboloid_image_energy(traj, gamma=None, spec=HyperboloidSpec(), t_extent=None, order=4):
    """Part of the compactified weighted energy carried by the image of H+,
    as a ratio to the weighted data norm E_{0,gamma0}.

    gamma defaults to 2 - gamma0 + epsilon. Only the t >= 0 part of H is
    available from a forward trajectory.
    """
    params = traj.params
    gamma = 2 - params.gamma0 + params.epsilon if gamma is None else gamma
    t_end = traj.T if t_extent is None else min(float(t_extent), traj.T)
    if geometry.hyperboloid_radius(t_end, spec) > traj.grid.r_max:
        raise ValueError(f"the hyperboloid leaves the grid before t={t_end:g}")
    t, w = geometry.composite_gauss(0.0, t_end, max(16, int(np.ceil(t_end / traj.grid.dr))), order)
    r = np.asarray(geometry.hyperboloid_radius(t, spec))
    ts = t + spec.t_shift
    lam = spec.kappa * ts
    phi, phi_t, phi_r = traj.interpolator.values(t, r)
    L_lam = lam * (phi_t + phi_r) + 2 * (ts - r) * phi
    Lbar_lam = lam * (phi_t - phi_r) + 2 * (ts + r) * phi
    dens = ((ts + r)**(4 - gamma) * L_lam**2 + (ts - r)**4 * Lbar_lam**2 + (lam * phi)**2
            + (ts + r)**(3 - params.p - gamma) * np.abs(lam * phi)**(params.p + 1))
    # dx~ = Lambda^{-2} r dt domega / (2 t*) along H
    value = 4 * np.pi * float(np.sum(w * dens * r / (2 * lam**2 * ts)))
    E0 = energies.weighted_initial_energy(traj.snapshot(0), params, traj.grid, 0)
    return value, value / E0 if E0 > 0 else np.nan
