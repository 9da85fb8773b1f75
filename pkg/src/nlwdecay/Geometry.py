# nlwdecay packages
import nlwdecay.Utils as utils

# stats packages
import numpy as np
from scipy.special import roots_legendre

# miscellaneous packages
import enum
import warnings
from functools import lru_cache
from dataclasses import dataclass, field


## ---------- Exponents ---------- ##

class Regime(enum.Enum):
    SUPER = 'super'
    SUB = 'sub'


def power_violations(p, gamma0, epsilon=None):
    # every broken constraint, so config
    # validation can report them all at once
    issues = []
    if not (utils.P_MIN < p < utils.P_MAX):
        issues.append(f"p={p} must lie in ({utils.P_MIN:g}, {utils.P_MAX:g})")
        return issues
    if not (1 < gamma0 < min(2, p - 1)):
        issues.append(f"gamma0={gamma0} must lie in (1, min(2, p-1)={min(2, p - 1):g})")
    elif p > utils.SUPER_THRESHOLD and gamma0 <= max(4 / (p - 1) - 1, 1):
        issues.append(f"gamma0={gamma0} must exceed {max(4 / (p - 1) - 1, 1):g} for p={p} above the conformal-decay threshold")
    if epsilon is not None and gamma0 > 1 and not (0 < epsilon < (gamma0 - 1) / 10):
        issues.append(f"epsilon={epsilon} must lie in (0, (gamma0-1)/10={(gamma0 - 1) / 10:g})")
    return issues


@dataclass(frozen=True)
class PowerParams:
    """Nonlinearity power p, data weight gamma0 and the spacetime slack epsilon.

    epsilon defaults to (gamma0 - 1)/20, inside the open admissible interval.
    """
    p: float
    gamma0: float
    epsilon: float = None

    def __post_init__(self):
        if self.epsilon is None:
            object.__setattr__(self, 'epsilon', (self.gamma0 - 1) / 20)
        issues = power_violations(self.p, self.gamma0, self.epsilon)
        if len(issues) > 0:
            raise ValueError("; ".join(issues))

    @property
    def regime(self):
        return Regime.SUPER if self.p > utils.SUPER_THRESHOLD else Regime.SUB

    def as_dict(self):
        return {'p': self.p, 'gamma0': self.gamma0, 'epsilon': self.epsilon}


## ---------- Null coordinates ---------- ##

def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class NullWeights:
    t: np.ndarray
    r: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_plus: np.ndarray
    v_plus: np.ndarray


def null_weights(t, r):
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError(f"radius must be nonnegative, got min r={r.min()}")
    u = (t - r) / 2
    v = (t + r) / 2
    return NullWeights(_scalar(t), _scalar(r), _scalar(u), _scalar(v),
                       _scalar(np.sqrt(1 + u**2)), _scalar(np.sqrt(1 + v**2)))


def interior_region_contains(t, r):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("the interior region is only defined for t >= 0")
    out = (t - np.asarray(r, dtype=float)) / 2 >= -1
    return bool(out) if out.ndim == 0 else out


## ---------- Compact cone ---------- ##

@dataclass(frozen=True)
class CompactConeWeights:
    R: float
    t: np.ndarray
    r: np.ndarray
    u_star: np.ndarray
    v_star: np.ndarray
    Lambda_cc: np.ndarray


def compact_cone_weights(R, t, r):
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError(f"radius must be nonnegative, got min r={r.min()}")
    u_star = R - t + r
    v_star = R - t - r
    prod = u_star * v_star
    with np.errstate(divide='ignore'):
        lam = np.where(prod > 0, 1 / np.where(prod > 0, prod, 1.0), np.inf)
    return CompactConeWeights(R, _scalar(t), _scalar(r), _scalar(u_star), _scalar(v_star), _scalar(lam))


## ---------- Hyperboloid ---------- ##

@dataclass(frozen=True)
class HyperboloidSpec:
    # H = {(t*)^2 - r^2 = kappa t*} with kappa = 1/R_star,
    # the level whose conformal image is the slice {t~ = 0}
    R_star: float = utils.R_STAR
    t_shift: float = utils.T_SHIFT

    @property
    def kappa(self):
        return 1 / self.R_star

    def t_star(self, t):
        return np.asarray(t, dtype=float) + self.t_shift


def hyperboloid_radius(t, spec=HyperboloidSpec()):
    ts = spec.t_star(t)
    q = ts**2 - spec.kappa * ts
    if np.any(q < -1e-12 * np.maximum(ts**2, 1)):
        raise ValueError(f"no point of the hyperboloid at t={t}: (t*)^2 < kappa t*")
    return _scalar(np.sqrt(np.maximum(q, 0)))


def hyperboloid_slope(t, spec=HyperboloidSpec()):
    # dr/dt along H
    ts = spec.t_star(t)
    r = np.asarray(hyperboloid_radius(t, spec))
    with np.errstate(divide='ignore'):
        return _scalar(np.where(r > 0, (ts - spec.kappa / 2) / np.where(r > 0, r, 1.0), np.inf))


def in_hyperboloid_interior(t, r, spec=HyperboloidSpec()):
    ts = spec.t_star(t)
    r = np.asarray(r, dtype=float)
    out = (ts > 0) & (ts**2 - r**2 >= spec.kappa * ts)
    return bool(out) if out.ndim == 0 else out


## ---------- Quadrature ---------- ##

@lru_cache(maxsize=None)
def gauss_legendre(order):
    if order < 1:
        raise ValueError(f"quadrature order must be positive, got {order}")
    x, w = roots_legendre(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_nodes(a, b, order):
    x, w = gauss_legendre(order)
    half = (b - a) / 2
    return (a + b) / 2 + half * x, half * w


def composite_gauss(a, b, panels, order=4):
    # order-point Gauss rule on each of `panels` equal panels of [a, b]
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, int(panels) + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = mid[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    converged: bool
    intervals: int = 1


def _endpoint_scan(f, levels, ratio):
    delta = 2.0**-(levels + 4)
    with np.errstate(all='ignore'):
        lo, mid, hi = np.abs(np.asarray(f(np.array([-1 + delta, 0.0, 1 - delta])), dtype=float))
    refine_lo = (not np.isfinite(lo)) or lo > ratio * mid
    refine_hi = (not np.isfinite(hi)) or hi > ratio * mid
    return refine_lo, refine_hi


def _breakpoints(refine_lo, refine_hi, levels):
    pts = {-1.0, 1.0}
    if refine_hi:
        pts.update(1 - 2.0**-k for k in range(levels + 1))
    if refine_lo:
        pts.update(-1 + 2.0**-k for k in range(levels + 1))
    return np.array(sorted(pts))


def _panel_sum(f, edges, order):
    x, w = gauss_legendre(order)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = mid[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
    return float(np.sum(vals * w[None, :] * half[:, None]))


def sphere_integral(f, order=utils.QUAD_ORDER, refine='auto', levels=utils.ENDPOINT_LEVELS,
                    ratio=utils.ENDPOINT_RATIO, rtol=None, atol=1e-300):
    """Integrate a vectorized f(s) over s in [-1, 1].

    With refine='auto' an endpoint whose integrand exceeds `ratio` times the
    midpoint value gets `levels` geometric subdivisions toward it. The error
    is the difference between the order and 2*order rules; the 2*order value
    is returned.
    """
    if refine == 'auto':
        refine_lo, refine_hi = _endpoint_scan(f, levels, ratio)
    elif refine in ('lo', 'hi', 'both', 'none'):
        refine_lo, refine_hi = refine in ('lo', 'both'), refine in ('hi', 'both')
    else:
        raise ValueError(f"unknown refinement mode {refine!r}")
    edges = _breakpoints(refine_lo, refine_hi, levels)
    coarse = _panel_sum(f, edges, order)
    fine = _panel_sum(f, edges, 2 * order)
    err = abs(fine - coarse)
    if rtol is None:
        rtol = 1e-3 if (refine_lo or refine_hi) else 1e-6
    converged = bool(np.isfinite(fine) and err <= max(atol, rtol * abs(fine)))
    if not converged:
        warnings.warn(f"sphere quadrature did not converge: value {fine:.6g}, error estimate {err:.3g}")
    return QuadResult(fine, err, converged, len(edges) - 1)


## ---------- Backward light cones ---------- ##

def cone_point(r0, rt, s):
    """Radius r and tau = omega . omega~ of the cone point at cone radius rt
    and polar abscissa s, for an apex at distance r0 from the origin."""
    r0, rt, s = (np.asarray(x, dtype=float) for x in (r0, rt, s))
    r = np.sqrt((rt - r0 * s)**2 + (1 - s**2) * r0**2)
    # tau := 1 on the axis, where omega is undefined
    with np.errstate(invalid='ignore', divide='ignore'):
        tau = np.where(r > 0, (rt - r0 * s) / np.where(r > 0, r, 1.0), 1.0)
    return _scalar(r), _scalar(np.clip(tau, -1.0, 1.0))


@dataclass(frozen=True)
class ConeGeometry:
    apex: tuple
    rt: np.ndarray
    rt_weights: np.ndarray
    s: np.ndarray
    s_weights: np.ndarray
    r: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)

    @property
    def measure(self):
        # r~^2 dr~ domega~ with the azimuth integrated out
        return 2 * np.pi * (self.rt_weights * self.rt**2)[:, None] * self.s_weights[None, :]


def cone_geometry(apex, n_r=utils.QUAD_ORDER, n_s=utils.QUAD_ORDER, rt=None):
    t0, r0 = float(apex[0]), float(apex[1])
    if t0 < 0:
        raise ValueError(f"apex time must be nonnegative, got t0={t0}")
    if r0 < 0:
        raise ValueError(f"apex radius must be nonnegative, got r0={r0}")
    if n_r < 2 or n_s < 2:
        raise ValueError(f"need at least 2 nodes per direction, got n_r={n_r}, n_s={n_s}")
    if rt is None:
        rt, rt_w = gauss_nodes(0.0, t0, n_r)
    else:
        rt = np.asarray(rt, dtype=float)
        if np.any(rt < 0) or np.any(rt > t0):
            raise ValueError(f"cone radii must lie in [0, t0={t0}]")
        rt_w = np.full(rt.shape, np.nan)
    s, s_w = gauss_legendre(n_s)
    r, tau = cone_point(r0, rt[:, None], s[None, :])
    return ConeGeometry((t0, r0), rt, rt_w, s, s_w, np.asarray(r), np.asarray(tau), t0 - rt)
