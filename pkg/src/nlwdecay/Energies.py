# nlwdecay packages
import nlwdecay.Utils as utils
import nlwdecay.Geometry as geometry
import nlwdecay.Solver as solver
from nlwdecay.Geometry import HyperboloidSpec

# stats packages
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid, cumulative_trapezoid

# miscellaneous packages
import enum
import warnings
from types import SimpleNamespace
from functools import cached_property
from dataclasses import dataclass, field


FOUR_PI = 4 * np.pi


## ---------- Energies on one time slice ---------- ##

def energy_parts(state, p, grid, linear=False):
    """(quadratic, potential) parts of the conserved energy, computed on psi.

    The gradient term uses cell differences of psi, which is the discrete
    energy the leapfrog scheme conserves up to O(dt^2).
    """
    r, dr = grid.r, grid.dr
    kinetic = trapezoid(0.5 * state.pi**2, dx=dr)
    gradient = 0.5 * np.sum(np.diff(state.psi)**2) / dr
    if linear:
        return FOUR_PI * (kinetic + gradient), 0.0
    phi = state.phi(grid)
    dens = r**2 * np.abs(phi)**(p + 1) / (p + 1)
    return FOUR_PI * (kinetic + gradient), FOUR_PI * trapezoid(dens, dx=dr)


def conserved_energy(state, p, grid, linear=False):
    quad, pot = energy_parts(state, p, grid, linear=linear)
    return quad + pot


def potential_energy(state, p, grid):
    # int |phi|^{p+1} dx
    phi = state.phi(grid)
    return FOUR_PI * trapezoid(grid.r**2 * np.abs(phi)**(p + 1), dx=grid.dr)


def _weighted_divergence(profile, gamma, p, k):
    # analytic finiteness of the weighted norm for r^{-q} tails
    issues = []
    q0, q1 = profile.position.decay, profile.velocity.decay
    if q0 <= (gamma + 1) / 2:
        issues.append(f"gradient term diverges for position decay q={q0:g} <= (gamma0+1)/2")
    if q0 * (p + 1) <= gamma + 3:
        issues.append(f"potential term diverges for position decay q={q0:g} with q(p+1) <= gamma0+3")
    if q1 <= (gamma + 3) / 2:
        issues.append(f"velocity term diverges for velocity decay q={q1:g} <= (gamma0+3)/2")
    return issues


def weighted_initial_energy(state0, params, grid, k, profile=None, gamma=None):
    """Radial weighted data norm E_{k,gamma0}, k in {0, 1}.

    Derivatives come from centered differences with second order one-sided
    stencils at the grid ends. When the data profile is given its tails are
    checked first and DivergenceError is raised for an infinite norm.
    """
    if k not in (0, 1):
        raise ValueError(f"weighted energy order must be 0 or 1, got k={k}")
    gamma = params.gamma0 if gamma is None else gamma
    if profile is not None:
        issues = _weighted_divergence(solver.as_data(profile), gamma, params.p, k)
        if len(issues) > 0:
            raise utils.DivergenceError("; ".join(issues))
    r, dr = grid.r, grid.dr
    phi0 = state0.phi(grid)
    phi1 = state0.phi_t(grid)
    d_phi0 = np.gradient(phi0, dr, edge_order=2)
    dens = (1 + r)**gamma * (d_phi0**2 + phi1**2 + np.abs(phi0)**(params.p + 1))
    if k == 1:
        dd_phi0 = np.gradient(d_phi0, dr, edge_order=2)
        d_phi1 = np.gradient(phi1, dr, edge_order=2)
        dens = dens + (1 + r)**(gamma + 2) * (dd_phi0**2 + d_phi1**2)
    return FOUR_PI * trapezoid(dens * r**2, dx=dr)


def weighted_energy_parts(state0, params, grid, gamma=None):
    """(quadratic, potential) parts of E_{0,gamma0}. Under data scaling by A
    they scale like A^2 and A^{p+1}."""
    gamma = params.gamma0 if gamma is None else gamma
    r, dr = grid.r, grid.dr
    phi0 = state0.phi(grid)
    phi1 = state0.phi_t(grid)
    d_phi0 = np.gradient(phi0, dr, edge_order=2)
    weight = FOUR_PI * (1 + r)**gamma * r**2
    quad = trapezoid(weight * (d_phi0**2 + phi1**2), dx=dr)
    pot = trapezoid(weight * np.abs(phi0)**(params.p + 1), dx=dr)
    return float(quad), float(pot)


## ---------- Time series ---------- ##

def pecher_exponent(p):
    return max(4 - 2 * p, -2)


def pecher_pointwise_exponent(p):
    # sharper pointwise rate known for (1+sqrt13)/2 < p <= 3
    if not ((1 + np.sqrt(13)) / 2 < p <= 3):
        return np.nan
    return (6 + 2 * p - 2 * p**2) / (3 + p)


@dataclass(frozen=True)
class PecherFit:
    slope: float
    theory: float
    status: str
    within: bool
    samples: int


def potential_series(traj):
    r, dr = traj.grid.r, traj.grid.dr
    return FOUR_PI * trapezoid(r**2 * np.abs(traj.phi)**(traj.params.p + 1), dx=dr, axis=1)


def pecher_rate_check(traj, t_min=0.0, tol=0.3, floor=1e-300):
    times = traj.times
    keep = times >= t_min
    if (1 + times[keep].max()) < 10 * (1 + times[keep].min()):
        raise ValueError("the potential-energy fit needs at least one decade in (1+t)")
    pot = potential_series(traj)[keep]
    theory = pecher_exponent(traj.params.p)
    good = pot > floor
    if good.sum() < 3:
        return PecherFit(np.nan, theory, 'below floor', False, int(good.sum()))
    slope, _ = np.polyfit(np.log1p(times[keep][good]), np.log(pot[good]), 1)
    return PecherFit(float(slope), theory, 'ok', bool(slope <= theory + tol), int(good.sum()))


def spacetime_weighted_integral(traj, params=None):
    """Running int int v+^{gamma0-eps-1} |phi|^{p+1} dx dt over the snapshots."""
    params = traj.params if params is None else params
    r, dr = traj.grid.r, traj.grid.dr
    v_plus = np.sqrt(1 + ((traj.times[:, None] + r[None, :]) / 2)**2)
    dens = v_plus**(params.gamma0 - params.epsilon - 1) * np.abs(traj.phi)**(params.p + 1) * r**2
    per_time = FOUR_PI * trapezoid(dens, dx=dr, axis=1)
    if len(traj) == 1:
        return np.zeros(1)
    return cumulative_trapezoid(per_time, traj.times, initial=0.0)


## ---------- Fluxes ---------- ##

def _apex_guard(traj, t0, r0):
    tol = 1e-9 * max(1.0, traj.T)
    if t0 < 0 or r0 < 0 or t0 > traj.T + tol:
        raise ValueError(f"apex ({t0:g}, {r0:g}) lies outside the trajectory times [0, {traj.T:g}]")
    if r0 + t0 > traj.grid.r_max + tol:
        raise ValueError(f"backward cone of apex ({t0:g}, {r0:g}) leaves the grid r <= {traj.grid.r_max:g}")


def cone_weighted_flux(traj, apex, gamma, n_r=utils.QUAD_ORDER, n_s=utils.QUAD_ORDER):
    params = traj.params
    if not (1 < gamma < params.gamma0):
        raise ValueError(f"cone flux weight needs 1 < gamma < gamma0={params.gamma0:g}, got {gamma}")
    t0, r0 = float(apex[0]), float(apex[1])
    _apex_guard(traj, t0, r0)
    if t0 == 0:
        return 0.0
    cone = geometry.cone_geometry((t0, r0), n_r, n_s)
    tt = np.broadcast_to(cone.t[:, None], cone.r.shape)
    w = geometry.null_weights(tt, cone.r)
    phi = traj.interpolator.phi(tt, cone.r)
    dens = ((1 + cone.tau) * w.v_plus**gamma + w.u_plus**gamma) * np.abs(phi)**(params.p + 1)
    return float(np.sum(dens * cone.measure))


def apex_grid(traj, n_t=10, n_r=10):
    # apexes whose backward cones stay inside the grid
    t0s = np.linspace(0, traj.T, n_t)
    r0s = np.linspace(0, max(traj.grid.r_max - traj.T, 0), n_r)
    return [(t0, r0) for t0 in t0s for r0 in r0s]


@dataclass(frozen=True)
class ConeFluxSup:
    sup: float
    apex: tuple
    table: pd.DataFrame = field(repr=False)


def cone_flux_sup(traj, gamma, apexes=None, n_r=utils.QUAD_ORDER, n_s=utils.QUAD_ORDER):
    apexes = apex_grid(traj) if apexes is None else apexes
    rows = [{'t0': t0, 'r0': r0, 'flux': cone_weighted_flux(traj, (t0, r0), gamma, n_r, n_s)}
            for t0, r0 in apexes]
    table = pd.DataFrame(rows)
    best = int(table.flux.values.argmax())
    return ConeFluxSup(float(table.flux.iloc[best]), (float(table.t0.iloc[best]), float(table.r0.iloc[best])), table)


def outgoing_flux(traj, u, panels=None, order=4):
    """int over the null line t - r = 2u of |phi|^{p+1} 2 r^2 dv domega."""
    v_start = abs(u)
    v_end = min(traj.T - u, traj.grid.r_max + u)
    if v_end <= v_start:
        raise ValueError(f"the null line u={u:g} does not meet the trajectory domain")
    panels = panels or max(8, int(np.ceil((v_end - v_start) / traj.grid.dr)))
    v, w = geometry.composite_gauss(v_start, v_end, panels, order)
    t, r = u + v, v - u
    phi = traj.interpolator.phi(t, r)
    return float(2 * FOUR_PI * np.sum(w * r**2 * np.abs(phi)**(traj.params.p + 1)))


def outgoing_flux_decay(traj, us):
    fluxes = np.array([outgoing_flux(traj, u) for u in us])
    x = np.log1p(np.abs(np.asarray(us, dtype=float)))
    good = fluxes > 0
    if good.sum() < 2:
        return np.nan, fluxes
    slope, _ = np.polyfit(x[good], np.log(fluxes[good]), 1)
    return float(slope), fluxes


@dataclass(frozen=True)
class HyperboloidFlux:
    weighted: float
    lbar: float
    l: float
    potential: float
    energy: float
    t_extent: float
    truncated: bool

    @property
    def total(self):
        return self.weighted + self.lbar + self.l + self.potential


def _hyperboloid_parts(source, spec, t_extent, order, potential):
    # potential(t, r, phi) is the density F entering 2 r^2 F
    wanted = source.T if t_extent is None else float(t_extent)
    t_end = min(wanted, source.T)
    truncated = source.T < wanted
    if truncated:
        warnings.warn(f"hyperboloid flux truncated at t={t_end:g} before the requested extent {wanted:g}")
    if t_end <= 0:
        return HyperboloidFlux(0.0, 0.0, 0.0, 0.0, 0.0, t_end, truncated)
    if geometry.hyperboloid_radius(t_end, spec) > source.grid.r_max:
        raise ValueError(f"the hyperboloid leaves the grid before t={t_end:g}")
    panels = max(16, int(np.ceil(t_end / source.grid.dr)))
    t, w = geometry.composite_gauss(0.0, t_end, panels, order)
    r = geometry.hyperboloid_radius(t, spec)
    tau0 = geometry.hyperboloid_slope(t, spec)
    phi, phi_t, phi_r = source.interpolator.values(t, r)
    L, Lbar = phi_t + phi_r, phi_t - phi_r
    F = potential(t, r, phi)
    parts = [r**source.params.gamma0 * (r * L + phi)**2, Lbar**2, r**2 * L**2, 2 * r**2 * F]
    weighted, lbar, l, pot = (FOUR_PI * float(np.sum(w * x)) for x in parts)
    energy = FOUR_PI * float(np.sum(w * (tau0 * (phi_t**2 + phi_r**2 + 2 * F) + 2 * phi_t * phi_r) * r**2))
    return HyperboloidFlux(weighted, lbar, l, pot, energy, t_end, truncated)


def hyperboloid_flux(traj, spec=HyperboloidSpec(), t_extent=None, order=4):
    """Weighted flux through the future part of H, parameterized by t.

    Also returns the energy flux E[phi](H+) of the d_t multiplier. The
    integration stops at the end of the trajectory and flags truncation when
    that is before the requested extent.
    """
    p = traj.params.p
    return _hyperboloid_parts(traj, spec, t_extent, order,
                              lambda t, r, phi: np.abs(phi)**(p + 1) / (p + 1))


class Commutator(enum.Enum, metaclass=utils.MetaEnum):
    T = 't'
    R = 'r'


class CommutedField:
    """Z phi for Z in {d_t, d_r}, with its t and r derivatives on the
    trajectory nodes. Quacks like a Trajectory for the interpolator."""

    def __init__(self, traj, Z):
        if traj.compact:
            raise ValueError("commuted fields are only defined for the full-space equation")
        self.base = traj
        self.Z = Commutator[Z]
        self.grid, self.params, self.times = traj.grid, traj.params, traj.times
        self.metadata = {**traj.metadata, 'commutator': self.Z.value}
        r, dr = traj.grid.r, traj.grid.dr
        d_phi_t = np.gradient(traj.phi_t, dr, axis=1, edge_order=2)
        d_phi_t[:, 0] = 0.0
        if self.Z is Commutator.T:
            # phi_tt from the equation
            phi_tt = np.gradient(traj.phi_r, dr, axis=1, edge_order=2) + 2 * solver.radial_quotient(traj.phi_r, r)
            if not traj.linear:
                phi_tt = phi_tt - np.abs(traj.phi)**(traj.params.p - 1) * traj.phi
            self.phi, self.phi_t, self.phi_r = traj.phi_t, phi_tt, d_phi_t
        else:
            # d_r phi is odd in r and vanishes on the axis
            self.phi, self.phi_t = traj.phi_r, d_phi_t
            self.phi_r = np.gradient(traj.phi_r, dr, axis=1, edge_order=2)

    def __len__(self):
        return self.times.size

    @property
    def T(self):
        return float(self.times[-1])

    @cached_property
    def interpolator(self):
        return solver.FieldInterpolator(self)


def commuted_hyperboloid_flux(traj, spec=HyperboloidSpec(), Z='t', t_extent=None, order=4):
    """hyperboloid_flux of Z phi, with the linearized potential
    p |phi|^{p-1} (Z phi)^2 / 2 in place of |phi|^{p+1} / (p+1)."""
    source = CommutedField(traj, Z)
    p = traj.params.p
    if traj.linear:
        return _hyperboloid_parts(source, spec, t_extent, order, lambda t, r, zphi: np.zeros_like(zphi))

    def potential(t, r, zphi):
        return p / 2 * np.abs(traj.interpolator.phi(t, r))**(p - 1) * zphi**2

    return _hyperboloid_parts(source, spec, t_extent, order, potential)


## ---------- Multipliers ---------- ##

class MultiplierKind(enum.Enum, metaclass=utils.MetaEnum):
    EXTERIOR = 'exterior'
    COMPACT = 'compact'
    CLASSICAL = 'classical'
    RWEIGHTED = 'rweighted'


@dataclass(frozen=True)
class MultiplierSpec:
    kind: MultiplierKind
    gamma: float = 0.0
    cone_height: float = None

    def __post_init__(self):
        kind, g = self.kind, self.gamma
        if kind is MultiplierKind.EXTERIOR and not (1 < g < 2):
            raise ValueError(f"EXTERIOR multiplier needs 1 < gamma < 2, got {g}")
        if kind is MultiplierKind.COMPACT:
            if not (0 < g < 1):
                raise ValueError(f"COMPACT multiplier needs 0 < gamma < 1, got {g}")
            if self.cone_height is None or self.cone_height <= 0:
                raise ValueError("COMPACT multiplier needs a positive cone height")
        if kind is MultiplierKind.RWEIGHTED and not (0 <= g <= 2):
            raise ValueError(f"RWEIGHTED multiplier needs 0 <= gamma <= 2, got {g}")


def _quotient(num, r, limit):
    # num / r, replaced by `limit` on the axis
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(r > 0, num / np.where(r > 0, r, 1.0), limit)


def multiplier_fields(mult, t, r):
    """X = a d_t + b d_r, the function chi and their first derivatives.

    chi is b/r for every kind; for the null-weighted kinds the difference
    V - U is formed through expm1/log1p so chi keeps full relative precision
    as r -> 0.
    """
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    zero = np.zeros_like(r)
    g = mult.gamma
    kind = mult.kind
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        if kind is MultiplierKind.CLASSICAL:
            return SimpleNamespace(a=np.ones_like(r), b=zero, a_t=zero, a_r=zero, b_t=zero, b_r=zero,
                                   chi=zero, chi_t=zero, chi_r=zero, box_chi=zero, b_over_r=zero)
        if kind is MultiplierKind.RWEIGHTED:
            rg = r**g
            d = g * _quotient(rg, r, 0.0 if g > 1 else np.inf)
            chi = _quotient(rg, r, 0.0 if g > 1 else np.inf)
            chi_r = (g - 1) * _quotient(chi, r, 0.0)
            box = g * (g - 1) * _quotient(_quotient(chi, r, 0.0), r, 0.0)
            return SimpleNamespace(a=rg, b=rg, a_t=zero, a_r=d, b_t=zero, b_r=d, chi=chi, chi_t=zero,
                                   chi_r=chi_r, box_chi=box, b_over_r=chi)
        if kind is MultiplierKind.EXTERIOR:
            w = geometry.null_weights(t, r)
            u, v = np.asarray(w.u), np.asarray(w.v)
            up, vp = np.asarray(w.u_plus), np.asarray(w.v_plus)
            V, U = vp**g, up**g
            dV, dU = g * vp**(g - 2) * v, g * up**(g - 2) * u
            a_t = b_r = 0.5 * (dV + dU)
            a_r = b_t = 0.5 * (dV - dU)
            diff = U * np.expm1(0.5 * g * np.log1p(r * t / (1 + u**2)))
        else:
            w = geometry.compact_cone_weights(mult.cone_height, t, r)
            us, vs = np.asarray(w.u_star), np.asarray(w.v_star)
            V, U = vs**g, us**g
            dV, dU = g * vs**(g - 1), g * us**(g - 1)
            a_t = b_r = -dV - dU
            a_r = b_t = -dV + dU
            diff = U * np.expm1(g * np.log1p(-2 * r / us))
        chi = _quotient(diff, r, b_r)
        chi_t = _quotient(b_t, r, 0.0)
        chi_r = _quotient(b_r - chi, r, 0.0)
    return SimpleNamespace(a=V + U, b=V - U, a_t=a_t, a_r=a_r, b_t=b_t, b_r=b_r, chi=chi,
                           chi_t=chi_t, chi_r=chi_r, box_chi=zero, b_over_r=chi)


def angular_coefficient(mult, t, r):
    # coefficient of |angular grad phi|^2 in the bulk term
    f = multiplier_fields(mult, t, r)
    return f.chi - 0.5 * (f.a_t + f.b_r)


def potential_coefficient(mult, t, r, p):
    # coefficient of |phi|^{p+1} in the bulk term (unit nonlinearity coefficient)
    f = multiplier_fields(mult, t, r)
    return f.chi - (f.a_t + f.b_r + 2 * f.b_over_r) / (p + 1)


def current(f, phi, phi_t, phi_r, p, c=1.0, linear=False):
    """(J^0, J^r) of the current T(X) + chi phi dphi - phi^2 dchi / 2."""
    F = 0.0 if linear else c * np.abs(phi)**(p + 1) / (p + 1)
    e = 0.5 * phi_t**2 + 0.5 * phi_r**2 + F
    ell = 0.5 * (phi_r**2 - phi_t**2) + F
    J0 = -f.a * e - f.b * phi_t * phi_r - f.chi * phi * phi_t + 0.5 * f.chi_t * phi**2
    Jr = f.a * phi_t * phi_r + f.b * (phi_r**2 - ell) + f.chi * phi * phi_r - 0.5 * f.chi_r * phi**2
    return J0, Jr


def bulk_density(f, phi, phi_t, phi_r, p, ang2=0.0, c=1.0, c_t=0.0, c_r=0.0, linear=False):
    """Divergence of the current on solutions of phi_tt - lap phi + c|phi|^{p-1}phi = 0."""
    F0 = 0.0 if linear else np.abs(phi)**(p + 1) / (p + 1)
    F = c * F0
    e = 0.5 * (phi_t**2 + phi_r**2 + ang2) + F
    ell = 0.5 * (phi_r**2 - phi_t**2 + ang2) + F
    dot = phi_r**2 - phi_t**2 + ang2
    out = (-f.a_t * e - phi_t * phi_r * (f.b_t - f.a_r) + f.b_r * phi_r**2 + f.b_over_r * ang2
           - ell * (f.b_r + 2 * f.b_over_r) + f.chi * dot - 0.5 * f.box_chi * phi**2)
    if not linear:
        out = out + f.chi * c * (p + 1) * F0 - F0 * (f.a * c_t + f.b * c_r)
    return out


def deformation_contraction(mult, weights, derivs, p, c=1.0):
    """Bulk term T.pi + chi dphi.dphi - box(chi) phi^2/2 + chi phi box(phi)
    at points given by NullWeights or CompactConeWeights, from
    derivs = (L phi, Lbar phi, |angular grad phi|, phi)."""
    if isinstance(weights, geometry.CompactConeWeights) and mult.kind is MultiplierKind.COMPACT \
            and not np.isclose(weights.R, mult.cone_height):
        raise ValueError(f"cone height {weights.R} does not match the multiplier's {mult.cone_height}")
    Lphi, Lbar, ang, phi = (np.asarray(x, dtype=float) for x in derivs)
    f = multiplier_fields(mult, weights.t, weights.r)
    phi_t, phi_r = 0.5 * (Lphi + Lbar), 0.5 * (Lphi - Lbar)
    return bulk_density(f, phi, phi_t, phi_r, p, ang2=ang**2, c=c)


## ---------- Energy identity audit ---------- ##

@dataclass(frozen=True)
class Region:
    # t0 <= t <= t1, lo(t) <= r <= hi(t) with lo, hi linear in t
    name: str
    t0: float
    t1: float
    lo: tuple
    hi: tuple

    def r_lo(self, t):
        return self.lo[0] + self.lo[1] * np.asarray(t, dtype=float)

    def r_hi(self, t):
        return self.hi[0] + self.hi[1] * np.asarray(t, dtype=float)


def time_slab(t0, t1, r_hi):
    return Region('slab', t0, t1, (0.0, 0.0), (float(r_hi), 0.0))


def exterior_domain(u1, u2, t1, t0=0.0):
    # u1 <= (t - r)/2 <= u2
    if not u1 < u2:
        raise ValueError(f"exterior domain needs u1 < u2, got u1={u1}, u2={u2}")
    if t0 - 2 * u2 < 0:
        raise ValueError(f"exterior domain with u2={u2} crosses the axis at t0={t0}")
    return Region('exterior', t0, t1, (-2.0 * u2, 1.0), (-2.0 * u1, 1.0))


def backward_cone(t_apex, t1=None, t0=0.0):
    # solid backward cone r <= t_apex - t of an apex on the axis
    t1 = t_apex if t1 is None else t1
    return Region('cone', t0, t1, (0.0, 0.0), (float(t_apex), -1.0))


@dataclass(frozen=True)
class IdentityAudit:
    pieces: dict
    bulk: float
    residual: float
    floor: float


def _region_guard(traj, region):
    tol = 1e-9 * max(1.0, traj.T)
    if region.t0 < -tol or region.t1 > traj.T + tol or region.t1 <= region.t0:
        raise ValueError(f"region times [{region.t0:g}, {region.t1:g}] outside the trajectory [0, {traj.T:g}]")
    ends = np.array([region.t0, region.t1])
    lo, hi = region.r_lo(ends), region.r_hi(ends)
    if np.any(lo < -tol) or np.any(hi < lo - tol):
        raise ValueError(f"region {region.name} has an empty or negative radial range")
    if np.any(hi > traj.grid.r_max + tol):
        raise ValueError(f"region {region.name} leaves the grid r <= {traj.grid.r_max:g}")
    if traj.compact:
        # stencils must stay on nodes step_compact keeps updating
        R = traj.metadata['cone_height']
        if np.any(hi >= R - ends - traj.grid.dr):
            raise ValueError(f"region {region.name} reaches the frozen nodes next to the cone of height {R:g}")


def _coefficient(traj):
    # nonlinearity coefficient c(t, r) and its derivatives
    if not traj.compact:
        return lambda t, r: (1.0, 0.0, 0.0)
    R, p = traj.metadata['cone_height'], traj.params.p

    def coeff(t, r):
        us, vs = R - t + r, R - t - r
        prod = us * vs
        return prod**(p - 3), (p - 3) * prod**(p - 4) * (-us - vs), (p - 3) * prod**(p - 4) * (vs - us)
    return coeff


def energy_identity_residual(traj, mult, region, order=4, panels_t=None, panels_r=None, chunk=64):
    """Discrete Stokes balance of the multiplier current over a (t, r) region.

    With P = r^2 J^0 and Q = r^2 J^r the boundary is integrated
    counterclockwise in the (t, r) plane and compared with the bulk integral
    of r^2 div J. Returns the relative mismatch.
    """
    _region_guard(traj, region)
    interp = traj.interpolator
    p, linear = traj.params.p, traj.linear
    coeff = _coefficient(traj)
    cadence = traj.T / max(len(traj) - 1, 1)
    panels_t = panels_t or max(8, int(np.ceil((region.t1 - region.t0) / cadence)))
    width = float(np.max(region.r_hi(np.array([region.t0, region.t1])) - region.r_lo(np.array([region.t0, region.t1]))))
    panels_r = panels_r or max(8, int(np.ceil(width / traj.grid.dr)))
    xi, xw = geometry.composite_gauss(0.0, 1.0, panels_r, order)

    def PQ(t, r):
        phi, phi_t, phi_r = interp.values(t, r)
        c, _, _ = coeff(t, r)
        J0, Jr = current(multiplier_fields(mult, t, r), phi, phi_t, phi_r, p, c=c, linear=linear)
        return r**2 * J0, r**2 * Jr

    def slice_integral(t):
        lo, hi = float(region.r_lo(t)), float(region.r_hi(t))
        if hi <= lo:
            return 0.0
        r = lo + (hi - lo) * xi
        P, _ = PQ(np.full_like(r, t), r)
        return FOUR_PI * (hi - lo) * float(np.sum(xw * P))

    tn, tw = geometry.composite_gauss(region.t0, region.t1, panels_t, order)

    def curve_integral(which):
        a, slope = region.lo if which == 'lo' else region.hi
        r = a + slope * tn
        if np.all(r == 0):
            # P and Q vanish on the axis
            return 0.0
        P, Q = PQ(tn, r)
        return FOUR_PI * float(np.sum(tw * (P * slope - Q)))

    pieces = {'initial': -slice_integral(region.t0),
              'final': slice_integral(region.t1),
              'inner': curve_integral('lo'),
              'outer': -curve_integral('hi')}

    bulk = 0.0
    for s in range(0, tn.size, chunk):
        t = tn[s:s + chunk]
        lo, hi = region.r_lo(t), region.r_hi(t)
        width = np.maximum(hi - lo, 0.0)
        rr = lo[:, None] + width[:, None] * xi[None, :]
        tt = np.broadcast_to(t[:, None], rr.shape)
        W = (tw[s:s + chunk] * width)[:, None] * xw[None, :]
        phi, phi_t, phi_r = interp.values(tt, rr)
        c, c_t, c_r = coeff(tt, rr)
        f = multiplier_fields(mult, tt, rr)
        dens = bulk_density(f, phi, phi_t, phi_r, p, c=c, c_t=c_t, c_r=c_r, linear=linear)
        bulk += FOUR_PI * float(np.sum(W * np.where(rr > 0, rr**2 * dens, 0.0)))

    floor = utils.RESIDUAL_FLOOR * traj.grid.n
    scale = max(abs(v) for v in pieces.values()) + abs(bulk) + floor
    residual = abs(sum(pieces.values()) - bulk) / scale
    return IdentityAudit(pieces, bulk, float(residual), floor)


## ---------- Reports ---------- ##

@dataclass
class EnergyReport:
    times: np.ndarray
    E_conserved: np.ndarray
    E_weighted_k0: float
    E_weighted_k1: float
    potential: np.ndarray
    spacetime_acc: np.ndarray
    cone_flux: dict = field(default_factory=dict)
    outgoing_flux: dict = field(default_factory=dict)
    hyperboloid_flux: HyperboloidFlux = None

    COLUMNS = ['t', 'E', 'E0g', 'E1g', 'potential', 'st_acc']

    def to_frame(self):
        df = pd.DataFrame({'t': self.times, 'E': self.E_conserved,
                           'E0g': self.E_weighted_k0, 'E1g': self.E_weighted_k1,
                           'potential': self.potential, 'st_acc': self.spacetime_acc},
                          columns=self.COLUMNS)
        # fluxes are properties of the whole trajectory, reported on its last row
        extra = {}
        for (t0, r0), val in self.cone_flux.items():
            extra[f"cone_t{t0:g}_r{r0:g}"] = val
        for u, val in self.outgoing_flux.items():
            extra[f"outgoing_u{u:g}"] = val
        if self.hyperboloid_flux is not None:
            extra['hyperboloid'] = self.hyperboloid_flux.total
            extra['hyperboloid_energy'] = self.hyperboloid_flux.energy
        for name, val in extra.items():
            col = np.full(len(df), np.nan)
            col[-1] = val
            df[name] = col
        return df

    def write_csv(self, path):
        return utils.write_csv(self.to_frame(), path)


def energy_report(traj, profile=None, k1=True, cone_gamma=None, apexes=(), us=(), hyperboloid=None):
    p, grid = traj.params.p, traj.grid
    E = np.array([conserved_energy(s, p, grid, linear=traj.linear) for s in traj.snapshots])
    state0 = traj.snapshot(0)
    E0 = weighted_initial_energy(state0, traj.params, grid, 0, profile=profile)
    E1 = weighted_initial_energy(state0, traj.params, grid, 1, profile=profile) if k1 else np.nan
    cones = {}
    if len(apexes) > 0:
        gamma = cone_gamma if cone_gamma is not None else (1 + traj.params.gamma0) / 2
        cones = {tuple(a): cone_weighted_flux(traj, a, gamma) for a in apexes}
    outs = {u: outgoing_flux(traj, u) for u in us}
    hyp = hyperboloid_flux(traj, t_extent=hyperboloid) if hyperboloid is not None else None
    return EnergyReport(traj.times.copy(), E, E0, E1, potential_series(traj),
                        spacetime_weighted_integral(traj), cones, outs, hyp)
