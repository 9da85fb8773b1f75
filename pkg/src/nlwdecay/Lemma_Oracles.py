# nlwdecay packages
import nlwdecay.Utils as utils
import nlwdecay.Geometry as geometry

# stats packages
import numpy as np
import pandas as pd

# miscellaneous packages
import enum
import warnings
from tqdm import tqdm
from dataclasses import dataclass, field, replace


TWO_PI = 2 * np.pi


class LemmaId(enum.Enum, metaclass=utils.MetaEnum):
    L33 = 'L33'
    L42 = 'L42'
    L43 = 'L43'


@dataclass(frozen=True)
class LemmaCheck:
    lhs: float
    rhs: float
    ratio: float
    error: float
    converged: bool


def _check(quad, rhs):
    return LemmaCheck(quad.value, rhs, quad.value / rhs, quad.error, quad.converged)


## ---------- Exterior sphere integral ---------- ##

def _one_plus_tau_r(r0, rt, s, r):
    # (1 + tau) r = r + rt - r0 s, without cancellation near s = 1
    x = rt - r0 * s
    with np.errstate(invalid='ignore', divide='ignore'):
        stable = (1 - s) * (1 + s) * r0**2 / (r - x)
    return np.where(x < 0, stable, r + x)


def _L33_guard(gamma, alpha, beta, apex, rt, strict):
    t0, r0 = apex
    if not (0 <= rt <= t0 < r0):
        raise ValueError(f"exterior sphere integral needs 0 <= rt <= t0 < r0, got rt={rt}, t0={t0}, r0={r0}")
    if strict:
        if not (1 < gamma < 2) or alpha < 0 or beta < 0:
            raise ValueError(f"need 1 < gamma < 2 and alpha, beta >= 0, got gamma={gamma}, alpha={alpha}, beta={beta}")
        if beta + alpha * gamma <= 2:
            raise ValueError(f"need beta + alpha gamma > 2, got {beta + alpha * gamma:g}")


def lhs_L33(gamma, alpha, beta, apex, rt, order=utils.QUAD_ORDER, strict=True):
    """2 pi int_{-1}^{1} r^{-beta} (r^{gamma-1}(1+tau) r + (r0-t0)^gamma)^{-alpha} ds."""
    t0, r0 = float(apex[0]), float(apex[1])
    _L33_guard(gamma, alpha, beta, (t0, r0), rt, strict)
    gap = (r0 - t0)**gamma

    def f(s):
        r, _ = geometry.cone_point(r0, rt, s)
        r = np.asarray(r)
        return TWO_PI * r**-beta * (r**(gamma - 1) * _one_plus_tau_r(r0, rt, s, r) + gap)**-alpha
    return geometry.sphere_integral(f, order)


def rhs_L33(gamma, alpha, beta, apex, rt, eps):
    t0, r0 = float(apex[0]), float(apex[1])
    # eps only enters for alpha = 1
    e = eps if alpha == 1 else 0.0
    near = r0 - rt
    return near**(2 - beta - gamma + e) * r0**-2 * (near**((1 - alpha) * gamma) + (r0 - t0)**((1 - alpha) * gamma))


def check_L33(gamma, alpha, beta, apex, rt, eps=0.05, order=utils.QUAD_ORDER, strict=True):
    quad = lhs_L33(gamma, alpha, beta, apex, rt, order, strict=strict)
    return _check(quad, rhs_L33(gamma, alpha, beta, apex, rt, eps))


def closed_form_L33_unit(apex, rt):
    """Exact lhs_L33 for beta = 0, alpha = gamma = 1.

    Substituting r for s turns the integral into
    (2/r0) int r / ((r + rt)^2 - K) dr with K = r0^2 - 2 rt (r0 - t0).
    """
    t0, r0 = float(apex[0]), float(apex[1])
    d = r0 - t0
    if rt == 0:
        return TWO_PI / r0 * np.log((2 * r0 + d) / d)
    K = r0**2 - 2 * rt * d

    def inv(y):
        # antiderivative of 1/(y^2 - K)
        if K > 0:
            k = np.sqrt(K)
            return np.log(abs((y - k) / (y + k))) / (2 * k)
        if K < 0:
            k = np.sqrt(-K)
            return np.arctan(y / k) / k
        return -1 / y

    def G(y):
        return 0.5 * np.log(abs(y**2 - K)) - rt * inv(y)
    y_lo, y_hi = abs(r0 - rt) + rt, r0 + 2 * rt
    return TWO_PI * 2 / r0 * (G(y_hi) - G(y_lo))


## ---------- Compact cone sphere integrals ---------- ##

def _cone_guard(R, apex, rt):
    t0, r0 = apex
    if not (0 <= rt <= t0):
        raise ValueError(f"need 0 <= rt <= t0, got rt={rt}, t0={t0}")
    if not (t0 >= 0 and r0 >= 0 and t0 + r0 < R):
        raise ValueError(f"apex ({t0:g}, {r0:g}) is not inside the cone of height R={R:g}")


def check_L42(gamma_prime, R, apex, rt, order=utils.QUAD_ORDER):
    t0, r0 = float(apex[0]), float(apex[1])
    if not gamma_prime < 1:
        raise ValueError(f"need gamma' < 1, got {gamma_prime}")
    _cone_guard(R, (t0, r0), rt)
    t = t0 - rt

    def f(s):
        r, _ = geometry.cone_point(r0, rt, s)
        return TWO_PI * (R - t - np.asarray(r))**-gamma_prime
    v0 = R - t0 - r0
    rhs = (R - t)**gamma_prime * (R - t0)**-gamma_prime * (v0 + rt)**-gamma_prime
    return _check(geometry.sphere_integral(f, order), rhs)


def check_L43(gamma, alpha, R, apex, rt, order=utils.QUAD_ORDER):
    t0, r0 = float(apex[0]), float(apex[1])
    if not (0 < gamma < 1 and 0 <= alpha < 1):
        raise ValueError(f"need 0 < gamma < 1 and 0 <= alpha < 1, got gamma={gamma}, alpha={alpha}")
    _cone_guard(R, (t0, r0), rt)
    t = t0 - rt

    def f(s):
        r, tau = geometry.cone_point(r0, rt, s)
        w = geometry.compact_cone_weights(R, t, r)
        return TWO_PI * ((1 - np.asarray(tau)) * np.asarray(w.u_star)**gamma + np.asarray(w.v_star)**gamma)**-alpha
    return _check(geometry.sphere_integral(f, order), (R - t0)**(-alpha * gamma))


## ---------- Sweeps ---------- ##

@dataclass(frozen=True)
class LemmaSweepConfig:
    lemma: LemmaId
    # fixed exponents: gamma/alpha/beta for L33,
    # gamma_prime for L42, gamma/alpha for L43
    exponents: dict
    n_apex_t: int = 10
    n_apex_r: int = 10
    n_rt: int = 10
    order: int = utils.QUAD_ORDER
    R: float = 1.0
    eps: float = 0.05
    strict: bool = True

    def densify(self):
        return replace(self, n_apex_t=2 * self.n_apex_t, n_apex_r=2 * self.n_apex_r, n_rt=2 * self.n_rt)

    def refine(self):
        return replace(self, order=2 * self.order)

    def tuples(self):
        rt_frac = np.linspace(0.0, 1.0, self.n_rt)
        if self.lemma is LemmaId.L33:
            # scale-free up to eps, so a few decades of r0 suffice
            for r0 in np.geomspace(0.5, 50.0, self.n_apex_r):
                for a in np.linspace(0.05, 0.99, self.n_apex_t):
                    t0 = a * r0
                    for c in rt_frac:
                        yield (t0, r0), c * t0
        else:
            for a in np.linspace(0.0, 0.95, self.n_apex_t):
                t0 = a * self.R
                for b in np.linspace(0.0, 0.95, self.n_apex_r):
                    r0 = b * (self.R - t0)
                    for c in rt_frac:
                        yield (t0, r0), c * t0


def _evaluate(config, apex, rt):
    ex = config.exponents
    if config.lemma is LemmaId.L33:
        return check_L33(ex['gamma'], ex['alpha'], ex['beta'], apex, rt, config.eps, config.order, config.strict)
    if config.lemma is LemmaId.L42:
        return check_L42(ex['gamma_prime'], config.R, apex, rt, config.order)
    return check_L43(ex['gamma'], ex['alpha'], config.R, apex, rt, config.order)


@dataclass(frozen=True)
class SweepResult:
    config: LemmaSweepConfig
    table: pd.DataFrame = field(repr=False)
    sup: float
    argmax: dict
    unconverged: int


def constant_sweep(config, progress=False):
    """sup of LHS/RHS over the tuples of the sweep, with the arg-max."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        for apex, rt in tqdm(list(config.tuples()), desc=f"sweep {config.lemma.value}", disable=not progress):
            chk = _evaluate(config, apex, rt)
            rows.append({**config.exponents, 't0': apex[0], 'r0': apex[1], 'rt': rt,
                         'lhs': chk.lhs, 'rhs': chk.rhs, 'ratio': chk.ratio,
                         'error': chk.error, 'converged': chk.converged})
    table = pd.DataFrame(rows)
    unconverged = int((~table.converged).sum())
    if unconverged > 0:
        warnings.warn(f"{unconverged} of {len(table)} {config.lemma.value} quadratures did not converge")
    best = int(table.ratio.values.argmax())
    argmax = table.iloc[best][['t0', 'r0', 'rt']].to_dict()
    return SweepResult(config, table, float(table.ratio.iloc[best]), argmax, unconverged)


def write_sweep_csv(result, path):
    table = result.table.copy()
    table.insert(0, 'row', 'tuple')
    summary = {'row': 'summary', **result.config.exponents, 'ratio': result.sup,
               **{k: v for k, v in result.argmax.items()}}
    table = pd.concat([table, pd.DataFrame([summary])], ignore_index=True)
    return utils.write_csv(table, path)


def negative_control_L33(gamma=1.5, alpha=0.0, beta=1.0, r0=1.0, t0_frac=0.999, rt_frac=0.99, eps=0.05):
    """Growth of LHS/RHS from rt = 0 to rt = rt_frac t0 when beta + alpha gamma <= 2."""
    apex = (t0_frac * r0, r0)
    start = check_L33(gamma, alpha, beta, apex, 0.0, eps, strict=False)
    end = check_L33(gamma, alpha, beta, apex, rt_frac * apex[0], eps, strict=False)
    return end.ratio / start.ratio
