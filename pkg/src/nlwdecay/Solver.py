# nlwdecay packages
import nlwdecay.Utils as utils
import nlwdecay.Geometry as geometry
from nlwdecay.Geometry import PowerParams

# stats packages
import numpy as np

# miscellaneous packages
import os
from tqdm import tqdm
from functools import partial, cached_property
from dataclasses import dataclass, field, replace


## ---------- Data profiles ---------- ##

# radial profiles phi(r) for initial data. Each
# knows its derivative, the moment int_0^x s phi(s) ds
# (used by the exact linear oracle) and its decay rate

class Profile:
    decay = np.inf

    def __call__(self, r):
        raise NotImplementedError

    def derivative(self, r):
        raise NotImplementedError

    def moment(self, x):
        raise NotImplementedError

    def support(self):
        # radius beyond which the profile vanishes (or is negligible)
        return np.inf

    def describe(self):
        return {'kind': type(self).__name__.lower(), **vars(self)}


class Zero(Profile):

    def __call__(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def derivative(self, r):
        return self(r)

    def moment(self, x):
        return self(x)

    def support(self):
        return 0.0


class Gaussian(Profile):

    def __init__(self, amplitude=1.0, width=1.0):
        if width <= 0:
            raise ValueError(f"gaussian width must be positive, got {width}")
        self.amplitude = float(amplitude)
        self.width = float(width)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * np.exp(-r**2 / self.width**2)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -2 * r / self.width**2 * self(r)

    def moment(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * self.width**2 / 2 * -np.expm1(-x**2 / self.width**2)

    def support(self):
        # e^{-36} is below double precision relative to the peak
        return 6 * self.width


class Bump(Profile):
    # A (1 - s^2)^3 on inner < r < outer, C^2 across the ends

    def __init__(self, amplitude=1.0, inner=1.0, outer=2.0):
        if not (0 <= inner < outer):
            raise ValueError(f"bump needs 0 <= inner < outer, got inner={inner}, outer={outer}")
        self.amplitude = float(amplitude)
        self.inner = float(inner)
        self.outer = float(outer)

    def _s(self, r):
        return (2 * np.asarray(r, dtype=float) - self.inner - self.outer) / (self.outer - self.inner)

    def __call__(self, r):
        s = self._s(r)
        return np.where(np.abs(s) < 1, self.amplitude * (1 - s**2)**3, 0.0)

    def derivative(self, r):
        s = self._s(r)
        ds = 2 / (self.outer - self.inner)
        return np.where(np.abs(s) < 1, -6 * self.amplitude * s * (1 - s**2)**2 * ds, 0.0)

    def moment(self, x):
        # s phi(s) is a degree 7 polynomial on the support,
        # so a 4-point Gauss rule is exact
        x = np.asarray(x, dtype=float)
        hi = np.clip(x, self.inner, self.outer)
        nodes, weights = geometry.gauss_legendre(4)
        half = (hi - self.inner) / 2
        pts = self.inner + half[..., None] * (nodes + 1)
        return np.sum(pts * self(pts) * weights, axis=-1) * half

    def support(self):
        return self.outer


class Tail(Profile):
    # A (1 + r^2)^{-q/2}, decaying like A r^{-q}

    def __init__(self, amplitude=1.0, decay=2.0):
        if decay <= 0:
            raise ValueError(f"tail decay rate must be positive, got {decay}")
        self.amplitude = float(amplitude)
        self.decay = float(decay)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * (1 + r**2)**(-self.decay / 2)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -self.amplitude * self.decay * r * (1 + r**2)**(-self.decay / 2 - 1)

    def moment(self, x):
        x = np.asarray(x, dtype=float)
        if np.isclose(self.decay, 2):
            return self.amplitude / 2 * np.log1p(x**2)
        return self.amplitude * ((1 + x**2)**(1 - self.decay / 2) - 1) / (2 - self.decay)


# profiles that can be requested by name
class ProfileKind(utils.FuncEnum, metaclass=utils.MetaEnum):
    GAUSSIAN = partial(Gaussian)
    BUMP = partial(Bump)
    TAIL = partial(Tail)
    ZERO = partial(Zero)


@dataclass(frozen=True)
class DataProfile:
    position: Profile
    velocity: Profile = field(default_factory=Zero)

    def support(self):
        return max(self.position.support(), self.velocity.support())

    def describe(self):
        return {'position': self.position.describe(), 'velocity': self.velocity.describe()}


def as_data(profile):
    return profile if isinstance(profile, DataProfile) else DataProfile(profile)


def profile_from_description(desc):
    # inverse of Profile.describe(); FuncEnum can't pass kwargs
    desc = dict(desc)
    kind = desc.pop('kind')
    return ProfileKind[kind].value(**desc)


def data_from_description(desc):
    return DataProfile(profile_from_description(desc['position']),
                       profile_from_description(desc['velocity']))


## ---------- Grid and states ---------- ##

@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    n: int
    cfl: float = 0.5

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"radial grid needs at least 16 cells, got n={self.n}")
        if not (0 < self.cfl <= 1):
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.r_max <= 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")

    @property
    def dr(self):
        return self.r_max / self.n

    @property
    def dt(self):
        return self.cfl * self.dr

    @cached_property
    def r(self):
        r = np.arange(self.n + 1) * self.dr
        r.setflags(write=False)
        return r

    @classmethod
    def from_spacing(cls, r_max, dr, cfl=0.5):
        return cls(r_max, int(round(r_max / dr)), cfl)

    def refine(self, k):
        return RadialGrid(self.r_max, int(self.n * k), self.cfl)

    def guard_violation(self, T, r_obs, r_supp):
        # boundary values never reach observed data
        need = r_obs + T + r_supp
        if self.r_max < need:
            return f"r_max={self.r_max:g} is below the domain-of-dependence bound {need:g} (R_obs={r_obs:g} + T={T:g} + R_supp={r_supp:g})"
        return None

    def as_dict(self):
        return {'r_max': self.r_max, 'n': self.n, 'cfl': self.cfl}


def radial_quotient(x, r):
    """x / r on the nodes, with the even extrapolation
    1.5 f1 - 0.6 f2 + 0.1 f3 at the origin."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[..., 1:] = x[..., 1:] / r[1:]
    out[..., 0] = 1.5 * out[..., 1] - 0.6 * out[..., 2] + 0.1 * out[..., 3]
    return out


@dataclass(frozen=True)
class FieldState:
    t: float
    psi: np.ndarray = field(repr=False)
    pi: np.ndarray = field(repr=False)

    def phi(self, grid):
        return radial_quotient(self.psi, grid.r)

    def phi_t(self, grid):
        return radial_quotient(self.pi, grid.r)


def init_state(profile, grid, params=None, require_finite=False):
    data = as_data(profile)
    if require_finite:
        if params is None:
            raise ValueError("checking weighted-norm finiteness needs the power parameters")
        # tails A r^{-q} are admitted only for q > (gamma0+3)/2
        limit = (params.gamma0 + 3) / 2
        for which, prof in (('position', data.position), ('velocity', data.velocity)):
            if prof.decay <= limit:
                raise utils.DivergenceError(
                    f"{which} tail decay q={prof.decay:g} <= {limit:g}: the first order weighted energy diverges for gamma0={params.gamma0:g}")
    r = grid.r
    psi = r * data.position(r)
    pi = r * data.velocity(r)
    psi[0] = 0.0
    pi[0] = 0.0
    return FieldState(0.0, psi, pi)


## ---------- Time stepping ---------- ##

def _acceleration(psi, grid, p, coeff, linear):
    acc = np.zeros_like(psi)
    acc[1:-1] = (psi[2:] - 2 * psi[1:-1] + psi[:-2]) / grid.dr**2
    if not linear:
        r = grid.r[1:-1]
        phi = psi[1:-1] / r
        acc[1:-1] -= coeff * r * np.abs(phi)**(p - 1) * phi
    return acc


def _verlet(state, grid, dt, accel, mask=None):
    half = state.pi + 0.5 * dt * accel(state.psi, state.t)
    psi = state.psi + dt * half
    psi[0] = 0.0
    # first order upwind outflow at r_max
    psi[-1] = state.psi[-1] - dt * (state.psi[-1] - state.psi[-2]) / grid.dr
    pi = half + 0.5 * dt * accel(psi, state.t + dt)
    pi[0] = 0.0
    pi[-1] = (psi[-1] - state.psi[-1]) / dt
    if mask is not None:
        # frozen nodes keep their values
        psi = np.where(mask, psi, state.psi)
        pi = np.where(mask, pi, state.pi)
    if not (np.isfinite(psi).all() and np.isfinite(pi).all()):
        raise utils.BlowupError(state.t + dt, 'leapfrog update')
    return FieldState(state.t + dt, psi, pi)


def step(state, params, grid, linear=False, dt=None):
    """One Stormer-Verlet step of psi_tt = psi_rr - r |psi/r|^{p-1} psi/r."""
    dt = grid.dt if dt is None else dt
    p = None if params is None else params.p
    if not linear and p is None:
        raise ValueError("the nonlinear step needs the power parameters")
    return _verlet(state, grid, dt, lambda psi, t: _acceleration(psi, grid, p, 1.0, linear))


def compact_coefficient(R, t, r, p):
    # Lambda^{3-p} = (u_* v_*)^{p-3}
    w = geometry.compact_cone_weights(R, t, r)
    return (np.asarray(w.u_star) * np.asarray(w.v_star))**(p - 3)


def step_compact(state, params, grid, R, ceiling=utils.LAMBDA_CEILING, linear=False, dt=None):
    """One step of the compact-cone equation with coefficient Lambda^{3-p}.

    Only nodes at least half a cell inside the cone at the end of the step
    are updated; the rest keep their values.
    """
    dt = grid.dt if dt is None else dt
    if state.t + dt >= R:
        raise ValueError(f"step to t={state.t + dt:g} leaves the cone of height R={R:g}")
    r = grid.r
    active = r < R - (state.t + dt) - grid.dr / 2
    active[0] = True
    inner = active[1:-1]
    r_in = r[1:-1][inner]
    peak = 0.0
    if not linear and r_in.size > 0:
        for t in (state.t, state.t + dt):
            peak = max(peak, float(np.max(compact_coefficient(R, t, r_in, params.p))))
        if peak > ceiling:
            raise utils.TruncationError(state.t, peak)

    def accel(psi, t):
        coeff = np.zeros(r.size - 2)
        if not linear:
            coeff[inner] = compact_coefficient(R, t, r_in, params.p)
        acc = _acceleration(psi, grid, params.p if params is not None else None, coeff, linear)
        acc[~active] = 0.0
        return acc

    mask = active.copy()
    mask[-1] = False
    return _verlet(state, grid, dt, accel, mask=mask)


@dataclass(eq=False)
class Trajectory:
    grid: RadialGrid
    params: PowerParams
    times: np.ndarray
    psi: np.ndarray = field(repr=False)
    pi: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        assert self.psi.shape == (self.times.size, self.grid.n + 1), 'snapshots do not match the grid'

    @classmethod
    def from_states(cls, states, grid, params, metadata=None):
        return cls(grid, params, np.array([s.t for s in states]),
                   np.stack([s.psi for s in states]), np.stack([s.pi for s in states]),
                   dict(metadata or {}))

    def __len__(self):
        return self.times.size

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def linear(self):
        return bool(self.metadata.get('linear', False))

    @property
    def compact(self):
        return self.metadata.get('variant', 'full') == 'compact'

    def snapshot(self, k):
        return FieldState(float(self.times[k]), self.psi[k], self.pi[k])

    @property
    def snapshots(self):
        return [self.snapshot(k) for k in range(len(self))]

    @cached_property
    def phi(self):
        return radial_quotient(self.psi, self.grid.r)

    @cached_property
    def phi_t(self):
        return radial_quotient(self.pi, self.grid.r)

    @cached_property
    def phi_r(self):
        out = np.gradient(self.phi, self.grid.dr, axis=1, edge_order=2)
        # phi is even in r
        out[:, 0] = 0.0
        return out

    @cached_property
    def interpolator(self):
        return FieldInterpolator(self)


def _drive(state0, T, cadence, grid, advance, progress, desc):
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got T={T}")
    if cadence <= 0:
        raise ValueError(f"snapshot cadence must be positive, got {cadence}")
    states = [state0]
    if T == 0:
        return states, None
    stride = max(1, int(round(cadence / grid.dt)))
    n_steps = int(np.ceil(T / grid.dt - 1e-9))
    state = state0
    for k in tqdm(range(1, n_steps + 1), total=n_steps, unit='step', desc=desc, disable=not progress):
        t_next = T if k == n_steps else state0.t + k * grid.dt
        try:
            state = advance(state, t_next - state.t)
        except utils.TruncationError as err:
            return states, err
        state = replace(state, t=t_next)
        if k % stride == 0 or k == n_steps:
            states.append(state)
    return states, None


def evolve(state0, T, cadence, params, grid, linear=False, profile=None, progress=False):
    states, _ = _drive(state0, T, cadence, grid,
                       lambda s, dt: step(s, params, grid, linear=linear, dt=dt),
                       progress, 'evolve')
    meta = {'profile': None if profile is None else as_data(profile).describe(),
            'scheme_order': 2, 'linear': bool(linear), 'variant': 'full',
            'cone_height': None, 'truncated': False, 'truncated_at': None}
    return Trajectory.from_states(states, grid, params, meta)


def evolve_compact(state0, T, cadence, params, grid, R, ceiling=utils.LAMBDA_CEILING,
                   linear=False, profile=None, progress=False):
    # stops at the first refused step and flags the trajectory truncated
    if T >= R:
        raise ValueError(f"horizon T={T:g} must stay below the cone height R={R:g}")
    states, err = _drive(state0, T, cadence, grid,
                         lambda s, dt: step_compact(s, params, grid, R, ceiling=ceiling, linear=linear, dt=dt),
                         progress, 'evolve compact')
    meta = {'profile': None if profile is None else as_data(profile).describe(),
            'scheme_order': 2, 'linear': bool(linear), 'variant': 'compact',
            'cone_height': float(R), 'truncated': err is not None,
            'truncated_at': None if err is None else err.t}
    return Trajectory.from_states(states, grid, params, meta)


## ---------- Exact linear oracle ---------- ##

def dalembert_linear(phi0, phi1, t, r):
    """Exact radial solution of the free wave equation.

    psi = r phi is the odd extension solved by d'Alembert; the velocity
    integral uses the closed form moment of the profile. At r = 0 the limit
    phi0(t) + t phi0'(t) + t phi1(t) is returned.
    """
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    plus, minus = r + t, r - t

    def odd(x):
        return x * phi0(np.abs(x))

    psi = 0.5 * (odd(plus) + odd(minus)) + 0.5 * (phi1.moment(np.abs(plus)) - phi1.moment(np.abs(minus)))
    with np.errstate(invalid='ignore', divide='ignore'):
        out = np.where(r > 0, psi / np.where(r > 0, r, 1.0),
                       phi0(t) + t * phi0.derivative(t) + t * phi1(t))
    return float(out) if out.ndim == 0 else out


## ---------- Interpolation ---------- ##

class FieldInterpolator:
    """Bilinear (t, r) interpolation of phi, phi_t, phi_r from a trajectory,
    plus a cubic one for phi (four-point Lagrange in r, Lagrange in t)."""

    def __init__(self, traj):
        self.traj = traj
        self.times = traj.times
        self.dr = traj.grid.dr
        self.n = traj.grid.n

    def check_domain(self, t, r, what='sample'):
        t, r = np.asarray(t), np.asarray(r)
        tol = 1e-9 * max(1.0, self.traj.T)
        if t.size and (t.min() < self.times[0] - tol or t.max() > self.times[-1] + tol):
            raise ValueError(f"{what} time outside the trajectory [{self.times[0]:g}, {self.times[-1]:g}]")
        if r.size and (r.min() < -tol or r.max() > self.traj.grid.r_max + tol):
            raise ValueError(f"{what} radius outside the grid [0, {self.traj.grid.r_max:g}]")

    def _locate_t(self, t):
        if self.times.size == 1:
            return np.zeros(np.shape(t), dtype=int), np.zeros(np.shape(t))
        k = np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, self.times.size - 2)
        h = self.times[k + 1] - self.times[k]
        return k, np.clip((t - self.times[k]) / h, 0.0, 1.0)

    def _bilinear(self, arr, t, r):
        k, wt = self._locate_t(t)
        x = np.clip(r / self.dr, 0.0, self.n)
        i = np.clip(np.floor(x).astype(int), 0, self.n - 1)
        wr = x - i
        k1 = np.minimum(k + 1, self.times.size - 1)
        lo = (1 - wr) * arr[k, i] + wr * arr[k, i + 1]
        hi = (1 - wr) * arr[k1, i] + wr * arr[k1, i + 1]
        return (1 - wt) * lo + wt * hi

    def phi(self, t, r):
        t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
        self.check_domain(t, r)
        return self._bilinear(self.traj.phi, t, r)

    def values(self, t, r):
        # (phi, phi_t, phi_r)
        t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
        self.check_domain(t, r)
        return tuple(self._bilinear(a, t, r) for a in (self.traj.phi, self.traj.phi_t, self.traj.phi_r))

    def _lagrange(self, arr, k, i0, x):
        w0 = -(x - 1) * (x - 2) * (x - 3) / 6
        w1 = x * (x - 2) * (x - 3) / 2
        w2 = -x * (x - 1) * (x - 3) / 2
        w3 = x * (x - 1) * (x - 2) / 6
        return w0 * arr[k, i0] + w1 * arr[k, i0 + 1] + w2 * arr[k, i0 + 2] + w3 * arr[k, i0 + 3]

    def phi_cubic(self, t, r):
        """Four-point Lagrange in r and in t. Short trajectories fall back
        to Hermite in t with the stored phi_t."""
        t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
        self.check_domain(t, r)
        i0 = np.clip(np.floor(r / self.dr).astype(int) - 1, 0, self.n - 3)
        x = r / self.dr - i0
        if self.times.size == 1:
            return self._lagrange(self.traj.phi, np.zeros_like(i0), i0, x)
        if self.times.size >= 4:
            # phi_t is stored to second order only, so t uses values alone
            k, _ = self._locate_t(t)
            k0 = np.clip(k - 1, 0, self.times.size - 4)
            nodes = [self.times[k0 + j] for j in range(4)]
            out = np.zeros(np.shape(t))
            for j in range(4):
                weight = np.ones(np.shape(t))
                for m in range(4):
                    if m != j:
                        weight = weight * (t - nodes[m]) / (nodes[j] - nodes[m])
                out = out + weight * self._lagrange(self.traj.phi, k0 + j, i0, x)
            return out
        k, s = self._locate_t(t)
        h = self.times[k + 1] - self.times[k]
        f0 = self._lagrange(self.traj.phi, k, i0, x)
        f1 = self._lagrange(self.traj.phi, k + 1, i0, x)
        d0 = self._lagrange(self.traj.phi_t, k, i0, x)
        d1 = self._lagrange(self.traj.phi_t, k + 1, i0, x)
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1


## ---------- Persistence ---------- ##

HEADER = np.dtype([('magic', 'S4'), ('version', '<u4'), ('n', '<u8'), ('t', '<f8'),
                   ('dr', '<f8'), ('dt', '<f8'), ('p', '<f8'), ('gamma0', '<f8')])


def write_snapshot(fh, t, psi, pi, dr, dt, params=None, image=False):
    head = np.zeros(1, dtype=HEADER)
    head['magic'] = utils.SNAPSHOT_MAGIC
    head['version'] = utils.FORMAT_VERSION | (utils.IMAGE_FLAG if image else 0)
    head['n'] = len(psi) - 1
    head['t'] = t
    head['dr'] = dr
    head['dt'] = dt
    head['p'] = np.nan if params is None else params.p
    head['gamma0'] = np.nan if params is None else params.gamma0
    blob = head.tobytes() + np.asarray(psi, dtype='<f8').tobytes() + np.asarray(pi, dtype='<f8').tobytes()
    fh.write(blob)
    return len(blob)


def read_snapshot(fh):
    raw = fh.read(HEADER.itemsize)
    if len(raw) < HEADER.itemsize:
        raise EOFError("truncated snapshot header")
    head = np.frombuffer(raw, dtype=HEADER)[0]
    if head['magic'] != utils.SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {head['magic']!r}")
    version = int(head['version'])
    if version & 0xFFFF != utils.FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot format version {version & 0xFFFF}")
    n = int(head['n'])
    body = np.frombuffer(fh.read(16 * (n + 1)), dtype='<f8')
    if body.size != 2 * (n + 1):
        raise EOFError("truncated snapshot body")
    info = {name: head[name].item() for name in HEADER.names if name != 'magic'}
    info['version'] = version & 0xFFFF
    info['image'] = bool(version & utils.IMAGE_FLAG)
    return info, body[:n + 1].copy(), body[n + 1:].copy()


def save_trajectory(traj, directory, stem='trajectory'):
    os.makedirs(directory, exist_ok=True)
    binpath = f"{directory}/{stem}.bin"
    offsets = []
    with open(binpath, 'wb') as f:
        pos = 0
        for k in range(len(traj)):
            offsets.append(pos)
            pos += write_snapshot(f, traj.times[k], traj.psi[k], traj.pi[k],
                                  traj.grid.dr, traj.grid.dt, traj.params)
    with open(f"{directory}/{stem}.manifest", 'w') as f:
        for k, off in enumerate(offsets):
            f.write(f"{k} {off} {traj.times[k]!r}\n")
    utils.write_json({'grid': traj.grid.as_dict(),
                      'params': None if traj.params is None else traj.params.as_dict(),
                      'metadata': traj.metadata}, f"{directory}/{stem}.json")
    return binpath


def load_trajectory(directory, stem='trajectory'):
    meta = utils.read_json(f"{directory}/{stem}.json")
    grid = RadialGrid(**meta['grid'])
    params = None if meta['params'] is None else PowerParams(**meta['params'])
    with open(f"{directory}/{stem}.manifest") as f:
        offsets = [int(line.split()[1]) for line in f if line.strip()]
    states = []
    with open(f"{directory}/{stem}.bin", 'rb') as f:
        for off in offsets:
            f.seek(off)
            info, psi, pi = read_snapshot(f)
            if info['n'] != grid.n:
                raise ValueError(f"snapshot at offset {off} has n={info['n']}, expected {grid.n}")
            states.append(FieldState(info['t'], psi, pi))
    return Trajectory.from_states(states, grid, params, meta['metadata'])
