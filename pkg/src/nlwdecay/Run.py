# nlwdecay packages
import nlwdecay.Utils as utils
from nlwdecay.Utils import paths
import nlwdecay.Solver as solver
import nlwdecay.Geometry as geometry
import nlwdecay.Energies as energies
import nlwdecay.Conformal as conformal
import nlwdecay.Analysis as analysis
import nlwdecay.Verify as verify
from nlwdecay.Solver import ProfileKind
from nlwdecay.Energies import MultiplierKind, MultiplierSpec

# stats packages
import numpy as np
import pandas as pd

# miscellaneous packages
import os
import sys
import argparse
import warnings
import itertools
import configparser
import multiprocessing
from tqdm import tqdm
from functools import partial
from dataclasses import dataclass, field, replace, asdict


## ---------- Configuration ---------- ##

DIAGNOSTICS = ['energy', 'cone_flux', 'outgoing_flux', 'hyperboloid', 'pecher', 'identity',
               'representation', 'decay', 'scattering', 'conformal']


@dataclass(frozen=True)
class ExperimentConfig:
    # [equation]
    variant: str = 'full'
    linear: bool = False
    cone_height: float = None
    ceiling: float = utils.LAMBDA_CEILING
    # [power]
    p: float = 3.0
    gamma0: float = 1.5
    epsilon: float = None
    # [grid]
    r_max: float = 64.0
    dr: float = 1 / 256
    cfl: float = 0.5
    r_obs: float = 0.0
    # [data]
    position: str = 'gaussian'
    position_args: dict = field(default_factory=lambda: {'amplitude': 1.0, 'width': 1.0})
    velocity: str = 'zero'
    velocity_args: dict = field(default_factory=dict)
    # [run]
    T: float = 40.0
    cadence: float = None
    jobs: int = 0
    # [sweep]
    amplitudes: tuple = ()
    ps: tuple = ()
    gamma0s: tuple = ()
    apex_n_t: int = 10
    apex_n_r: int = 10
    # [diagnostics]
    diagnostics: tuple = ()
    cone_gamma: float = None
    null_lines: tuple = ()
    representation_apex: tuple = (5.0, 2.0)
    fit_t_lo: float = 10.0
    fit_t_hi: float = 80.0
    fit_null_bands: tuple = (0.5, 1.0, 1.5)
    fit_radii: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    out: str = paths.RUNS

    @property
    def params(self):
        return geometry.PowerParams(self.p, self.gamma0, self.epsilon)

    @property
    def grid(self):
        return solver.RadialGrid.from_spacing(self.r_max, self.dr, self.cfl)

    @property
    def data(self):
        return solver.DataProfile(ProfileKind[self.position].value(**self.position_args),
                                  ProfileKind[self.velocity].value(**self.velocity_args))

    @property
    def snapshot_cadence(self):
        return 4 * self.grid.dt if self.cadence is None else self.cadence

    def points(self):
        """One config per point of the amplitude x p x gamma0 sweep."""
        amps = self.amplitudes or (self.position_args.get('amplitude', 1.0),)
        ps = self.ps or (self.p,)
        gs = self.gamma0s or (self.gamma0,)
        out = []
        for a, p, g in itertools.product(amps, ps, gs):
            pos = dict(self.position_args)
            if 'amplitude' in pos or self.amplitudes:
                pos['amplitude'] = a
            out.append(replace(self, p=p, gamma0=g, position_args=pos,
                               amplitudes=(), ps=(), gamma0s=()))
        return out

    def as_dict(self):
        return asdict(self)


def _floats(text):
    return tuple(float(x) for x in text.replace(',', ' ').split())


def _profile_args(section, prefix):
    return {k[len(prefix) + 1:]: float(v) for k, v in section.items() if k.startswith(prefix + '_')}


def parse_config(path):
    """configparser INI -> dict of ExperimentConfig fields; every unreadable
    value is reported at once."""
    if not os.path.isfile(path):
        raise utils.ConfigError([f"config file {path} does not exist"])
    cp = configparser.ConfigParser()
    cp.read(path)
    kw, issues = {}, []

    def get(section, key, conv, dest=None):
        if cp.has_option(section, key):
            raw = cp.get(section, key).strip()
            if raw == '':
                return
            try:
                kw[dest or key] = conv(raw)
            except ValueError as e:
                issues.append(f"[{section}] {key} = {raw!r}: {e}")

    def boolean(raw):
        if raw.lower() not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError("not a boolean")
        return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]

    get('equation', 'variant', str.lower)
    get('equation', 'linear', boolean)
    get('equation', 'cone_height', float)
    get('equation', 'ceiling', float)
    for key in ('p', 'gamma0', 'epsilon'):
        get('power', key, float)
    for key in ('r_max', 'dr', 'cfl', 'r_obs'):
        get('grid', key, float)
    if cp.has_section('data'):
        sec = cp['data']
        for which in ('position', 'velocity'):
            get('data', which, str.lower)
            try:
                args = _profile_args(sec, which)
                if len(args) > 0 or which in kw:
                    kw[f"{which}_args"] = args
            except ValueError as e:
                issues.append(f"[data] {which} arguments: {e}")
    get('run', 'T', float)
    get('run', 'cadence', float)
    get('run', 'jobs', int)
    get('sweep', 'amplitude', _floats, 'amplitudes')
    get('sweep', 'p', _floats, 'ps')
    get('sweep', 'gamma0', _floats, 'gamma0s')
    get('sweep', 'apex_n_t', int)
    get('sweep', 'apex_n_r', int)
    get('diagnostics', 'enabled', lambda s: tuple(x.strip().lower() for x in s.split(',') if x.strip()), 'diagnostics')
    get('diagnostics', 'cone_gamma', float)
    get('diagnostics', 'null_lines', _floats)
    get('diagnostics', 'representation_apex', _floats)
    get('diagnostics', 'fit_t_lo', float)
    get('diagnostics', 'fit_t_hi', float)
    get('diagnostics', 'fit_null_bands', _floats)
    get('diagnostics', 'fit_radii', _floats)
    return kw, issues


def config_violations(cfg):
    issues = []
    if cfg.variant not in ('full', 'compact'):
        issues.append(f"variant={cfg.variant!r} must be 'full' or 'compact'")
    if cfg.variant == 'compact' and (cfg.cone_height is None or cfg.cone_height <= cfg.T):
        issues.append(f"compact variant needs cone_height > T={cfg.T:g}, got {cfg.cone_height}")
    if cfg.T < 0:
        issues.append(f"T={cfg.T} must be nonnegative")
    if cfg.cadence is not None and cfg.cadence <= 0:
        issues.append(f"cadence={cfg.cadence} must be positive")
    if cfg.jobs < 0:
        issues.append(f"jobs={cfg.jobs} must be nonnegative (0 means all cores)")
    for name in cfg.diagnostics:
        if name not in DIAGNOSTICS:
            issues.append(f"unknown diagnostic {name!r}, choose from {DIAGNOSTICS}")
    try:
        analysis.Window(cfg.fit_t_lo, cfg.fit_t_hi, cfg.fit_null_bands, cfg.fit_radii)
    except ValueError as e:
        issues.append(f"decay-fit window: {e}")
    if len(cfg.representation_apex) != 2:
        issues.append("representation_apex needs two values t0, r0")
    try:
        grid = cfg.grid
    except ValueError as e:
        issues.append(str(e))
        grid = None
    for which in ('position', 'velocity'):
        kind = getattr(cfg, which)
        if kind.upper() not in ProfileKind.valid():
            issues.append(f"{which} profile {kind!r} must be one of {[k.lower() for k in ProfileKind.valid()]}")
    for pt in cfg.points():
        label = f"point (A={pt.position_args.get('amplitude', '-')}, p={pt.p:g}, gamma0={pt.gamma0:g})"
        issues.extend(f"{label}: {msg}" for msg in geometry.power_violations(pt.p, pt.gamma0, pt.epsilon))
        try:
            data = pt.data
        except (ValueError, TypeError) as e:
            issues.append(f"{label}: data profile: {e}")
            continue
        if grid is not None:
            msg = grid.guard_violation(pt.T, pt.r_obs, data.support())
            if msg is not None:
                issues.append(f"{label}: {msg}")
        limit = (pt.gamma0 + 3) / 2
        for which, prof in (('position', data.position), ('velocity', data.velocity)):
            if prof.decay <= limit:
                issues.append(f"{label}: {which} tail decay q={prof.decay:g} must exceed (gamma0+3)/2={limit:g}")
    return issues


def load_config(path, out=None, jobs=None, grid_scale=1):
    kw, issues = parse_config(path)
    try:
        cfg = ExperimentConfig(**kw)
    except (TypeError, ValueError) as e:
        raise utils.ConfigError(issues + [str(e)])
    if out is not None:
        cfg = replace(cfg, out=out)
    if jobs is not None:
        cfg = replace(cfg, jobs=jobs)
    if grid_scale != 1:
        if grid_scale <= 0:
            issues.append(f"grid scale must be positive, got {grid_scale}")
        else:
            cfg = replace(cfg, dr=cfg.dr / grid_scale)
    issues.extend(config_violations(cfg))
    utils.check_violations(issues)
    return cfg


## ---------- Diagnostics ---------- ##

# each diagnostic takes (traj, cfg, outdir), may write
# a CSV into outdir and returns a dict of summary scalars

def _energy(traj, cfg, outdir):
    rep = energies.energy_report(traj, profile=cfg.data, us=cfg.null_lines)
    rep.write_csv(f"{outdir}/energy.csv")
    E = rep.E_conserved
    return {'E0': E[0], 'drift': float(np.max(np.abs(E - E[0])) / E[0]) if E[0] > 0 else 0.0,
            'E0g': rep.E_weighted_k0, 'E1g': rep.E_weighted_k1,
            'spacetime_acc': float(rep.spacetime_acc[-1])}


def _cone_flux(traj, cfg, outdir):
    gamma = (1 + cfg.gamma0) / 2 if cfg.cone_gamma is None else cfg.cone_gamma
    sup = energies.cone_flux_sup(traj, gamma, energies.apex_grid(traj, cfg.apex_n_t, cfg.apex_n_r))
    utils.write_csv(sup.table, f"{outdir}/cone_flux.csv")
    E0g = energies.weighted_initial_energy(traj.snapshot(0), traj.params, traj.grid, 0)
    return {'cone_sup': sup.sup, 'cone_sup_t0': sup.apex[0], 'cone_sup_r0': sup.apex[1],
            'cone_sup_ratio': sup.sup / E0g if E0g > 0 else np.nan}


def _outgoing_flux(traj, cfg, outdir):
    us = cfg.null_lines or tuple(np.linspace(-traj.T / 4, 0.0, 5))
    slope, fluxes = energies.outgoing_flux_decay(traj, us)
    utils.write_csv({'u': list(us), 'flux': list(fluxes)}, f"{outdir}/outgoing_flux.csv")
    return {'outgoing_slope': slope}


def _hyperboloid(traj, cfg, outdir):
    hyp = energies.hyperboloid_flux(traj)
    return {'hyperboloid_total': hyp.total, 'hyperboloid_energy': hyp.energy,
            'hyperboloid_truncated': hyp.truncated}


def _pecher(traj, cfg, outdir):
    fit = energies.pecher_rate_check(traj)
    return {'pecher_slope': fit.slope, 'pecher_theory': fit.theory, 'pecher_within': fit.within}


def _identity(traj, cfg, outdir):
    if traj.compact:
        R = traj.metadata['cone_height']
        t1 = min(traj.T, 0.45 * R)
        audits = {'compact': (MultiplierSpec(MultiplierKind.COMPACT, 0.5, R), energies.backward_cone(0.9 * R, t1))}
    else:
        t1 = min(traj.T, traj.grid.r_max / 2)
        slab = energies.time_slab(0.0, t1, traj.grid.r_max / 2)
        audits = {'classical': (MultiplierSpec(MultiplierKind.CLASSICAL), slab),
                  'rweighted': (MultiplierSpec(MultiplierKind.RWEIGHTED, cfg.gamma0), slab),
                  'exterior': (MultiplierSpec(MultiplierKind.EXTERIOR, 1.5),
                               energies.exterior_domain(-traj.grid.r_max / 4, 0.0, t1))}
    rows, out = [], {}
    for name, (mult, region) in audits.items():
        audit = energies.energy_identity_residual(traj, mult, region)
        rows.append({'multiplier': name, 'region': region.name, 'bulk': audit.bulk,
                     'residual': audit.residual, **audit.pieces})
        out[f"identity_{name}"] = audit.residual
    utils.write_csv(rows, f"{outdir}/identity.csv")
    return out


def _representation(traj, cfg, outdir):
    chk = analysis.representation_check(traj, cfg.representation_apex, cfg.data)
    return {'repr_reconstructed': chk.reconstructed, 'repr_solver': chk.solver,
            'repr_discrepancy': chk.discrepancy}


def _decay(traj, cfg, outdir):
    window = analysis.Window(cfg.fit_t_lo, cfg.fit_t_hi, cfg.fit_null_bands, cfg.fit_radii)
    fit = analysis.fit_decay(traj, window)
    cmp = analysis.theorem_compare(fit, traj.params, window.region())
    return {'fit_a': fit.a, 'fit_b': fit.b, 'fit_residual': fit.residual, 'fit_reliable': fit.reliable,
            'a_theory': cmp.a_theory, 'b_theory': cmp.b_theory, 'fit_pass': cmp.passed,
            'pointwise_reference': cmp.pointwise_reference}


def _scattering(traj, cfg, outdir):
    rep = analysis.scattering_report(traj)
    return {'p_star': rep.p_star, 'mixed_norm': rep.mixed_norm_partial, 'mixed_norm_converged': rep.converged}


def _conformal(traj, cfg, outdir):
    _, ratio = conformal.hyperboloid_image_energy(traj)
    out = {'image_energy_ratio': ratio}
    try:
        res = conformal.conformal_residual(traj, conformal.image_grid_for(traj))
        out['conformal_residual'] = res.max_rel
    except ValueError as e:
        warnings.warn(f"conformal residual skipped: {e}")
        out['conformal_residual'] = np.nan
    return out


class Diagnostic(utils.FuncEnum, metaclass=utils.MetaEnum):
    ENERGY = partial(_energy)
    CONE_FLUX = partial(_cone_flux)
    OUTGOING_FLUX = partial(_outgoing_flux)
    HYPERBOLOID = partial(_hyperboloid)
    PECHER = partial(_pecher)
    IDENTITY = partial(_identity)
    REPRESENTATION = partial(_representation)
    DECAY = partial(_decay)
    SCATTERING = partial(_scattering)
    CONFORMAL = partial(_conformal)


## ---------- Running sweep points ---------- ##

def trajectory_for(cfg, outdir, progress=False):
    """Evolve and persist, or reload a persisted trajectory whose
    config hash matches."""
    key = utils.config_hash(cfg.as_dict())
    stamp = f"{outdir}/config.json"
    if os.path.isfile(stamp) and os.path.isfile(f"{outdir}/trajectory.json"):
        if utils.read_json(stamp).get('hash') == key:
            return solver.load_trajectory(outdir), True
    os.makedirs(outdir, exist_ok=True)
    grid, params, data = cfg.grid, cfg.params, cfg.data
    state0 = solver.init_state(data, grid, params, require_finite=True)
    if cfg.variant == 'compact':
        traj = solver.evolve_compact(state0, cfg.T, cfg.snapshot_cadence, params, grid, cfg.cone_height,
                                     ceiling=cfg.ceiling, linear=cfg.linear, profile=data, progress=progress)
    else:
        traj = solver.evolve(state0, cfg.T, cfg.snapshot_cadence, params, grid, linear=cfg.linear,
                             profile=data, progress=progress)
    solver.save_trajectory(traj, outdir)
    utils.write_json({'hash': key, 'config': cfg.as_dict()}, stamp)
    return traj, False


def run_point(index, cfg, progress=False):
    outdir = f"{cfg.out}/point_{index:03d}"
    row = {'point': index, 'amplitude': cfg.position_args.get('amplitude', np.nan),
           'p': cfg.p, 'gamma0': cfg.gamma0, 'status': 'ok'}
    try:
        traj, resumed = trajectory_for(cfg, outdir, progress=progress)
    except (FloatingPointError, ValueError) as e:
        return {**row, 'status': f"evolve failed: {e}"}
    row['resumed'] = resumed
    row['truncated'] = bool(traj.metadata.get('truncated', False))
    for name in cfg.diagnostics:
        try:
            row.update(Diagnostic[name](traj, cfg, outdir))
        except (ValueError, FloatingPointError) as e:
            row['status'] = f"{name} failed: {e}"
    return row


def run_sweep(cfg, progress=True):
    points = list(enumerate(cfg.points()))
    jobs = min(cfg.jobs or multiprocessing.cpu_count(), len(points))
    if jobs <= 1:
        rows = [run_point(i, pt, progress) for i, pt in tqdm(points, desc='sweep', disable=not progress)]
    else:
        rows = utils.fan_out(run_point, [(i, pt, False) for i, pt in points], jobs)
    return pd.DataFrame(sorted(rows, key=lambda r: r['point']))


def write_summary(table, path):
    with open(path, 'w') as f:
        f.write(f"{len(table)} sweep point(s), {int((table.status != 'ok').sum())} failed\n")
        for _, row in table.iterrows():
            f.write(f"[{row.point:03d}] A={row.amplitude:g} p={row.p:g} gamma0={row.gamma0:g}: {row.status}\n")
            for col in table.columns:
                if col in ('point', 'amplitude', 'p', 'gamma0', 'status'):
                    continue
                val = row[col]
                if isinstance(val, (float, np.floating)):
                    f.write(f"    {col:<24s} {val:.10e}\n")
                elif not pd.isna(val):
                    f.write(f"    {col:<24s} {val}\n")


def run(config_path, out=None, jobs=None, grid_scale=1, progress=True):
    try:
        cfg = load_config(config_path, out=out, jobs=jobs, grid_scale=grid_scale)
    except utils.ConfigError as e:
        print(e)
        return 2
    os.makedirs(cfg.out, exist_ok=True)
    utils.write_json({'hash': utils.config_hash(cfg.as_dict()), 'config': cfg.as_dict()}, f"{cfg.out}/resolved_config.json")
    table = run_sweep(cfg, progress=progress)
    utils.write_csv(table, f"{cfg.out}/summary.csv")
    write_summary(table, f"{cfg.out}/summary.txt")
    failed = int((table.status != 'ok').sum())
    print(f"{len(table)} point(s) written to {cfg.out}, {failed} failed")
    return 1 if failed > 0 else 0


## ---------- Inspecting outputs ---------- ##

def inspect(path):
    if os.path.isdir(path):
        traj = solver.load_trajectory(path)
        print(f"trajectory: {len(traj)} snapshots over t in [{traj.times[0]:g}, {traj.T:g}]")
        print(f"grid: {traj.grid.as_dict()}")
        print(f"params: {None if traj.params is None else traj.params.as_dict()}")
        for k, v in sorted(traj.metadata.items()):
            print(f"  {k}: {v}")
        E = [energies.conserved_energy(s, traj.params.p, traj.grid, traj.linear) for s in (traj.snapshot(0), traj.snapshot(-1))]
        print(f"max|phi| first/last: {np.abs(traj.phi[0]).max():.6e} / {np.abs(traj.phi[-1]).max():.6e}")
        print(f"energy first/last: {E[0]:.10e} / {E[1]:.10e}")
        return 0
    if not os.path.isfile(path):
        print(f"{path} does not exist")
        return 1
    with open(path, 'rb') as f:
        k = 0
        while True:
            try:
                info, psi, pi = solver.read_snapshot(f)
            except EOFError:
                break
            print(f"[{k}] t={info['t']:.6g} n={info['n']} dr={info['dr']:.6g} image={info['image']} "
                  f"max|psi|={np.abs(psi).max():.6e} max|pi|={np.abs(pi).max():.6e}")
            k += 1
    print(f"{k} snapshot(s)")
    return 0


## ---------- main module ---------- ##

def main(argv=None):
    args = argparse.ArgumentParser(prog='nlwdecay', description='Radial defocusing semilinear wave experiments')
    sub = args.add_subparsers(dest='command', required=True)
    run_p = sub.add_parser('run', help='evolve and run diagnostics for a config')
    run_p.add_argument('config', type=str, help='path to an INI experiment config')
    ver_p = sub.add_parser('verify', help='run an acceptance suite')
    ver_p.add_argument('suite', type=str, help='which suite to run', choices=verify.SUITES + ['all'])
    ins_p = sub.add_parser('inspect', help='print a snapshot file or trajectory directory')
    ins_p.add_argument('path', type=str, help='snapshot binary or trajectory directory')
    for p in (run_p, ver_p):
        p.add_argument('--jobs', type=int, default=None, help='worker processes, 0 for all cores')
        p.add_argument('--out', type=str, default=None, help='output directory')
        p.add_argument('--grid-scale', type=float, default=1, help='uniform refinement multiplier for dr')
    args = args.parse_args(argv)
    if args.command == 'run':
        return run(args.config, out=args.out, jobs=args.jobs, grid_scale=args.grid_scale)
    if args.command == 'verify':
        return verify.run_suite(args.suite, out=args.out or paths.VERIFY, jobs=args.jobs, grid_scale=args.grid_scale)
    return inspect(args.path)


if __name__ == "__main__":
    sys.exit(main())
