# nlwdecay packages
import nlwdecay.Utils as utils
import nlwdecay.Solver as solver
import nlwdecay.Geometry as geometry
import nlwdecay.Energies as energies
import nlwdecay.Conformal as conformal
import nlwdecay.Analysis as analysis
import nlwdecay.Lemma_Oracles as oracles
from nlwdecay.Geometry import PowerParams
from nlwdecay.Solver import Gaussian, RadialGrid
from nlwdecay.Energies import MultiplierKind, MultiplierSpec
from nlwdecay.Lemma_Oracles import LemmaId, LemmaSweepConfig

# stats packages
import numpy as np

# miscellaneous packages
import os
import warnings
from dataclasses import dataclass

SUITES = ['conservation', 'oracle-linear', 'identity-audit', 'lemma-sweeps', 'conformal', 'decay',
          'representation', 'uniform-bounds', 'scattering']


@dataclass(frozen=True)
class Criterion:
    name: str
    measured: float
    threshold: float
    relation: str
    passed: bool

    def line(self):
        status = 'PASS' if self.passed else 'FAIL'
        return f"  [{status}] {self.name}: {self.measured:.6g} {self.relation} {self.threshold:.6g}"


def at_most(name, measured, threshold):
    return Criterion(name, float(measured), float(threshold), '<=', bool(measured <= threshold))


def at_least(name, measured, threshold):
    return Criterion(name, float(measured), float(threshold), '>=', bool(measured >= threshold))


def _order(coarse, fine):
    return np.inf if fine == 0 else coarse / fine


## ---------- Suites ---------- ##

def conservation(grid_scale=1, jobs=None):
    params = PowerParams(3.0, 1.5)
    profile = Gaussian(1.0, 1.0)
    drifts = []
    for k in (1, 2):
        grid = RadialGrid.from_spacing(64.0, 1 / (256 * grid_scale * k))
        traj = solver.evolve(solver.init_state(profile, grid), 40.0, 0.5, params, grid, profile=profile)
        E = np.array([energies.conserved_energy(s, params.p, grid) for s in traj.snapshots])
        drifts.append(float(np.max(np.abs(E - E[0])) / E[0]))
    zero = RadialGrid(8.0, 64)
    traj0 = solver.evolve(solver.init_state(solver.Zero(), zero), 2.0, 0.5, params, zero)
    E0 = [energies.conserved_energy(s, params.p, zero) for s in traj0.snapshots]
    return [at_most('relative energy drift', drifts[0], 1e-3),
            at_least('drift reduction under dr halving', _order(*drifts), 3.5),
            at_most('zero data energy', max(E0), 0.0)]


def oracle_linear(grid_scale=1, jobs=None):
    params = PowerParams(3.0, 1.5)
    profile = Gaussian(1.0, 1.0)
    errors = []
    for k in (1, 2):
        grid = RadialGrid.from_spacing(32.0, 1 / (256 * grid_scale * k))
        traj = solver.evolve(solver.init_state(profile, grid), 20.0, 20.0, params, grid, linear=True)
        exact = solver.dalembert_linear(profile, solver.Zero(), traj.T, grid.r)
        errors.append(float(np.max(np.abs(traj.phi[-1] - exact))))
    return [at_most('max-norm error at T=20', errors[0], 5e-4),
            at_least('error reduction under dr halving', _order(*errors), 3.5)]


def _audit_trajectories(dr):
    params = PowerParams(3.0, 1.5)
    full_grid = RadialGrid.from_spacing(32.0, dr)
    prof = Gaussian(1.0, 1.0)
    full = solver.evolve(solver.init_state(prof, full_grid), 10.0, 4 * full_grid.dt, params, full_grid, profile=prof)
    R = 4.0
    cone_grid = RadialGrid.from_spacing(R, dr)
    compact = solver.evolve_compact(solver.init_state(prof, cone_grid), 2.0, cone_grid.dt, params,
                                    cone_grid, R, profile=prof)
    return full, compact


def _audit_residuals(dr):
    full, compact = _audit_trajectories(dr)
    slab = energies.time_slab(0.0, 8.0, 16.0)
    R = compact.metadata['cone_height']
    audits = {
        'CLASSICAL': energies.energy_identity_residual(full, MultiplierSpec(MultiplierKind.CLASSICAL), slab),
        'RWEIGHTED': energies.energy_identity_residual(full, MultiplierSpec(MultiplierKind.RWEIGHTED, 1.5), slab),
        'EXTERIOR': energies.energy_identity_residual(full, MultiplierSpec(MultiplierKind.EXTERIOR, 1.5),
                                                      energies.exterior_domain(-6.0, 0.0, 8.0)),
        'COMPACT': energies.energy_identity_residual(compact, MultiplierSpec(MultiplierKind.COMPACT, 0.5, R),
                                                     energies.backward_cone(0.9 * R, 1.8)),
    }
    return {name: audit.residual for name, audit in audits.items()}


def sign_violations(n=100000, seed=0, tol=1e-12):
    """Worst negative part of the angular coefficient over random samples,
    for the exterior weights on [0, 100]^2 and the compact weights inside
    the unit cone."""
    rng = np.random.default_rng(seed)
    worst = {}
    t, r = rng.uniform(0, 100, n), rng.uniform(0, 100, n)
    for g in (1.1, 1.5, 1.9):
        coef = energies.angular_coefficient(MultiplierSpec(MultiplierKind.EXTERIOR, g), t, r)
        worst[f"exterior gamma={g}"] = (int(np.sum(coef < -tol)), float(min(coef.min(), 0.0)))
    tc = rng.uniform(0, 1, n)
    rc = (1 - tc) * rng.uniform(0, 1, n)
    for g in (0.2, 0.5, 0.8):
        coef = energies.angular_coefficient(MultiplierSpec(MultiplierKind.COMPACT, g, 1.0), tc, rc)
        worst[f"compact gamma={g}"] = (int(np.sum(coef < -tol)), float(min(coef.min(), 0.0)))
    return worst


def identity_audit(grid_scale=1, jobs=None):
    dr = 1 / (32 * grid_scale)
    coarse, fine = utils.fan_out(_audit_residuals, [(dr,), (dr / 2,)], jobs)
    out = []
    for name in coarse:
        c, f = coarse[name], fine[name]
        out.append(at_most(f"{name} identity residual", c, 1e-2))
        out.append(at_least(f"{name} convergence order", np.log2(_order(c, f)), 1.5))
    for name, (count, _) in sign_violations().items():
        out.append(at_most(f"{name} sign violations", count, 0))
    return out


def _sweep_change(cfg, progress):
    base = oracles.constant_sweep(cfg, progress=progress)
    dense = oracles.constant_sweep(cfg.densify(), progress=progress)
    return len(base.table), base.sup, abs(dense.sup - base.sup) / base.sup


def lemma_sweeps(grid_scale=1, jobs=None):
    configs = [LemmaSweepConfig(LemmaId.L33, {'gamma': 1.5, 'alpha': 1.0, 'beta': 1.5}),
               LemmaSweepConfig(LemmaId.L42, {'gamma_prime': 0.5}),
               LemmaSweepConfig(LemmaId.L43, {'gamma': 0.5, 'alpha': 0.5})]
    results = utils.fan_out(_sweep_change, [(cfg, jobs is None) for cfg in configs], jobs)
    out = []
    for cfg, (tuples, sup, change) in zip(configs, results):
        out.append(at_least(f"{cfg.lemma.value} tuples", tuples, 1000))
        out.append(at_most(f"{cfg.lemma.value} sup LHS/RHS", sup, 1e12))
        out.append(at_most(f"{cfg.lemma.value} sup change under densification", change, 0.5))
    out.append(at_least('L33 negative control growth', oracles.negative_control_L33(), 10.0))
    return out


def conformal_suite(grid_scale=1, jobs=None):
    rng = np.random.default_rng(0)
    spec = geometry.HyperboloidSpec()
    t = rng.uniform(0, 50, 10000)
    r = np.minimum(rng.uniform(0, 60, 10000), np.asarray(geometry.hyperboloid_radius(t, spec)) * 0.999)
    chart = conformal.forward_map(t, r, spec)
    tb, rb = conformal.inverse_map(chart.t_tilde, chart.r_tilde, spec)
    scale = np.maximum(1.0, np.abs(t) + r)
    roundtrip = float(np.max((np.abs(tb - t) + np.abs(rb - r)) / scale))
    tj, rj = np.array([0.5, 2.0, 5.0]), np.array([0.3, 1.0, 2.0])
    jac = [float(np.max(conformal.jacobian_check(tj, rj, h))) for h in (1e-3, 5e-4)]
    weq = conformal.weight_equivalence_check(t, r, spec)
    params = PowerParams(3.0, 1.5)
    prof = Gaussian(1.0, 1.0)
    residuals = []
    for k in (1, 2):
        grid = RadialGrid.from_spacing(16.0, 1 / (32 * grid_scale * k))
        traj = solver.evolve(solver.init_state(prof, grid), 6.0, 4 * grid.dt, params, grid, profile=prof)
        image = conformal.image_grid_for(traj, (0.55, 0.7), 0.04)
        residuals.append(conformal.conformal_residual(traj, image).max_rel)
    return [at_most('round-trip map error', roundtrip, 1e-12),
            at_least('Jacobian error reduction under h halving', _order(*jac), 3.0),
            at_most('R*-t~-r~ = 1/(t*+r) identity error', weq.identity_error, 1e-12),
            at_least('weight constant c1', weq.c1, 1e-12),
            at_least('weight constant c3', weq.c3, 1e-12),
            at_least('conformal residual reduction under dr halving', _order(*residuals), 3.0)]


def _decay_run(p, gamma0, dr, progress=False):
    params = PowerParams(p, gamma0)
    prof = Gaussian(1.0, 1.0)
    grid = RadialGrid.from_spacing(176.0, dr)
    traj = solver.evolve(solver.init_state(prof, grid), 80.0, 0.25, params, grid, profile=prof, progress=progress)
    window = analysis.Window(10.0, 80.0)
    fit = analysis.fit_decay(traj, window)
    return analysis.theorem_compare(fit, params, window.region()), fit


def decay(grid_scale=1, jobs=None):
    dr = 1 / (32 * grid_scale)
    progress = jobs is None
    (sup_cmp, sup_fit), (sub_cmp, sub_fit) = utils.fan_out(
        _decay_run, [(4.0, 1.5, dr, progress), (2.4, 1.3, dr, progress)], jobs)
    return [at_most('SUPER |a - 1|', abs(sup_cmp.da), 0.15),
            at_most('SUPER fit residual', sup_fit.residual, utils.FIT_MAX_RESIDUAL),
            at_least('SUB a - (alpha_p gamma0 - 0.15)', sub_cmp.da + 0.15, 0.0),
            at_most('SUB fit residual', sub_fit.residual, utils.FIT_MAX_RESIDUAL)]


def _representation_error(dr):
    params = PowerParams(3.0, 1.5)
    prof = Gaussian(1.0, 1.0)
    grid = RadialGrid.from_spacing(16.0, dr)
    traj = solver.evolve(solver.init_state(prof, grid), 5.0, grid.dt, params, grid, profile=prof)
    return analysis.representation_check(traj, (5.0, 2.0)).discrepancy


def representation(grid_scale=1, jobs=None):
    dr = 1 / (32 * grid_scale)
    coarse, fine = utils.fan_out(_representation_error, [(dr,), (dr / 2,)], jobs)
    return [at_most('representation discrepancy', coarse, 5e-2),
            at_least('discrepancy reduction under dr halving', _order(coarse, fine), 3.0)]


def amplitude_ratios(A, grid, T, cadence, params, gamma, apexes):
    """Flux functionals of A * Gaussian(1, 1) divided by the matching part
    of E_{0,gamma0}, along with their raw ratios to the full norm."""
    prof = Gaussian(A, 1.0)
    state0 = solver.init_state(prof, grid)
    traj = solver.evolve(state0, T, cadence, params, grid, profile=prof)
    quad, pot = energies.weighted_energy_parts(state0, params, grid)
    cone = energies.cone_flux_sup(traj, gamma, apexes).sup
    spacetime = float(energies.spacetime_weighted_integral(traj)[-1])
    hyp = energies.hyperboloid_flux(traj)
    hyp_quad = hyp.weighted + hyp.lbar + hyp.l
    return {'cone': cone / pot, 'spacetime': spacetime / pot, 'hyperboloid': hyp_quad / quad,
            'raw_cone': cone / (quad + pot), 'raw_spacetime': spacetime / (quad + pot),
            'raw_hyperboloid': hyp.total / (quad + pot)}


def uniform_bounds(grid_scale=1, jobs=None):
    params = PowerParams(3.0, 1.5)
    grid = RadialGrid.from_spacing(32.0, 1 / (32 * grid_scale))
    T = 10.0
    apexes = [(t0, r0) for t0 in np.linspace(0, T, 10) for r0 in np.linspace(0, grid.r_max - T, 10)]
    amplitudes = (0.5, 1.0, 2.0, 4.0)
    rows = utils.fan_out(amplitude_ratios, [(A, grid, T, 0.25, params, 1.25, apexes) for A in amplitudes], jobs)
    out = []
    for A, row in zip(amplitudes, rows):
        # raw ratios grow like A^{p-1} through the potential part of the norm
        for key in ('raw_cone', 'raw_spacetime', 'raw_hyperboloid'):
            out.append(at_most(f"A={A:g} {key[4:]} / E0 (reported)", row[key], np.inf))
    for key, norm in (('cone', 'E_pot'), ('spacetime', 'E_pot'), ('hyperboloid', 'E_quad')):
        vals = np.array([row[key] for row in rows])
        out.append(at_most(f"{key} / {norm} spread over amplitudes", vals.max() / vals.min(), 3.0))
    return out


def scattering(grid_scale=1, jobs=None):
    rep = analysis.scattering_report()
    grid = np.linspace(2.2, 2.5, 301)
    increasing = np.all(np.diff([analysis.scattering_f(p) for p in grid]) > 0)
    return [at_least('p* lower bracket', rep.p_star, 2.3541),
            at_most('p* upper bracket', rep.p_star, 2.3542),
            at_most('|f(p*)|', abs(rep.f_at_root), 1e-6),
            at_most('f(2)', analysis.scattering_f(2.0), 0.0),
            at_least('f(3)', analysis.scattering_f(3.0), 0.0),
            at_most('sign changes of f on [2, 3]', rep.sign_changes, 1),
            at_least('f increasing on [2.2, 2.5]', float(increasing), 1.0)]


SUITE_FNS = {'conservation': conservation, 'oracle-linear': oracle_linear, 'identity-audit': identity_audit,
             'lemma-sweeps': lemma_sweeps, 'conformal': conformal_suite, 'decay': decay,
             'representation': representation, 'uniform-bounds': uniform_bounds, 'scattering': scattering}


def run_suite(name, out=utils.paths.VERIFY, jobs=None, grid_scale=1):
    names = SUITES if name == 'all' else [name]
    failed = 0
    rows = []
    for suite in names:
        if suite not in SUITE_FNS:
            raise ValueError(f"unknown suite {suite!r}, choose from {SUITES}")
        print(f"{suite}:")
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            criteria = SUITE_FNS[suite](grid_scale=grid_scale, jobs=jobs)
        for c in criteria:
            print(c.line())
            rows.append({'suite': suite, 'criterion': c.name, 'measured': c.measured,
                         'relation': c.relation, 'threshold': c.threshold, 'passed': c.passed})
        failed += sum(not c.passed for c in criteria)
    os.makedirs(out, exist_ok=True)
    utils.write_csv(rows, f"{out}/verify_{name}.csv")
    print(f"{len(rows) - failed} of {len(rows)} criteria passed")
    return 1 if failed > 0 else 0
