"""Experiment drivers shared by the command line and the scripts in ``scripts/``.

:class:`Setup` converts an :class:`~tweezer_transport.config.ExperimentConfig`
from laboratory units to internal units and builds the problem objects; the
``run_*`` functions execute one study each and return plain result objects.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .config import ExperimentConfig
from .ensemble_oc import (AcceptanceBox, EnsembleProblem, EnsembleSolution, PerturbationSpec, evaluate_fidelity,
                          fidelity, optimize_ensemble, perturb_and_evaluate, run_forward, temperature_trace)
from .lfp import EvolutionRecord
from .model import (ControlSignal, CostWeights, Landscape, NoiseParams, PhysicalConstants, TrapSpec, UnitSystem,
                    escape_momentum, max_tweezer_force, noise_coefficients, target_field, thermal_initial_field)
from .phase_grid import PhaseGrid
from .trajectory_oc import (DeterministicSolution, TransportProblem, bang_bang_time, inverse_dynamics_guess,
                            solve_deterministic)
from .wigner import EpsilonEstimate, estimate_epsilon

log = logging.getLogger(__name__)


@dataclass
class Setup:
    config: ExperimentConfig

    @cached_property
    def units(self) -> UnitSystem:
        sp = self.config.species
        return UnitSystem(PhysicalConstants.for_species(sp.name, sp.mass_amu))

    @property
    def kb_mk(self) -> float:
        """Energy of 1 mK in internal units."""
        return self.units.kb_mk

    def mk(self, value: float) -> float:
        return float(value) * self.kb_mk

    @cached_property
    def landscape(self) -> Landscape:
        t = self.config.traps
        depth = -self.mk(t.depth_mK) if t.attractive else self.mk(t.depth_mK)
        width = self.config.tweezer.sigma_um or t.sigma_um
        return Landscape(TrapSpec(t.x_A, depth, t.sigma_um), TrapSpec(t.x_B, depth, t.sigma_um), width)

    @property
    def v_fixed(self) -> float:
        return self.mk(self.config.tweezer.v_fixed_mK)

    @property
    def v_init(self) -> float:
        return self.mk(self.config.tweezer.v_init_mK)

    @property
    def v_bounds(self) -> tuple[float, float]:
        lo, hi = self.config.tweezer.v_bounds_mK
        return self.mk(lo), self.mk(hi)

    @property
    def p_td(self) -> float:
        return escape_momentum(self.mk(self.config.ensemble.box_depth_mK))

    @cached_property
    def grid(self) -> PhaseGrid:
        g = self.config.grids
        (x0, x1), (p0, p1) = g.x_window_um, g.p_window_ptd
        return PhaseGrid(x0, x1, p0 * self.p_td, p1 * self.p_td, g.n_x, g.n_p, g.pad_fraction)

    @property
    def epsilon(self) -> float | None:
        return self.config.epsilon if self.config.tier == "quantum" else None

    def noise(self, t_th_mk: float | None = None) -> NoiseParams:
        nz = self.config.noise
        t_th = nz.T_th_mK if t_th_mk is None else t_th_mk
        hbar = self.config.epsilon if self.config.tier == "quantum" else self.units.hbar
        return noise_coefficients(nz.gamma_per_us, self.mk(t_th), 1.0, hbar)

    def weights(self, **overrides) -> CostWeights:
        w = self.config.weights
        base = dict(gamma_u=w.gamma_u, gamma_v=w.gamma_v, nu_u=w.nu_u, nu_v=w.nu_v, nu_x=w.nu_x, nu_p=w.nu_p,
                    nu_tf=w.nu_tf, nu_target=w.nu_target)
        base.update(overrides)
        return CostWeights(**base)

    def transport_problem(self, **weight_overrides) -> TransportProblem:
        return TransportProblem(self.landscape, self.weights(**weight_overrides))

    @property
    def box(self) -> AcceptanceBox:
        return AcceptanceBox(self.config.ensemble.box_x_um, self.p_td)

    def initial_field(self, epsilon: float | None | str = "config"):
        """Thermal field in trap A; the quantum-thermal widths apply when a Wigner run asks for them."""
        eps = self.epsilon if epsilon == "config" else epsilon
        mode = self.config.ensemble.initial_state
        hbar = eps if (mode == "quantum" or (mode == "auto" and eps is not None)) else None
        return thermal_initial_field(self.landscape.trap_a, self.mk(self.config.noise.T_init_mK), self.grid,
                                     hbar=hbar)

    def target(self):
        e = self.config.ensemble
        w_x = e.target_wx_um if e.target_wx_um is not None else 0.5 * e.box_x_um
        return target_field(self.landscape.trap_b.center, (w_x, e.target_wp_ptd * self.p_td), self.grid)

    def ensemble_problem(self, t_th_mk: float | None = None, epsilon: float | None | str = "config") -> EnsembleProblem:
        eps = self.epsilon if epsilon == "config" else epsilon
        return EnsembleProblem(self.landscape, self.initial_field(eps), self.target(), self.weights(),
                               self.noise(t_th_mk), self.config.grids.n_steps, 1.0, eps, self.v_bounds, self.box,
                               self.landscape.trap_b.center)


# --- deterministic tier ---------------------------------------------------------

@dataclass
class TrajectoryReport:
    t_lim_self: float
    t_bang_bang: float
    seeds: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    robustness: list = field(default_factory=list)

    def converged_times(self) -> list[float]:
        return [s.control.t_f for _, s in self.seeds + self.sweep if s.converged]

    @property
    def smallest_converged_tf(self) -> float:
        times = self.converged_times()
        return min(times) if times else math.nan


def deterministic_limits(setup: Setup) -> tuple[float, float]:
    problem = setup.transport_problem()
    lim = max_tweezer_force(setup.v_fixed, setup.landscape.tweezer_width, 1.0, setup.landscape.distance)
    return lim.t_lim, bang_bang_time(problem, setup.v_fixed)


def solve_minimal_time(setup: Setup, nu_tf: float, t_start: float) -> DeterministicSolution:
    d = setup.config.deterministic
    problem = setup.transport_problem(nu_tf=nu_tf)
    guess = inverse_dynamics_guess(problem, t_start, setup.v_fixed, d.n_intervals)
    return solve_deterministic(problem, guess, optimize_tf=True, max_iter=d.max_iter)


def solve_fixed_time(setup: Setup, t_f: float, v: float | None = None, n_intervals: int | None = None,
                     **weight_overrides) -> DeterministicSolution:
    d = setup.config.deterministic
    problem = setup.transport_problem(**weight_overrides)
    guess = inverse_dynamics_guess(problem, t_f, setup.v_fixed if v is None else v, n_intervals or d.n_intervals)
    return solve_deterministic(problem, guess, max_iter=d.max_iter)


def run_nu_tf_sweep(setup: Setup) -> list:
    d = setup.config.deterministic
    return [(nu, solve_minimal_time(setup, nu, d.tf_start_us)) for nu in d.nu_tf_sweep]


def run_seeds(setup: Setup, t_lim: float) -> list:
    d = setup.config.deterministic
    nu_tf = setup.config.weights.nu_tf or max(d.nu_tf_sweep)
    return [(s, solve_minimal_time(setup, nu_tf, s * t_lim)) for s in d.seeds]


def run_robustness(setup: Setup) -> list:
    """max_t |x(t) - x_ref(t)| / d for each (nu_u, gamma_u) pair at the reference final time."""
    d = setup.config.deterministic
    ref = solve_fixed_time(setup, d.reference_tf_us)
    rows = []
    for nu_u in d.robustness_nu_u:
        for gamma_u in d.robustness_gamma_u:
            sol = solve_fixed_time(setup, d.reference_tf_us, nu_u=nu_u, gamma_u=gamma_u)
            dev = float(np.max(np.abs(sol.trajectory.x - ref.trajectory.x))) / setup.landscape.distance
            rows.append((nu_u, gamma_u, dev, sol.converged))
    return rows


def run_trajectory(setup: Setup, robustness: bool = True) -> TrajectoryReport:
    t_lim, t_bb = deterministic_limits(setup)
    report = TrajectoryReport(t_lim, t_bb)
    report.seeds = run_seeds(setup, t_lim)
    report.sweep = run_nu_tf_sweep(setup)
    if robustness:
        report.robustness = run_robustness(setup)
    return report


# --- ensemble tiers ----------------------------------------------------------------

def seed_control(setup: Setup, t_f: float | None = None) -> ControlSignal:
    """Initial ensemble control on the ensemble step grid at the initial depth.

    ``reference`` (default) keeps the atom on the inner flank of the tweezer
    along a smoothed bang-bang path; ``deterministic`` takes the point-particle
    optimum, which rides the force maximum and spills thermal atoms.
    """
    e = setup.config.ensemble
    t_f = e.t_f_us if t_f is None else t_f
    n = setup.config.grids.n_steps
    if e.seed == "reference":
        return inverse_dynamics_guess(setup.transport_problem(), t_f, setup.v_init, n, e.seed_sharpness)
    return solve_fixed_time(setup, t_f, v=setup.v_init, n_intervals=n, nu_x=e.seed_nu_x, nu_p=e.seed_nu_x).control


@dataclass
class EnsembleRun:
    solution: EnsembleSolution
    record: EvolutionRecord
    temperature: np.ndarray
    seed: ControlSignal
    seed_fidelity: float
    problem: EnsembleProblem = field(repr=False, default=None)

    @property
    def control(self) -> ControlSignal:
        return self.solution.control

    @property
    def fidelity(self) -> float:
        return self.solution.fidelity


def run_ensemble(setup: Setup, t_f: float | None = None, max_iter: int | None = None, snapshot_stride: int | None = None,
                 initial: ControlSignal | None = None, epsilon: float | None | str = "config") -> EnsembleRun:
    e = setup.config.ensemble
    problem = setup.ensemble_problem(epsilon=epsilon)
    seed = initial if initial is not None else seed_control(setup, t_f)
    seed_fid = evaluate_fidelity(problem, seed)
    sol = optimize_ensemble(problem, seed, max_iter=e.max_iter if max_iter is None else max_iter, tol=e.tol)
    stride = snapshot_stride or max(1, problem.n_steps // 40)
    record = run_forward(problem, sol.control, stride)
    trace = temperature_trace(record, setup.landscape, sol.control, 1.0, setup.kb_mk)
    sol.temperature_trace = trace
    sol.record = record
    return EnsembleRun(sol, record, trace, seed, seed_fid, problem)


def run_bath_sweep(setup: Setup, control: ControlSignal) -> list[tuple[float, float]]:
    """Frozen control re-evaluated at every bath temperature of the sweep."""
    rows = []
    for t_th in setup.config.sweeps.bath_T_mK:
        problem = setup.ensemble_problem(t_th)
        rows.append((float(t_th), evaluate_fidelity(problem, control)))
    return rows


def final_temperature(setup: Setup, problem: EnsembleProblem, control: ControlSignal) -> float:
    record = run_forward(problem, control)
    return float(temperature_trace(record, setup.landscape, control, 1.0, setup.kb_mk)[-1, 1])


def run_tf_temperature_sweep(setup: Setup) -> list[tuple[float, float, float]]:
    """(t_f, final temperature, fidelity) of ensemble-optimised transfers at each sweep duration."""
    rows = []
    s = setup.config.sweeps
    for t_f in s.tf_us:
        run = run_ensemble(setup, t_f=t_f, max_iter=s.tf_max_iter, snapshot_stride=setup.config.grids.n_steps)
        rows.append((float(t_f), float(run.temperature[-1, 1]), run.fidelity))
    return rows


def run_perturbations(setup: Setup, control: ControlSignal) -> list[tuple[str, float, float]]:
    """Fidelity under depth offsets (mK), linear drifts and sinusoidal wobbles of u (um)."""
    s = setup.config.sweeps
    problem = setup.ensemble_problem()
    specs = [("depth_offset", a, PerturbationSpec("depth_offset", setup.mk(a))) for a in s.depth_offsets_mK]
    specs += [("linear_ramp", a, PerturbationSpec("linear_ramp", a)) for a in s.ramp_amplitudes_um]
    specs += [("sinusoid", a, PerturbationSpec("sinusoid", a, s.sine_frequency_per_us)) for a in s.sine_amplitudes_um]
    return [(kind, float(amp), perturb_and_evaluate(problem, control, spec)[0]) for kind, amp, spec in specs]


@dataclass
class ClassicalLimit:
    l1: float
    fidelity_classical: float
    fidelity_wigner: float


def classical_limit(setup: Setup, control: ControlSignal, epsilon: float) -> ClassicalLimit:
    """Compare Wigner evolution at small ``epsilon`` with the Liouville evolution from the same initial field."""
    problem = setup.ensemble_problem(epsilon=None)
    classical = run_forward(problem, control).terminal
    quantum = run_forward(replace(problem, epsilon=epsilon), control).terminal
    l1 = float(np.abs(classical.values - quantum.values).sum() * setup.grid.cell)
    box, c = setup.box, setup.landscape.trap_b.center
    return ClassicalLimit(l1, fidelity(classical, box, c), fidelity(quantum, box, c))


def negativity(field_values: np.ndarray) -> float:
    """-min / max of a Wigner field (positive when negative regions exist)."""
    return float(-field_values.min() / field_values.max())


# --- gradient checks ----------------------------------------------------------------

@dataclass
class GradientCheck:
    nodes: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def relative_error(self) -> float:
        """||analytic - numeric|| / ||numeric|| over the probed nodes."""
        return float(np.linalg.norm(self.analytic - self.numeric) / np.linalg.norm(self.numeric))

    @property
    def worst_node_error(self) -> float:
        scale = np.abs(self.numeric).max()
        return float(np.max(np.abs(self.analytic - self.numeric)) / scale)


def _probe_nodes(n: int, count: int, seed: int) -> np.ndarray:
    return np.sort(np.random.default_rng(seed).choice(np.arange(1, n - 1), count, replace=False))


def deterministic_gradient_check(setup: Setup, t_f: float | None = None, count: int = 20, step: float = 1e-5,
                                 seed: int = 0) -> GradientCheck:
    """Adjoint nodal gradient of J against central differences at ``count`` interior nodes."""
    from .trajectory_oc import cost_gradient

    d = setup.config.deterministic
    problem = setup.transport_problem()
    control = inverse_dynamics_guess(problem, t_f or d.reference_tf_us, setup.v_fixed, d.n_intervals)
    nodes = _probe_nodes(control.times.size, count, seed)
    analytic = cost_gradient(problem, control).grad_u[nodes]
    numeric = []
    for k in nodes:
        vals = []
        for sign in (1.0, -1.0):
            u = control.u.copy()
            u[k] += sign * step
            vals.append(cost_gradient(problem, control.with_values(u=u)).cost.total)
        numeric.append((vals[0] - vals[1]) / (2.0 * step))
    return GradientCheck(nodes, analytic, np.asarray(numeric))


def ensemble_gradient_check(setup: Setup, n_grid: int = 64, n_steps: int = 400, count: int = 20,
                            step: float = 1e-4, seed: int = 0) -> GradientCheck:
    """Continuous-form gradient density -<h, U_xu df/dp> against central differences of Phi' = -<f_target, f(t_f)>.

    Runs on an ``n_grid``-squared copy of the configured window; the finite
    difference of a nodal perturbation is divided by the time step to give a
    density comparable with the adjoint expression.
    """
    from .ensemble_oc import control_gradient_classical
    from .lfp import lfp_adjoint, lfp_forward
    from .phase_grid import overlap

    cfg = setup.config
    small = Setup(replace(cfg, tier="classical", epsilon=None,
                          grids=replace(cfg.grids, n_x=n_grid, n_p=n_grid, n_steps=n_steps)))
    f0, target, land, noise = small.initial_field(None), small.target(), small.landscape, small.noise()
    control = seed_control(small)
    # mass leaving the window does not affect the check; both sides see the same scheme
    fwd = lfp_forward(f0, control, land, noise, n_steps=n_steps, check_mass=False)
    adj = lfp_adjoint(target, control, land, noise, n_steps=n_steps)
    _, rhs_u, _ = control_gradient_classical(fwd, adj, control, land)
    nodes = _probe_nodes(control.times.size, count, seed)
    dt = control.times[1] - control.times[0]

    def phi(ctrl):
        run = lfp_forward(f0, ctrl, land, noise, n_steps=n_steps, store_stride=n_steps, check_mass=False)
        return -overlap(target, run.terminal)

    numeric = []
    for k in nodes:
        vals = []
        for sign in (1.0, -1.0):
            u = control.u.copy()
            u[k] += sign * step
            vals.append(phi(control.with_values(u=u)))
        numeric.append((vals[0] - vals[1]) / (2.0 * step * dt))
    return GradientCheck(nodes, rhs_u[nodes], np.asarray(numeric))


@dataclass
class Limits:
    t_lim_self: float
    t_bang_bang_free: float
    t_bang_bang_static: float
    force: float
    p_td: float
    p_td_si: float
    epsilon: EpsilonEstimate


def compute_limits(setup: Setup) -> Limits:
    lim = max_tweezer_force(setup.v_fixed, setup.landscape.tweezer_width, 1.0, setup.landscape.distance)
    return Limits(lim.t_lim, lim.t_bang_bang, bang_bang_time(setup.transport_problem(), setup.v_fixed), lim.force,
                  setup.p_td, setup.units.to_si(setup.p_td, "momentum"),
                  estimate_epsilon(setup.units, setup.landscape.trap_a))
