"""Ensemble optimal control on phase-space densities (classical and Wigner tiers)."""
from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import irfft, rfft

from .lfp import EvolutionRecord, evolve_forward, step_nodes
from .model import NOISELESS, ControlSignal, CostWeights, Landscape, NoiseParams
from .optim import BandedWhitening, minimize_whitened
from .phase_grid import PhaseField, PhaseGrid, SplitStepper, kick_phase_derivatives, moments
from .trajectory_oc import control_cost, regularization_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AcceptanceBox:
    x_half_width: float
    p_edge: float

    def __post_init__(self):
        if not (self.x_half_width > 0 and self.p_edge > 0):
            raise ValueError("acceptance box extents must be positive")


def _cell_fraction(nodes: np.ndarray, spacing: float, lo: float, hi: float) -> np.ndarray:
    """Fraction of each cell [node - h/2, node + h/2] lying inside [lo, hi]."""
    left = np.maximum(nodes - 0.5 * spacing, lo)
    right = np.minimum(nodes + 0.5 * spacing, hi)
    return np.clip(right - left, 0.0, None) / spacing


def fidelity(field: PhaseField, box: AcceptanceBox, target_center: float) -> float:
    """Share of the field inside the box centred at (target_center, 0); boundary cells count fractionally."""
    g = field.grid
    total = field.values.sum()
    if total == 0.0:
        raise ValueError("field has zero mass")
    wx = _cell_fraction(g.x, g.dx, target_center - box.x_half_width, target_center + box.x_half_width)
    wp = _cell_fraction(g.p, g.dp, -box.p_edge, box.p_edge)
    return float(wx @ field.values @ wp / total)


@dataclass(frozen=True)
class EnsembleProblem:
    """Everything an ensemble run needs except the control.

    ``weights.nu_target`` scales the overlap reward: J = nu_target Phi' + k
    with Phi' = -<f_target, f(t_f)>.  ``v_bounds`` is the admissible depth
    interval; excursions are clipped in the dynamics and penalised with
    ``bound_penalty``.
    """

    landscape: Landscape
    initial: PhaseField
    target: PhaseField
    weights: CostWeights = CostWeights()
    noise: NoiseParams = NOISELESS
    n_steps: int = 400
    mass: float = 1.0
    epsilon: float | None = None
    v_bounds: tuple[float, float] = (-math.inf, 0.0)
    box: AcceptanceBox | None = None
    target_center: float | None = None
    bound_penalty: float = 1e3

    def __post_init__(self):
        if not self.initial.grid.same_as(self.target.grid):
            raise ValueError("initial and target fields must share a grid")
        lo, hi = self.v_bounds
        if not lo < hi:
            raise ValueError("empty depth interval")

    @property
    def grid(self) -> PhaseGrid:
        return self.initial.grid

    @property
    def center(self) -> float:
        return self.landscape.trap_b.center if self.target_center is None else self.target_center

    def with_noise(self, noise: NoiseParams) -> "EnsembleProblem":
        return replace(self, noise=noise)

    def stepper(self, t_f: float) -> SplitStepper:
        return SplitStepper(self.grid, self.landscape, t_f / self.n_steps, self.mass, self.noise, self.epsilon)


@dataclass
class EnsembleEvaluation:
    cost: float
    overlap_cost: float
    control_cost: float
    penalty: float
    terminal: PhaseField
    grad_u: np.ndarray | None = None
    grad_v: np.ndarray | None = None


def clip_depth(control: ControlSignal, bounds: tuple[float, float]) -> ControlSignal:
    return control.with_values(v=np.clip(control.v, *bounds))


def _on_step_grid(problem: EnsembleProblem, control: ControlSignal) -> ControlSignal:
    times, u, v = step_nodes(control, problem.n_steps)
    return ControlSignal(times, u, v)


def evaluate_ensemble(problem: EnsembleProblem, control: ControlSignal, gradient: bool = True) -> EnsembleEvaluation:
    """J = nu_target Phi' + k + penalty and, optionally, its exact discrete gradient.

    The gradient differentiates the split-step scheme itself: each half kick
    contributes d<h, K(u, v) f>/d(u, v) with f the forward field entering the
    kick and h the adjoint field leaving it.
    """
    control = _on_step_grid(problem, control)
    w = problem.weights
    lo, hi = problem.v_bounds
    v_eff = np.clip(control.v, lo, hi)
    excess = control.v - v_eff
    stepper = problem.stepper(control.t_f)
    u = control.u
    n = problem.n_steps
    values = problem.initial.values
    stages = []
    for k in range(n):
        if gradient:
            values, first, second = stepper.step_with_stages(values, (u[k], v_eff[k]), (u[k + 1], v_eff[k + 1]))
            stages.append((first, second))
        else:
            values = stepper.step(values, (u[k], v_eff[k]), (u[k + 1], v_eff[k + 1]))
    terminal = problem.initial.with_values(values, time=control.t_f)
    g = problem.grid
    overlap_cost = -w.nu_target * float(np.vdot(problem.target.values, values) * g.cell)
    dt = control.times[1]
    wts = np.full(n + 1, dt)
    wts[[0, -1]] *= 0.5
    penalty = 0.5 * problem.bound_penalty * float(wts @ excess**2)
    k_cost = control_cost(control, w)
    result = EnsembleEvaluation(overlap_cost + k_cost + penalty, overlap_cost, k_cost, penalty, terminal)
    if not gradient:
        return result
    gu = np.zeros(n + 1)
    gv = np.zeros(n + 1)
    h = w.nu_target * problem.target.values
    for k in range(n - 1, -1, -1):
        first, second = stages[k]
        h, after_first, after_second = stepper.adjoint_step_with_stages(h, (u[k], v_eff[k]), (u[k + 1], v_eff[k + 1]))
        su, sv = stepper.kick_sensitivity(second, after_second, u[k + 1], v_eff[k + 1])
        gu[k + 1] -= su
        gv[k + 1] -= sv
        su, sv = stepper.kick_sensitivity(first, after_first, u[k], v_eff[k])
        gu[k] -= su
        gv[k] -= sv
        stages[k] = None
    inside = excess == 0.0
    gv = gv * inside
    a_u = regularization_matrix(w.nu_u, w.gamma_u, n + 1, dt)
    a_v = regularization_matrix(w.nu_v, w.gamma_v, n + 1, dt)
    result.grad_u = gu + _banded_matvec(a_u, u)
    result.grad_v = gv + _banded_matvec(a_v, control.v) + problem.bound_penalty * wts * excess
    return result


def _banded_matvec(ab, x):
    out = ab[1] * x
    out[:-1] += ab[0, 1:] * x[1:]
    out[1:] += ab[2, :-1] * x[:-1]
    return out


# --- continuous-form gradient densities ------------------------------------------------

def generator_rhs(grid: PhaseGrid, landscape: Landscape, f: np.ndarray, h: np.ndarray, u: float, v: float,
                  epsilon: float | None = None) -> tuple[float, float]:
    """(-<h, G_u f>, -<h, G_v f>) where G_c is the control derivative of the force generator.

    Classically G_u f = U_xu df/dp; in the Wigner tier G_u f = (1/eps) Theta_{dU/du}[f].
    """
    spec = rfft(f, n=grid.n_p_padded, axis=1)
    out = []
    for d in kick_phase_derivatives(grid, landscape, u, v, epsilon):
        gf = irfft(1j * d * spec, n=grid.n_p_padded, axis=1)[:, : grid.n_p]
        out.append(-float(np.vdot(h, gf) * grid.cell))
    return out[0], out[1]


def _control_gradient(forward: EvolutionRecord, adjoint: EvolutionRecord, control: ControlSignal,
                      landscape: Landscape, epsilon: float | None):
    if len(forward.times) != len(adjoint.times) or not np.allclose(forward.times, adjoint.times):
        raise ValueError("forward and adjoint records must share checkpoint times")
    grid = forward.fields[0].grid
    if not grid.same_as(adjoint.fields[0].grid):
        raise ValueError("forward and adjoint records live on different grids")
    u, v = control.at(forward.times)
    rhs = np.array([generator_rhs(grid, landscape, f.values, h.values, uu, vv, epsilon)
                    for f, h, uu, vv in zip(forward.fields, adjoint.fields, u, v)])
    return forward.times, rhs[:, 0], rhs[:, 1]


def control_gradient_classical(forward: EvolutionRecord, adjoint: EvolutionRecord, control: ControlSignal,
                               landscape: Landscape):
    """Right-hand sides -iint U_xu h df/dp and -iint U_xv h df/dp at every checkpoint."""
    return _control_gradient(forward, adjoint, control, landscape, None)


def control_gradient_quantum(forward: EvolutionRecord, adjoint: EvolutionRecord, control: ControlSignal,
                             landscape: Landscape, epsilon: float):
    """Right-hand sides -iint h (1/eps) Theta_{dU/du}[f] (and the v analogue)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return _control_gradient(forward, adjoint, control, landscape, epsilon)


# --- optimisation ------------------------------------------------------------------

@dataclass
class EnsembleSolution:
    control: ControlSignal
    fidelity: float
    cost: float
    cost_history: list
    terminal: PhaseField
    converged: bool
    iterations: int
    message: str = ""
    wall_time: float = 0.0
    temperature_trace: np.ndarray | None = None
    record: EvolutionRecord | None = field(default=None, repr=False)


def optimize_ensemble(problem: EnsembleProblem, initial_control: ControlSignal, max_iter: int = 60,
                      tol: float = 1e-6, memory: int = 10) -> EnsembleSolution:
    """Minimise J over (u, v) at fixed t_f.

    The unknowns are whitened by the control regularisation so the first
    descent step is the forward/backward sweep; L-BFGS-B supplies curvature
    memory and the line search.  Terminates when the relative decrease of J
    falls below ``tol`` or after ``max_iter`` iterations.
    """
    start = _time.perf_counter()
    control0 = _on_step_grid(problem, initial_control)
    n = control0.times.size
    dt = control0.times[1]
    w = problem.weights

    def fun(z):
        ctrl = control0.with_values(u=z[:n], v=z[n:])
        ev = evaluate_ensemble(problem, ctrl)
        return ev.cost, np.concatenate([ev.grad_u, ev.grad_v]), ev

    blocks = [BandedWhitening(regularization_matrix(w.nu_u, w.gamma_u, n, dt)),
              BandedWhitening(regularization_matrix(w.nu_v, w.gamma_v, n, dt))]
    res = minimize_whitened(fun, np.concatenate([control0.u, control0.v]), blocks, max_iter=max_iter,
                            ftol=tol, gtol=1e-10, memory=memory)
    control = clip_depth(control0.with_values(u=res.x[:n], v=res.x[n:]), problem.v_bounds)
    ev = res.aux
    fid = fidelity(ev.terminal, problem.box, problem.center) if problem.box is not None else float("nan")
    log.info("ensemble optimisation: %s after %d iterations, J=%.6g, fidelity=%.5f",
             res.message, res.iterations, res.fun, fid)
    return EnsembleSolution(control, fid, res.fun, res.history, ev.terminal, res.converged, res.iterations,
                            res.message, _time.perf_counter() - start)


def run_forward(problem: EnsembleProblem, control: ControlSignal, store_stride: int | None = None) -> EvolutionRecord:
    """Forward evolution under ``control`` (depth clipped to the admissible interval)."""
    control = clip_depth(_on_step_grid(problem, control), problem.v_bounds)
    stride = store_stride or problem.n_steps
    return evolve_forward(problem.stepper(control.t_f), problem.initial, control.times, control.u, control.v,
                          stride, check_mass=False)


def evaluate_fidelity(problem: EnsembleProblem, control: ControlSignal) -> float:
    if problem.box is None:
        raise ValueError("problem has no acceptance box")
    return fidelity(run_forward(problem, control).terminal, problem.box, problem.center)


# --- diagnostics -------------------------------------------------------------

def temperature_trace(record: EvolutionRecord, landscape: Landscape, control: ControlSignal, mass: float = 1.0,
                      thermal_unit: float = 1.0) -> np.ndarray:
    """(time, temperature) at each checkpoint.

    Energies are measured in the instantaneous potential (static traps plus
    tweezer); at t_f the tweezer is switched off, so the final entry uses the
    static traps only.
    """
    rows = []
    t_f = control.t_f
    for t, fld in record.checkpoints:
        if t >= t_f * (1.0 - 1e-12):
            pot = landscape.static_potential
        else:
            uu, vv = control.at(t)
            pot = lambda x, uu=float(uu), vv=float(vv): landscape.potential(x, uu, vv)
        rows.append((t, moments(fld, pot, mass, thermal_unit).temperature))
    return np.array(rows)


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    amplitude: float
    frequency: float | None = None

    KINDS = ("linear_ramp", "sinusoid", "depth_offset")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if self.kind == "sinusoid" and not (self.frequency and self.frequency > 0):
            raise ValueError("sinusoidal perturbations need a positive frequency")

    def apply(self, control: ControlSignal) -> ControlSignal:
        """linear_ramp: u + a t/t_f; sinusoid: u + a sin(2 pi f t); depth_offset: v + a."""
        t = control.times
        if self.kind == "linear_ramp":
            return control.with_values(u=control.u + self.amplitude * t / control.t_f)
        if self.kind == "sinusoid":
            return control.with_values(u=control.u + self.amplitude * np.sin(2.0 * np.pi * self.frequency * t))
        return control.with_values(v=control.v + self.amplitude)


def perturb_and_evaluate(problem: EnsembleProblem, control: ControlSignal, spec: PerturbationSpec) -> tuple[float, ControlSignal]:
    """Fidelity of the perturbed control (forward solve only, no re-optimisation).

    Depth offsets are applied without clipping so that the sweep probes both
    sides of the nominal depth.
    """
    perturbed = spec.apply(control)
    unbounded = replace(problem, v_bounds=(-math.inf, math.inf))
    return evaluate_fidelity(unbounded, perturbed), perturbed


def bath_sweep(problem: EnsembleProblem, control: ControlSignal, noises: list[NoiseParams]) -> list[float]:
    """Fidelity of a frozen control for each noise model."""
    return [evaluate_fidelity(problem.with_noise(nz), control) for nz in noises]
