"""Single-particle optimal control: Hamiltonian flow, adjoint flow and the sweep optimizer."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .optim import BandedWhitening, ScalarWhitening, minimize_whitened
from .model import ControlSignal, CostWeights, Landscape, max_tweezer_force, total_potential_derivs

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class AdjointTrajectory:
    times: np.ndarray
    x_h: np.ndarray
    p_h: np.ndarray


@dataclass(frozen=True)
class CostBreakdown:
    terminal: float
    control: float
    time: float

    @property
    def total(self) -> float:
        return self.terminal + self.control + self.time


@dataclass(frozen=True)
class TransportProblem:
    landscape: Landscape
    weights: CostWeights = CostWeights()
    mass: float = 1.0

    @property
    def x_start(self) -> float:
        return self.landscape.trap_a.center

    @property
    def x_target(self) -> float:
        return self.landscape.trap_b.center


@dataclass
class DeterministicSolution:
    control: ControlSignal
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    cost: CostBreakdown
    iterations: int
    converged: bool
    tf_residual: float = float("nan")
    history: list = field(default_factory=list)


def _scalar_force(landscape: Landscape):
    """Fast scalar dU/dx(x, u, v) and d2U/dx2(x, u, v)."""
    traps = [(t.center, t.depth, t.width) for t in (landscape.trap_a, landscape.trap_b)]
    sigma = landscape.tweezer_width
    exp = math.exp

    def grad(x, u, v):
        out = 0.0
        for c, d, w in traps:
            s = (x - c) / w
            out -= 2.0 * s / w * d * exp(-s * s)
        s = (x - u) / sigma
        return out - 2.0 * s / sigma * v * exp(-s * s)

    def curv(x, u, v):
        out = 0.0
        for c, d, w in traps:
            s = (x - c) / w
            out += (4.0 * s * s - 2.0) / (w * w) * d * exp(-s * s)
        s = (x - u) / sigma
        return out + (4.0 * s * s - 2.0) / (sigma * sigma) * v * exp(-s * s)

    return grad, curv


def integrate_forward(control: ControlSignal, landscape: Landscape, x0: float, p0: float = 0.0,
                      mass: float = 1.0) -> Trajectory:
    """Classical RK4 on the control grid; controls are linear inside each interval."""
    if not (math.isfinite(x0) and math.isfinite(p0)):
        raise ValueError("initial state must be finite")
    grad, _ = _scalar_force(landscape)
    t, u, v = control.times, control.u.tolist(), control.v.tolist()
    n = t.size
    xs = np.empty(n)
    ps = np.empty(n)
    x, p = float(x0), float(p0)
    xs[0], ps[0] = x, p
    inv_m = 1.0 / mass
    for k in range(n - 1):
        h = t[k + 1] - t[k]
        u0, u1, v0, v1 = u[k], u[k + 1], v[k], v[k + 1]
        um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        k1x, k1p = p * inv_m, -grad(x, u0, v0)
        k2x, k2p = (p + 0.5 * h * k1p) * inv_m, -grad(x + 0.5 * h * k1x, um, vm)
        k3x, k3p = (p + 0.5 * h * k2p) * inv_m, -grad(x + 0.5 * h * k2x, um, vm)
        k4x, k4p = (p + h * k3p) * inv_m, -grad(x + h * k3x, u1, v1)
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if not (math.isfinite(x) and math.isfinite(p)):
            raise DivergenceError(f"trajectory blew up at t={t[k + 1]:.6g}")
        xs[k + 1], ps[k + 1] = x, p
    return Trajectory(t.copy(), xs, ps)


def terminal_adjoint_values(trajectory: Trajectory, weights: CostWeights, x_target: float) -> tuple[float, float]:
    """(x_h, p_h) at t_f from the terminal error weights."""
    return -weights.nu_p * trajectory.p[-1], weights.nu_x * (x_target - trajectory.x[-1])


def integrate_adjoint(control: ControlSignal, trajectory: Trajectory, weights: CostWeights,
                      landscape: Landscape, x_target: float, mass: float = 1.0,
                      terminal: tuple[float, float] | None = None) -> AdjointTrajectory:
    """Backward RK4 for dp_h/dt = x_h U_xx, dx_h/dt = -p_h/m.

    The state at interval midpoints comes from cubic Hermite interpolation of
    the stored trajectory, which keeps the scheme fourth order.
    """
    if trajectory.times.shape != control.times.shape or not np.allclose(trajectory.times, control.times):
        raise ValueError("trajectory and control live on different time grids")
    grad, curv = _scalar_force(landscape)
    t = control.times
    u, v = control.u, control.v
    xs, ps = trajectory.x, trajectory.p
    n = t.size
    curv_nodes = [curv(xs[k], u[k], v[k]) for k in range(n)]
    xh = np.empty(n)
    ph = np.empty(n)
    a, b = terminal if terminal is not None else terminal_adjoint_values(trajectory, weights, x_target)
    xh[-1], ph[-1] = a, b
    inv_m = 1.0 / mass
    for k in range(n - 1, 0, -1):
        h = t[k] - t[k - 1]
        xm = 0.5 * (xs[k] + xs[k - 1]) + h / 8.0 * (ps[k - 1] - ps[k]) * inv_m
        cm = curv(xm, 0.5 * (u[k] + u[k - 1]), 0.5 * (v[k] + v[k - 1]))
        c1, c4 = curv_nodes[k], curv_nodes[k - 1]
        # integrate in reversed time s = t_f - t
        k1a, k1b = b * inv_m, -a * c1
        k2a, k2b = (b + 0.5 * h * k1b) * inv_m, -(a + 0.5 * h * k1a) * cm
        k3a, k3b = (b + 0.5 * h * k2b) * inv_m, -(a + 0.5 * h * k2a) * cm
        k4a, k4b = (b + h * k3b) * inv_m, -(a + h * k3a) * c4
        a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        xh[k - 1], ph[k - 1] = a, b
    return AdjointTrajectory(t.copy(), xh, ph)


def terminal_gradient(control: ControlSignal, trajectory: Trajectory, adjoint: AdjointTrajectory,
                      landscape: Landscape) -> tuple[np.ndarray, np.ndarray]:
    """L2 gradient densities dPhi/du(t), dPhi/dv(t) = x_h * U_xu, x_h * U_xv."""
    d = total_potential_derivs(trajectory.x, control.u, control.v, landscape)
    return adjoint.x_h * d.d2U_dxdu, adjoint.x_h * d.d2U_dxdv


def control_residual(control, trajectory, adjoint, landscape):
    """Right-hand sides -x_h U_xu, -x_h U_xv of the control equations (= -dPhi/du)."""
    gu, gv = terminal_gradient(control, trajectory, adjoint, landscape)
    return -gu, -gv


def solve_neumann_bvp(nu: float, gamma: float, rhs: np.ndarray, dt: float) -> np.ndarray:
    """Solve nu w'' - gamma w = rhs with w'(0) = w'(t_f) = 0.

    Second-order centred differences with mirrored ghost nodes; tridiagonal.
    """
    if nu < 0 or gamma <= 0:
        raise ValueError("Neumann problem is singular unless gamma > 0 (and nu >= 0)")
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    c = nu / dt**2
    ab = np.zeros((3, n))
    ab[1, :] = -2.0 * c - gamma
    ab[0, 1:] = c
    ab[2, :-1] = c
    ab[0, 1] = 2.0 * c
    ab[2, n - 2] = 2.0 * c
    return solve_banded((1, 1), ab, rhs)


def control_update(control: ControlSignal, trajectory: Trajectory, adjoint: AdjointTrajectory,
                   weights: CostWeights, landscape: Landscape, optimize_v: bool = False) -> ControlSignal:
    """Stationary controls for the current adjoint: nu w'' - gamma w = dPhi/dw per channel."""
    gu, gv = terminal_gradient(control, trajectory, adjoint, landscape)
    dt = control.times[1] - control.times[0]
    u = solve_neumann_bvp(weights.nu_u, weights.gamma_u, gu, dt)
    v = solve_neumann_bvp(weights.nu_v, weights.gamma_v, gv, dt) if optimize_v else control.v
    return control.with_values(u=u, v=v)


def _trapezoid(y, t):
    return float(np.trapezoid(y, t))


def _uniform_step(times: np.ndarray) -> float:
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("control grid must be uniform")
    return float(dt[0])


def regularization_matrix(nu: float, gamma: float, n: int, dt: float) -> np.ndarray:
    """Banded (1,1) form of A with k = u^T A u / 2 for one control channel.

    Trapezoid weights on ``gamma u^2`` and interval differences on
    ``nu (du/dt)^2``.  A = W (gamma - nu d^2/dt^2) with the Neumann stencil, so
    solving with A is the control boundary-value problem.
    """
    w = np.full(n, dt)
    w[[0, -1]] = 0.5 * dt
    c = nu / dt
    ab = np.zeros((3, n))
    ab[1] = gamma * w + 2.0 * c
    ab[1, [0, -1]] = gamma * w[[0, -1]] + c
    ab[0, 1:] = -c
    ab[2, :-1] = -c
    return ab


def _control_cost_parts(control: ControlSignal, weights: CostWeights) -> tuple[float, float]:
    """(gamma part, nu part) of the discrete control cost."""
    t = control.times
    dt = np.diff(t)
    level = _trapezoid(weights.gamma_u * control.u**2 + weights.gamma_v * control.v**2, t)
    slope = np.sum((weights.nu_u * np.diff(control.u) ** 2 + weights.nu_v * np.diff(control.v) ** 2) / dt)
    return 0.5 * level, 0.5 * float(slope)


def control_cost(control: ControlSignal, weights: CostWeights) -> float:
    """k(u, v): trapezoid for the amplitude terms, midpoint differences for the slope terms."""
    return sum(_control_cost_parts(control, weights))


def evaluate_cost(control: ControlSignal, trajectory: Trajectory, weights: CostWeights, x_target: float) -> CostBreakdown:
    terminal = 0.5 * weights.nu_x * (trajectory.x[-1] - x_target) ** 2 + 0.5 * weights.nu_p * trajectory.p[-1] ** 2
    return CostBreakdown(float(terminal), control_cost(control, weights), 0.5 * weights.nu_tf * control.t_f**2)


def _end_slope(y, t):
    return (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (t[-1] - t[-3])


def final_time_residual(control: ControlSignal, trajectory: Trajectory, weights: CostWeights,
                        landscape: Landscape, x_target: float, mass: float = 1.0) -> float:
    """dJ/dt_f with the control extended past t_f; zero at an optimal final time."""
    x, p = trajectory.x[-1], trajectory.p[-1]
    u, v = control.u[-1], control.v[-1]
    du = _end_slope(control.u, control.times)
    dv = _end_slope(control.v, control.times)
    grad = float(total_potential_derivs(x, u, v, landscape).dU_dx)
    return float(weights.nu_tf * control.t_f
                 - weights.nu_x / mass * (x_target - x) * p
                 - weights.nu_p * grad * p
                 + 0.5 * (weights.gamma_u * u**2 + weights.gamma_v * v**2
                          + weights.nu_u * du**2 + weights.nu_v * dv**2))


def stretch_derivative(control: ControlSignal, trajectory: Trajectory, adjoint: AdjointTrajectory,
                       weights: CostWeights, landscape: Landscape, x_target: float, mass: float = 1.0) -> float:
    """dJ/dt_f when the sampled control is stretched with t_f (u(t) = w(t / t_f))."""
    t = control.times
    t_f = control.t_f
    gu, gv = terminal_gradient(control, trajectory, adjoint, landscape)
    x, p = trajectory.x[-1], trajectory.p[-1]
    grad = float(total_potential_derivs(x, control.u[-1], control.v[-1], landscape).dU_dx)
    d_terminal = -weights.nu_x / mass * (x_target - x) * p - weights.nu_p * grad * p
    shape = (_trapezoid(gu * t * np.gradient(control.u, t, edge_order=2), t)
             + _trapezoid(gv * t * np.gradient(control.v, t, edge_order=2), t)) / t_f
    level, slope = _control_cost_parts(control, weights)
    return float(d_terminal - shape + (level - slope) / t_f + weights.nu_tf * t_f)


def inverse_dynamics_guess(problem: TransportProblem, t_f: float, v: float, n_intervals: int = 800,
                           sharpness: float = 0.08) -> ControlSignal:
    """Tweezer path that makes the atom follow a smoothed bang-bang reference.

    The reference acceleration is ``a tanh((1/2 - t/t_f)/sharpness)`` scaled to
    cover the trap distance.  At every node the tweezer offset ``r = u - x`` is
    chosen on the monotone branch ``|r| <= sigma/sqrt(2)`` so that tweezer
    force balances inertia plus static-trap forces; where the demand exceeds
    the maximum tweezer force the offset saturates.
    """
    land, m = problem.landscape, problem.mass
    t = np.linspace(0.0, t_f, n_intervals + 1)
    shape = np.tanh((0.5 - t / t_f) / sharpness)
    vel = np.concatenate([[0.0], np.cumsum(0.5 * (shape[1:] + shape[:-1]) * np.diff(t))])
    pos = np.concatenate([[0.0], np.cumsum(0.5 * (vel[1:] + vel[:-1]) * np.diff(t))])
    scale = (problem.x_target - problem.x_start) / pos[-1]
    x_ref = problem.x_start + scale * pos
    demand = m * scale * shape + land.static_force_gradient(x_ref)
    sigma = land.tweezer_width
    r = np.linspace(-sigma / math.sqrt(2.0), sigma / math.sqrt(2.0), 2001)
    force = -2.0 * v * r / sigma**2 * np.exp(-((r / sigma) ** 2))
    if force[-1] < force[0]:
        r, force = r[::-1], force[::-1]
    offset = np.interp(demand, force, r)
    return ControlSignal(t, x_ref + offset, np.full_like(t, v))


@dataclass
class GradientEvaluation:
    cost: CostBreakdown
    grad_u: np.ndarray
    grad_v: np.ndarray
    trajectory: Trajectory
    adjoint: AdjointTrajectory


def cost_gradient(problem: TransportProblem, control: ControlSignal) -> GradientEvaluation:
    """J and its derivatives with respect to the nodal values of u and v.

    The terminal part pairs the adjoint density x_h U_xu with trapezoid
    weights; the regularisation part is A u.
    """
    land, w, m = problem.landscape, problem.weights, problem.mass
    dt = _uniform_step(control.times)
    n = control.times.size
    traj = integrate_forward(control, land, problem.x_start, 0.0, m)
    cost = evaluate_cost(control, traj, w, problem.x_target)
    adj = integrate_adjoint(control, traj, w, land, problem.x_target, m)
    gu, gv = terminal_gradient(control, traj, adj, land)
    wts = np.full(n, dt)
    wts[[0, -1]] *= 0.5
    grad_u = _banded_matvec(regularization_matrix(w.nu_u, w.gamma_u, n, dt), control.u) + wts * gu
    grad_v = _banded_matvec(regularization_matrix(w.nu_v, w.gamma_v, n, dt), control.v) + wts * gv
    return GradientEvaluation(cost, grad_u, grad_v, traj, adj)


def solve_deterministic(problem: TransportProblem, initial_guess: ControlSignal, optimize_tf: bool = False,
                        optimize_v: bool = False, max_iter: int = 1500, ftol: float = 1e-13,
                        gtol: float = 1e-8, memory: int = 20, tf_curvature: float | None = None,
                        tf_bounds: tuple[float, float] | None = None) -> DeterministicSolution:
    """Forward/backward sweeps with Neumann-BVP control updates, quasi-Newton accelerated.

    The unknowns are whitened by the control regularisation operator, so the
    steepest-descent step is the sweep ``u <- A^{-1}(-x_h U_xu)``.  With
    ``optimize_tf`` the sampled control shape is stretched over [0, t_f] and
    t_f is an extra unknown confined to ``tf_bounds`` (default: a factor 4
    either side of the initial value).
    """
    land, w, m = problem.landscape, problem.weights, problem.mass
    x_a, x_b = problem.x_start, problem.x_target
    if initial_guess.times.size < 3:
        raise ValueError("need at least three time samples")
    try:
        _uniform_step(initial_guess.times)
        guess = initial_guess
    except ValueError:
        guess = initial_guess.resample()
    n = guess.times.size
    tf_index = 2 * n if optimize_v else n
    fixed_v = guess.v

    def unpack(z):
        t_f = float(z[tf_index]) if optimize_tf else guess.t_f
        if not t_f > 0:
            raise DivergenceError("final time driven non-positive")
        times = np.linspace(0.0, t_f, n)
        return ControlSignal(times, z[:n], z[n:2 * n] if optimize_v else fixed_v)

    def fun(z):
        control = unpack(z)
        ev = cost_gradient(problem, control)
        parts = [ev.grad_u, ev.grad_v] if optimize_v else [ev.grad_u]
        if optimize_tf:
            parts.append([stretch_derivative(control, ev.trajectory, ev.adjoint, w, land, x_b, m)])
        return ev.cost.total, np.concatenate(parts), (control, ev.trajectory, ev.adjoint, ev.cost)

    dt0 = guess.t_f / (n - 1)
    blocks = [BandedWhitening(regularization_matrix(w.nu_u, w.gamma_u, n, dt0))]
    z0 = [guess.u]
    bounds = [None]
    if optimize_v:
        blocks.append(BandedWhitening(regularization_matrix(w.nu_v, w.gamma_v, n, dt0)))
        z0.append(guess.v)
        bounds.append(None)
    if optimize_tf:
        c_tf = tf_curvature if tf_curvature is not None else max(w.nu_tf, 1.0)
        blocks.append(ScalarWhitening(c_tf))
        z0.append([guess.t_f])
        bounds.append(tf_bounds or (0.25 * guess.t_f, 4.0 * guess.t_f))
    result = minimize_whitened(fun, np.concatenate(z0), blocks, bounds, max_iter=max_iter,
                               ftol=ftol, gtol=gtol, memory=memory)
    control, traj, adj, cost = result.aux
    res = final_time_residual(control, traj, w, land, x_b, m)
    log.info("deterministic solve: %s (%d iterations, J=%.6g, t_f=%.4g)",
             result.message, result.iterations, cost.total, control.t_f)
    return DeterministicSolution(control, traj, adj, cost, result.iterations, result.converged, res,
                                 result.history)


def _banded_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = ab[1] * x
    out[:-1] += ab[0, 1:] * x[1:]
    out[1:] += ab[2, :-1] * x[:-1]
    return out


def self_consistent_tlim(problem: TransportProblem, v: float) -> float:
    return max_tweezer_force(v, problem.landscape.tweezer_width, problem.mass, problem.landscape.distance).t_lim


def bang_bang_time(problem: TransportProblem, v: float) -> float:
    """Shortest transfer with the tweezer force pinned at +-F_M, static traps included.

    The atom accelerates at the peak tweezer force until a switch time and
    then brakes at the peak force until it stops; the switch time is chosen so
    that it stops exactly at the target.  Returns the stopping time.
    """
    land, m = problem.landscape, problem.mass
    f_max = max_tweezer_force(v, land.tweezer_width, m).force
    sign = math.copysign(1.0, problem.x_target - problem.x_start)
    def static_grad(x):
        return float(land.static_force_gradient(x))

    def shoot(t_switch):
        def rhs(t, y):
            push = f_max if t < t_switch else -f_max
            return [y[1] / m, sign * push - static_grad(y[0])]

        def stopped(t, y):
            return y[1] * sign if t > t_switch else 1.0

        stopped.terminal = True
        stopped.direction = -1
        horizon = 20.0 * t_switch + 10.0
        sol = solve_ivp(rhs, (0.0, horizon), [problem.x_start, 0.0], events=stopped,
                        max_step=t_switch / 200.0, rtol=1e-10, atol=1e-12)
        if sol.status != 1:
            raise RuntimeError("atom did not stop within the integration horizon")
        return sol.t[-1], sol.y[0, -1]

    def miss(t_switch):
        return sign * (shoot(t_switch)[1] - problem.x_target)

    scale = max_tweezer_force(v, land.tweezer_width, m, land.distance).t_bang_bang
    lo, hi = 0.1 * scale, 0.5 * scale
    while miss(hi) < 0:
        hi *= 1.5
        if hi > 100 * scale:
            raise RuntimeError("the tweezer cannot pull the atom out of the start trap")
    t_switch = brentq(miss, lo, hi, xtol=1e-10)
    return float(shoot(t_switch)[0])
