import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweezer_transport.model import (ControlSignal, CostWeights, Landscape, PhysicalConstants, TrapSpec,
                                     UnitSystem, max_tweezer_force)
from tweezer_transport.trajectory_oc import (TransportProblem, bang_bang_time, cost_gradient, evaluate_cost,
                                             final_time_residual, integrate_adjoint, integrate_forward,
                                             inverse_dynamics_guess, solve_deterministic, solve_neumann_bvp)

KB = UnitSystem(PhysicalConstants.for_species("Sr88")).kb_mk
SR_LAND = Landscape(TrapSpec(0.0, -KB, 1.5), TrapSpec(10.0, -KB, 1.5), 1.5)
FREE = Landscape(TrapSpec(-1e4, 0.0, 1.5), TrapSpec(1e4, 0.0, 1.5), 1.5)
HARMONIC_FAR = 1e3


def _zero_tweezer(t_f, n=400):
    return ControlSignal.uniform(t_f, n, 50.0, 0.0)


# --- forward dynamics -----------------------------------------------------------------------------


@given(x0=st.floats(-5, 5), p0=st.floats(-3, 3), t_f=st.floats(0.1, 10))
def test_free_flight_is_exact(x0, p0, t_f):
    traj = integrate_forward(_zero_tweezer(t_f, 20), FREE, x0, p0)
    np.testing.assert_allclose(traj.x, x0 + p0 * traj.times, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(traj.p, p0, rtol=0, atol=1e-14)


def test_atom_at_rest_in_trap_stays():
    traj = integrate_forward(_zero_tweezer(5.0), SR_LAND, 0.0, 0.0)
    assert np.abs(traj.x).max() < 1e-12 and np.abs(traj.p).max() < 1e-12


def test_energy_conserved_in_static_landscape():
    traj = integrate_forward(ControlSignal.uniform(20.0, 2000, 4.0, -1.5 * KB), SR_LAND, 0.3, 0.1)
    energy = 0.5 * traj.p**2 + SR_LAND.potential(traj.x, 4.0, -1.5 * KB)
    assert np.ptp(energy) < 1e-10 * max(1.0, abs(energy[0]))


def test_forward_fourth_order():
    # static tweezer, so the piecewise-linear control is exact at every resolution
    def end(n):
        return integrate_forward(ControlSignal.uniform(10.0, n, 3.0, -1.5 * KB), SR_LAND, 0.0, 0.4).x[-1]

    ref = end(6400)
    errs = [abs(end(n) - ref) for n in (100, 200)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.5)


# --- adjoint --------------------------------------------------------------------------------------


def test_adjoint_zero_for_perfect_terminal_state():
    traj = integrate_forward(_zero_tweezer(3.0), SR_LAND, 10.0, 0.0)
    adj = integrate_adjoint(_zero_tweezer(3.0), traj, CostWeights(), SR_LAND, 10.0)
    assert np.abs(adj.x_h).max() < 1e-12 and np.abs(adj.p_h).max() < 1e-12


def test_adjoint_harmonic_closed_form():
    # small oscillation near the bottom of trap A: U_xx = kappa, so x_h'' = -kappa x_h
    land = Landscape(TrapSpec(0.0, -KB, 1.5), TrapSpec(HARMONIC_FAR, -KB, 1.5), 1.5)
    control = ControlSignal.uniform(6.0, 3000, HARMONIC_FAR, 0.0)
    traj = integrate_forward(control, land, 0.0, 0.0)
    a, b = 0.7, -0.2
    adj = integrate_adjoint(control, traj, CostWeights(), land, 0.0, terminal=(a, b))
    omega = math.sqrt(land.trap_a.curvature)
    s = control.t_f - control.times
    # reversed time: da/ds = b, db/ds = -kappa a
    np.testing.assert_allclose(adj.x_h, a * np.cos(omega * s) + b / omega * np.sin(omega * s), atol=1e-10)
    np.testing.assert_allclose(adj.p_h, b * np.cos(omega * s) - a * omega * np.sin(omega * s), atol=1e-10)


def test_adjoint_pairs_with_linearised_flow():
    """x_h dp + p_h dx is conserved along a trajectory for any linearised perturbation (dx, dp)."""
    control = ControlSignal.smooth_ramp(0.0, 10.0, 12.0, -1.5 * KB, 4000)
    base = integrate_forward(control, SR_LAND, 0.0, 0.0)
    h = 1e-6
    pert = integrate_forward(control, SR_LAND, h, 0.0)
    dx, dp = (pert.x - base.x) / h, (pert.p - base.p) / h
    adj = integrate_adjoint(control, base, CostWeights(), SR_LAND, 10.0, terminal=(0.3, 1.1))
    pairing = adj.x_h * dp + adj.p_h * dx
    assert np.ptp(pairing) < 1e-5 * np.abs(pairing).max()


# --- control boundary-value problem ---------------------------------------------------------------


def test_bvp_zero_and_constant():
    assert np.array_equal(solve_neumann_bvp(0.1, 1.0, np.zeros(50), 0.1), np.zeros(50))
    np.testing.assert_allclose(solve_neumann_bvp(0.1, 2.0, np.full(50, -3.0), 0.1), 1.5, rtol=1e-12)


def test_bvp_manufactured_solution_second_order():
    nu, gamma, t_f = 0.5, 2.0, 3.0
    errors = []
    for n in (100, 200):
        t = np.linspace(0, t_f, n + 1)
        w = np.cos(math.pi * t / t_f)
        rhs = -nu * (math.pi / t_f) ** 2 * w - gamma * w
        errors.append(np.abs(solve_neumann_bvp(nu, gamma, rhs, t[1]) - w).max())
    assert math.log2(errors[0] / errors[1]) == pytest.approx(2.0, abs=0.1)


def test_bvp_rejects_singular():
    with pytest.raises(ValueError):
        solve_neumann_bvp(0.1, 0.0, np.zeros(5), 0.1)


# --- cost, final time, gradient --------------------------------------------------------------------


def test_evaluate_cost_parts():
    w = CostWeights(gamma_u=2.0, gamma_v=0.0, nu_u=0.0, nu_v=0.0, nu_x=4.0, nu_p=6.0, nu_tf=3.0)
    control = ControlSignal.uniform(2.0, 10, 1.0, 0.0)
    traj = integrate_forward(_zero_tweezer(2.0, 10), FREE, 0.0, 1.0)
    cost = evaluate_cost(control, traj, w, 5.0)
    assert cost.terminal == pytest.approx(0.5 * 4 * 9 + 0.5 * 6 * 1)
    assert cost.control == pytest.approx(0.5 * 2 * 1 * 2.0)
    assert cost.time == pytest.approx(0.5 * 3 * 4)
    assert cost.total == pytest.approx(cost.terminal + cost.control + cost.time)


def test_slope_cost_counts_differences():
    w = CostWeights(gamma_u=0.0, gamma_v=0.0, nu_u=2.0, nu_v=0.0)
    control = ControlSignal(np.linspace(0, 4, 41), np.linspace(0, 8, 41), np.zeros(41))
    traj = integrate_forward(control, FREE, 0.0)
    assert evaluate_cost(control, traj, w, 0.0).control == pytest.approx(0.5 * 2 * 2**2 * 4)


def test_final_time_residual_trivial_and_sign():
    w = CostWeights(gamma_u=0.0, gamma_v=0.0, nu_u=0.0, nu_v=0.0, nu_tf=0.0)
    rest = integrate_forward(_zero_tweezer(3.0, 30), FREE, 10.0)
    assert final_time_residual(_zero_tweezer(3.0, 30), rest, w, FREE, 10.0) == 0.0
    # moving toward the target: stopping later lowers the cost
    moving = integrate_forward(_zero_tweezer(3.0, 30), FREE, 0.0, 1.0)
    assert final_time_residual(_zero_tweezer(3.0, 30), moving, w, FREE, 10.0) < 0


def test_final_time_residual_matches_extension():
    w = CostWeights(gamma_u=1e-2, gamma_v=0.0, nu_u=0.0, nu_v=0.0, nu_x=3.0, nu_p=2.0, nu_tf=0.5)
    u0, v0 = 2.0, -1.5 * KB

    def cost(t_f):
        c = ControlSignal.uniform(t_f, 4000, u0, v0)
        traj = integrate_forward(c, SR_LAND, 0.5, 0.2)
        return evaluate_cost(c, traj, w, 10.0).total

    c = ControlSignal.uniform(4.0, 4000, u0, v0)
    res = final_time_residual(c, integrate_forward(c, SR_LAND, 0.5, 0.2), w, SR_LAND, 10.0)
    assert res == pytest.approx((cost(4.0 + 1e-4) - cost(4.0 - 1e-4)) / 2e-4, rel=1e-4)


def test_nodal_gradient_matches_finite_differences():
    problem = TransportProblem(SR_LAND, CostWeights(nu_x=100, nu_p=100))
    control = inverse_dynamics_guess(problem, 20.0, -1.5 * KB, n_intervals=800)
    ev = cost_gradient(problem, control)
    rng = np.random.default_rng(1)
    nodes = rng.choice(control.times.size, 20, replace=False)
    for channel, grad in (("u", ev.grad_u), ("v", ev.grad_v)):
        numeric = []
        for k in nodes:
            h = 1e-5 if channel == "u" else 1e-6
            vals = []
            for sign in (1, -1):
                arr = getattr(control, channel).copy()
                arr[k] += sign * h
                vals.append(cost_gradient(problem, control.with_values(**{channel: arr})).cost.total)
            numeric.append((vals[0] - vals[1]) / (2 * h))
        numeric = np.asarray(numeric)
        assert np.linalg.norm(grad[nodes] - numeric) <= 1e-3 * np.linalg.norm(numeric)


# --- optimizer and limits ----------------------------------------------------------------------------


def test_fixed_time_solve_reaches_target():
    problem = TransportProblem(SR_LAND, CostWeights(nu_x=100, nu_p=100))
    guess = ControlSignal.smooth_ramp(0.0, 10.0, 40.0, -1.5 * KB, 400)
    sol = solve_deterministic(problem, guess, max_iter=300)
    assert abs(sol.trajectory.x[-1] - 10.0) < 0.05 and abs(sol.trajectory.p[-1]) < 0.05
    totals = [h for h in sol.history]
    assert all(b <= a + 1e-12 for a, b in zip(totals, totals[1:]))


def test_free_bang_bang_time():
    problem = TransportProblem(FREE.__class__(TrapSpec(0.0, 0.0, 1.5), TrapSpec(10.0, 0.0, 1.5), 1.5))
    lim = max_tweezer_force(-1.5 * KB, 1.5, 1.0, 10.0)
    assert bang_bang_time(problem, -1.5 * KB) == pytest.approx(2 * math.sqrt(10.0 / lim.acceleration), rel=1e-6)
    assert lim.t_bang_bang == pytest.approx(2 * math.sqrt(10.0 / lim.acceleration), rel=1e-12)


def test_static_traps_slow_the_bang_bang_bound():
    problem = TransportProblem(SR_LAND)
    assert bang_bang_time(problem, -1.5 * KB) > max_tweezer_force(-1.5 * KB, 1.5, 1.0, 10.0).t_bang_bang


@settings(max_examples=15, deadline=None)
@given(v=st.floats(-20, -1), t_f=st.floats(8, 40))
def test_inverse_dynamics_guess_shape(v, t_f):
    problem = TransportProblem(SR_LAND)
    g = inverse_dynamics_guess(problem, t_f, v * KB, n_intervals=200)
    assert g.t_f == pytest.approx(t_f) and np.all(g.v == v * KB)
    assert np.all(np.abs(g.u - np.linspace(0, 10, 201)) < 12)
