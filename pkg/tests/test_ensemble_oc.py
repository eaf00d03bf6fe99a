import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweezer_transport.ensemble_oc import (AcceptanceBox, EnsembleProblem, PerturbationSpec, bath_sweep,
                                           evaluate_ensemble, evaluate_fidelity, fidelity, optimize_ensemble,
                                           perturb_and_evaluate, run_forward, temperature_trace)
from tweezer_transport.model import (ControlSignal, CostWeights, Landscape, TrapSpec, noise_coefficients,
                                     target_field, thermal_initial_field)
from tweezer_transport.phase_grid import PhaseField, PhaseGrid
from tweezer_transport.trajectory_oc import TransportProblem, inverse_dynamics_guess

GRID = PhaseGrid(-2.0, 2.0, -2.0, 2.0, 40, 40)


def _uniform_field(grid):
    return PhaseField(grid, np.ones((grid.n_x, grid.n_p)))


# --- fidelity -----------------------------------------------------------------------------------


def test_fidelity_of_uniform_field_is_area_fraction():
    box = AcceptanceBox(0.5, 1.0)
    assert fidelity(_uniform_field(GRID), box, 0.0) == pytest.approx((1.0 * 2.0) / (4.0 * 4.0), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(wx=st.floats(0.05, 1.9), wp=st.floats(0.05, 1.9), c=st.floats(-0.1, 0.1))
def test_fidelity_bounded_and_monotone(wx, wp, c):
    f = thermal_initial_field(TrapSpec(0.0, -1.0, 1.0), 0.1, GRID)
    small = fidelity(f, AcceptanceBox(wx, wp), c)
    large = fidelity(f, AcceptanceBox(wx * 1.05, wp * 1.05), c)
    assert 0.0 <= small <= large <= 1.0 + 1e-12


def test_fidelity_rejects_empty_field():
    with pytest.raises(ValueError):
        fidelity(PhaseField(GRID, np.zeros((40, 40))), AcceptanceBox(1, 1), 0.0)
    with pytest.raises(ValueError):
        AcceptanceBox(0.0, 1.0)


# --- problem and gradient -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def problem(sr_units):
    kb = sr_units.kb_mk
    land = Landscape(TrapSpec(0.0, -kb, 1.5), TrapSpec(4.0, -kb, 1.5), 1.5)
    grid = PhaseGrid(-3.0, 7.0, -1.5, 1.5, 64, 64)
    f0 = thermal_initial_field(land.trap_a, 0.1 * kb, grid)
    target = target_field(4.0, (0.5, 0.3), grid)
    noise = noise_coefficients(0.01, 0.1 * kb, 1.0, sr_units.hbar)
    return EnsembleProblem(land, f0, target, CostWeights(nu_target=100.0), noise, n_steps=60,
                           v_bounds=(-20 * kb, 0.0), box=AcceptanceBox(1.0, 0.3))


def _seed(sr_units, t_f=8.0):
    land = Landscape(TrapSpec(0.0, -sr_units.kb_mk, 1.5), TrapSpec(4.0, -sr_units.kb_mk, 1.5), 1.5)
    return inverse_dynamics_guess(TransportProblem(land), t_f, -5 * sr_units.kb_mk, 60, 0.3)


def test_problem_rejects_mismatched_grids(problem):
    other = PhaseGrid(-3.0, 7.0, -1.5, 1.5, 32, 32)
    with pytest.raises(ValueError):
        EnsembleProblem(problem.landscape, problem.initial, target_field(4.0, (0.5, 0.3), other))
    with pytest.raises(ValueError):
        EnsembleProblem(problem.landscape, problem.initial, problem.target, v_bounds=(0.0, -1.0))


def test_cost_parts_add_up(problem, sr_units):
    ev = evaluate_ensemble(problem, _seed(sr_units), gradient=False)
    assert ev.cost == pytest.approx(ev.overlap_cost + ev.control_cost + ev.penalty)
    assert ev.penalty == 0.0 and ev.grad_u is None


@pytest.mark.parametrize("epsilon", [None, 0.05])
def test_gradient_matches_finite_differences(problem, sr_units, epsilon):
    from dataclasses import replace

    prob = replace(problem, epsilon=epsilon)
    control = _seed(sr_units)
    ev = evaluate_ensemble(prob, control)
    rng = np.random.default_rng(3)
    for channel, grad, h in (("u", ev.grad_u, 1e-5), ("v", ev.grad_v, 1e-6)):
        nodes = rng.choice(np.arange(1, 60), 6, replace=False)
        numeric = []
        for k in nodes:
            vals = []
            for sign in (1, -1):
                arr = getattr(control, channel).copy()
                arr[k] += sign * h
                vals.append(evaluate_ensemble(prob, control.with_values(**{channel: arr}), gradient=False).cost)
            numeric.append((vals[0] - vals[1]) / (2 * h))
        numeric = np.asarray(numeric)
        assert np.linalg.norm(grad[nodes] - numeric) <= 1e-4 * np.linalg.norm(numeric)


def test_depth_bound_penalty_gradient(problem, sr_units):
    kb = sr_units.kb_mk
    control = _seed(sr_units).with_values(v=np.full(61, -25 * kb))
    ev = evaluate_ensemble(problem, control)
    # below the lower bound: descent must deepen less, i.e. raise v
    assert ev.penalty > 0 and np.all(ev.grad_v < 0)


def test_optimisation_improves_fidelity(problem, sr_units):
    seed = _seed(sr_units)
    before = evaluate_fidelity(problem, seed)
    sol = optimize_ensemble(problem, seed, max_iter=8)
    assert sol.fidelity > before
    hist = sol.cost_history
    assert hist[-1] < hist[0]
    assert np.all(sol.control.v <= 0) and np.all(sol.control.v >= -20 * sr_units.kb_mk)


# --- perturbations, sweeps, temperature -------------------------------------------------------------


def test_zero_perturbation_is_identity(problem, sr_units):
    seed = _seed(sr_units)
    base = evaluate_fidelity(problem, seed)
    for spec in (PerturbationSpec("linear_ramp", 0.0), PerturbationSpec("sinusoid", 0.0, 0.5),
                 PerturbationSpec("depth_offset", 0.0)):
        fid, perturbed = perturb_and_evaluate(problem, seed, spec)
        assert fid == pytest.approx(base, abs=1e-13)
        np.testing.assert_array_equal(perturbed.u, seed.u)


def test_perturbation_shapes():
    c = ControlSignal.uniform(2.0, 4, 1.0, -1.0)
    np.testing.assert_allclose(PerturbationSpec("linear_ramp", 0.5).apply(c).u, 1.0 + 0.5 * c.times / 2.0)
    np.testing.assert_allclose(PerturbationSpec("depth_offset", -0.5).apply(c).v, -1.5)
    np.testing.assert_allclose(PerturbationSpec("sinusoid", 0.2, 0.25).apply(c).u,
                               1.0 + 0.2 * np.sin(2 * math.pi * 0.25 * c.times))
    with pytest.raises(ValueError):
        PerturbationSpec("sinusoid", 0.1)
    with pytest.raises(ValueError):
        PerturbationSpec("twist", 0.1)


def test_bath_sweep_lengths(problem, sr_units):
    kb = sr_units.kb_mk
    noises = [noise_coefficients(0.01, t * kb, 1.0, sr_units.hbar) for t in (0.05, 0.5)]
    fids = bath_sweep(problem, _seed(sr_units), noises)
    assert len(fids) == 2 and all(0 <= f <= 1 for f in fids)


def test_temperature_trace_static_at_rest(sr_units):
    kb = sr_units.kb_mk
    land = Landscape(TrapSpec(0.0, -kb, 1.5), TrapSpec(10.0, -kb, 1.5), 1.5)
    grid = PhaseGrid(-3.0, 3.0, -1.0, 1.0, 64, 64)
    f0 = thermal_initial_field(land.trap_a, 0.1 * kb, grid)
    prob = EnsembleProblem(land, f0, target_field(0.0, (0.5, 0.3), grid), n_steps=20)
    control = ControlSignal.uniform(1.0, 20, 10.0, 0.0)
    rec = run_forward(prob, control, 5)
    trace = temperature_trace(rec, land, control, 1.0, kb)
    assert trace.shape == (5, 2)
    # harmonic estimate k_B T per degree of freedom pair, a little below it in the Gaussian well
    assert 0.08 < trace[0, 1] < 0.1
    assert np.ptp(trace[:, 1]) < 1e-3
