import math

import numpy as np
import pytest

from tweezer_transport.lfp import lfp_forward
from tweezer_transport.model import (PhysicalConstants, TrapSpec, UnitSystem, noise_coefficients, target_field,
                                     thermal_initial_field, thermal_widths)
from tweezer_transport.phase_grid import PhaseGrid, overlap
from tweezer_transport.wigner import WignerConfig, estimate_epsilon, wigner_adjoint, wigner_forward


def test_config_validation(small_case):
    land, grid, f0, control = small_case
    with pytest.raises(ValueError):
        WignerConfig(0.0, grid)
    other = PhaseGrid(-4.0, 6.0, -1.5, 1.5, 32, 32)
    with pytest.raises(ValueError):
        wigner_forward(f0, control, land, WignerConfig(0.1, other), n_steps=10)


def test_small_epsilon_matches_classical(small_case):
    land, grid, f0, control = small_case
    classical = lfp_forward(f0, control, land, n_steps=100).terminal
    quantum = wigner_forward(f0, control, land, WignerConfig(1e-4, grid), n_steps=100).terminal
    assert np.abs(classical.values - quantum.values).sum() * grid.cell < 1e-6
    assert quantum.kind == "wigner"


def test_wigner_mass_and_duality(small_case):
    land, grid, f0, control = small_case
    cfg = WignerConfig(0.05, grid, noise_coefficients(0.02, 0.01, 1.0, 0.05))
    fwd = wigner_forward(f0, control, land, cfg, n_steps=100, store_stride=25)
    adj = wigner_adjoint(target_field(1.0, (0.5, 0.2), grid), control, land, cfg, n_steps=100, store_stride=25)
    pairs = np.array([overlap(f, h) for f, h in zip(fwd.fields, adj.fields)])
    assert np.abs(pairs - pairs[0]).max() < 1e-10 * abs(pairs[0])
    noiseless = wigner_forward(f0, control, land, WignerConfig(0.05, grid), n_steps=100)
    assert noiseless.mass_drift < 1e-10


def test_epsilon_sr88_is_small():
    units = UnitSystem(PhysicalConstants.for_species("Sr88"))
    est = estimate_epsilon(units, TrapSpec(0.0, -units.kb_mk, 1.5))
    assert 1e-4 < est.epsilon < 1e-2
    assert est.time_scale == pytest.approx(1.5 / math.sqrt(2 * units.kb_mk))


@pytest.mark.xfail(strict=True, reason="hbar omega / U0 for 6Li in a 1 mK, 0.3 um trap is about 0.042, "
                                       "outside [0.1, 0.4]; 0.22 is configured explicitly instead")
def test_epsilon_li6_in_quoted_range():
    units = UnitSystem(PhysicalConstants.for_species("Li6"))
    est = estimate_epsilon(units, TrapSpec(0.0, -units.kb_mk, 0.3))
    assert est.epsilon == pytest.approx(0.0423, rel=0.01)
    assert 0.1 <= est.epsilon <= 0.4


def test_epsilon_scales_with_inverse_sqrt_mass():
    light = UnitSystem(PhysicalConstants.for_species("custom", 10.0))
    heavy = UnitSystem(PhysicalConstants.for_species("custom", 40.0))
    e_light = estimate_epsilon(light, TrapSpec(0.0, -light.kb_mk, 1.0)).epsilon
    e_heavy = estimate_epsilon(heavy, TrapSpec(0.0, -heavy.kb_mk, 1.0)).epsilon
    assert e_light / e_heavy == pytest.approx(2.0, rel=1e-12)


def test_epsilon_rejects_repulsive_trap(sr_units):
    with pytest.raises(ValueError):
        estimate_epsilon(sr_units, TrapSpec(0.0, 1.0, 1.0))


def test_quantum_thermal_state_is_valid_wigner_function():
    trap = TrapSpec(0.0, -1.0, 0.5)
    kt, eps = 0.05, 0.4
    sx, sp = thermal_widths(trap, kt, 1.0, eps)
    assert sx * sp >= eps / 2 * (1 - 1e-12)
    cx, cp = thermal_widths(trap, kt)
    assert sx > cx and sp > cp
    # high-temperature limit recovers the classical widths
    hx, hp = thermal_widths(trap, 100.0, 1.0, eps)
    assert hx == pytest.approx(thermal_widths(trap, 100.0)[0], rel=1e-4)
    grid = PhaseGrid(-3.0, 3.0, -6.0, 6.0, 64, 128)
    f = thermal_initial_field(trap, kt, grid, hbar=eps)
    assert f.kind == "wigner" and f.mass == pytest.approx(1.0)
