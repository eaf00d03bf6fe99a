"""Self-checks of the numerical core, run by ``tweezer-transport validate`` and the test suite.

Each check returns an :class:`InvariantResult` holding the measured value,
the tolerance and a pass flag, so callers can report instead of raising.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lfp import lfp_adjoint, lfp_forward
from .model import (ControlSignal, Landscape, PhysicalConstants, TrapSpec, UnitSystem, escape_momentum,
                    noise_coefficients, target_field, thermal_initial_field)
from .phase_grid import PhaseField, PhaseGrid, advect_x, kick_p_classical, kick_p_wigner, overlap
from .wigner import WignerConfig, wigner_adjoint, wigner_forward

P_TD_SR88_SI = 0.63e-25


@dataclass(frozen=True)
class InvariantResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}) {self.detail}".rstrip()


def _sr_setup(n: int = 128):
    units = UnitSystem(PhysicalConstants.for_species("Sr88"))
    kb = units.kb_mk
    land = Landscape(TrapSpec(0.0, -kb, 1.5), TrapSpec(10.0, -kb, 1.5), 1.5)
    grid = PhaseGrid(-4.0, 6.0, -1.5, 1.5, n, n)
    f0 = thermal_initial_field(land.trap_a, 0.1 * kb, grid)
    control = ControlSignal.smooth_ramp(0.0, 1.0, 2.0, -1.5 * kb, 200)
    return units, land, grid, f0, control


def mass_conservation(tolerance: float = 1e-10) -> InvariantResult:
    """Largest per-step change of total probability, noise-free classical and Wigner runs."""
    units, land, grid, f0, control = _sr_setup()
    rec_c = lfp_forward(f0, control, land, n_steps=200)
    rec_w = wigner_forward(f0, control, land, WignerConfig(0.05, grid), n_steps=200)
    worst = max(float(np.max(np.abs(np.diff(r.mass_trace)))) for r in (rec_c, rec_w))
    return InvariantResult("mass conservation per step", worst, tolerance, worst <= tolerance)


def _duality_drift(forward, adjoint) -> float:
    pairs = [overlap(f, h) for f, h in zip(forward.fields, adjoint.fields)]
    return float(np.max(np.abs(np.asarray(pairs) - pairs[0])) / abs(pairs[0]))


def forward_adjoint_duality(tolerance: float = 1e-7) -> InvariantResult:
    """<f(t), h(t)> constancy with friction and diffusion on, both tiers."""
    units, land, grid, f0, control = _sr_setup()
    noise = noise_coefficients(0.01, 0.1 * units.kb_mk, 1.0, units.hbar)
    h_t = target_field(1.0, (0.5, 0.2), grid)
    fwd = lfp_forward(f0, control, land, noise, n_steps=200, store_stride=20)
    adj = lfp_adjoint(h_t, control, land, noise, n_steps=200, store_stride=20)
    drift = _duality_drift(fwd, adj)
    cfg = WignerConfig(0.05, grid, noise_coefficients(0.01, 0.1 * units.kb_mk, 1.0, 0.05))
    fwd_w = wigner_forward(f0, control, land, cfg, n_steps=200, store_stride=20)
    adj_w = wigner_adjoint(h_t, control, land, cfg, n_steps=200, store_stride=20)
    drift = max(drift, _duality_drift(fwd_w, adj_w))
    return InvariantResult("forward/adjoint duality drift", drift, tolerance, drift < tolerance)


def strang_evolve(field: PhaseField, kick: Callable[[PhaseField, float], PhaseField], dt: float, n: int,
                  mass: float = 1.0) -> PhaseField:
    """Kick/drift/kick composition with a generic kick substep."""
    for _ in range(n):
        field = kick(advect_x(kick(field, 0.5 * dt), dt, mass), 0.5 * dt)
    return field


def _gaussian(grid: PhaseGrid, x0: float, p0: float, sx: float, sp: float) -> PhaseField:
    X, P = grid.mesh
    values = np.exp(-0.5 * ((X - x0) / sx) ** 2 - 0.5 * ((P - p0) / sp) ** 2)
    return PhaseField(grid, values / (values.sum() * grid.cell))


def quadratic_wigner_equivalence(tolerance: float = 1e-10, epsilon: float = 0.3) -> InvariantResult:
    """Wigner and classical kicks coincide for a quadratic potential at any epsilon."""
    grid = PhaseGrid(-6.0, 6.0, -6.0, 6.0, 128, 128)
    kappa = 0.8
    f0 = _gaussian(grid, 1.0, 0.5, 0.4, 0.3)
    classical = strang_evolve(f0, lambda f, tau: kick_p_classical(f, kappa * grid.x, tau), 0.02, 150)
    quantum = strang_evolve(f0, lambda f, tau: kick_p_wigner(f, lambda x: 0.5 * kappa * x**2, epsilon, tau), 0.02, 150)
    diff = float(np.abs(classical.values - quantum.values).sum() * grid.cell)
    return InvariantResult("quadratic potential Wigner = classical (L1)", diff, tolerance, diff < tolerance,
                           f"epsilon={epsilon}")


def harmonic_period_errors(steps_per_period=(40, 80, 160), kappa: float = 1.0) -> list[float]:
    """Phase-space centroid error after one period of a harmonic oscillator."""
    grid = PhaseGrid(-5.0, 5.0, -5.0, 5.0, 128, 128)
    omega = math.sqrt(kappa)
    period = 2.0 * math.pi / omega
    x0 = 1.5
    f0 = _gaussian(grid, x0, 0.0, 0.35, 0.35)
    X, P = grid.mesh
    errors = []
    for n in steps_per_period:
        f = strang_evolve(f0, lambda fld, tau: kick_p_classical(fld, kappa * grid.x, tau), period / n, n)
        m = f.values * grid.cell
        mx, mp = float((X * m).sum() / m.sum()), float((P * m).sum() / m.sum())
        errors.append(math.hypot(mx - x0, mp / omega))
    return errors


def harmonic_period_order(tolerance: float = 0.2) -> InvariantResult:
    """Observed convergence order of the period test; second order expected."""
    errors = harmonic_period_errors()
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    order = float(np.mean(orders))
    return InvariantResult("harmonic period convergence order", order, tolerance, abs(order - 2.0) < tolerance,
                           "errors " + ", ".join(f"{e:.2e}" for e in errors))


def escape_momentum_si(tolerance: float = 0.01) -> InvariantResult:
    """sqrt(2 m U0) for 88Sr and a 1 mK well against 0.63e-25 kg m/s (two significant digits)."""
    units = UnitSystem(PhysicalConstants.for_species("Sr88"))
    p_si = float(units.to_si(escape_momentum(units.kb_mk), "momentum"))
    rel = abs(p_si - P_TD_SR88_SI) / P_TD_SR88_SI
    return InvariantResult("p_td for 88Sr at 1 mK (relative to 0.63e-25 kg m/s)", rel, tolerance, rel < tolerance,
                           f"p_td={p_si:.4e} kg m/s")


CHECKS: dict[str, Callable[[], InvariantResult]] = {
    "mass": mass_conservation,
    "duality": forward_adjoint_duality,
    "quadratic_wigner": quadratic_wigner_equivalence,
    "harmonic_period": harmonic_period_order,
    "p_td": escape_momentum_si,
}


def run_all(names=None) -> list[InvariantResult]:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        res = CHECKS[name]()
        results.append(InvariantResult(res.name, res.value, res.tolerance, res.passed, res.detail,
                                       time.perf_counter() - start))
    return results
