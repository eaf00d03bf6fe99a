"""Phase-space grids, fields and the split-step operators of the ensemble solvers.

Transport and force substeps are exact shifts (or the Wigner phase multiplier)
applied in Fourier space on a zero-padded copy of the field; friction and
diffusion use Crank-Nicolson with Dirichlet-zero boundaries.  Every forward
substep has an exact discrete transpose, so adjoint sweeps satisfy
``<S f, h> = <f, S^T h>`` to round-off.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.fft import irfft, rfft, rfftfreq
from scipy.linalg import solve_banded

from .model import NOISELESS, Landscape, NoiseParams, total_potential_derivs

FIELD_KINDS = ("distribution", "adjoint", "wigner")
_PHSF_MAGIC = b"PHSF"
_PHSF_VERSION = 1
_PHSF_HEADER = struct.Struct("<4sIII5dB")


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform periodic-style nodes ``x_min + i dx``, ``dx = (x_max - x_min) / n_x`` (same for p).

    ``pad_fraction`` sets the zero padding used by the spectral shifts.
    """

    x_min: float
    x_max: float
    p_min: float
    p_max: float
    n_x: int
    n_p: int
    pad_fraction: float = 0.25

    def __post_init__(self):
        if self.n_x < 8 or self.n_p < 8:
            raise ValueError("grids need at least 8 nodes per axis")
        if not (self.x_max > self.x_min and self.p_max > self.p_min):
            raise ValueError("empty phase-space window")
        if not all(math.isfinite(v) for v in (self.x_min, self.x_max, self.p_min, self.p_max)):
            raise ValueError("window bounds must be finite")
        if self.pad_fraction < 0:
            raise ValueError("pad_fraction must be non-negative")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def cell(self) -> float:
        return self.dx * self.dp

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @cached_property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.p, indexing="ij")

    @cached_property
    def n_x_padded(self) -> int:
        return _padded(self.n_x, self.pad_fraction)

    @cached_property
    def n_p_padded(self) -> int:
        return _padded(self.n_p, self.pad_fraction)

    @cached_property
    def kx(self) -> np.ndarray:
        """Angular wavenumbers conjugate to x on the padded axis."""
        return 2.0 * np.pi * rfftfreq(self.n_x_padded, self.dx)

    @cached_property
    def kp(self) -> np.ndarray:
        """Angular wavenumbers conjugate to p (the Wigner variable eta) on the padded axis."""
        return 2.0 * np.pi * rfftfreq(self.n_p_padded, self.dp)

    def contains(self, x_lo: float, x_hi: float, p_lo: float, p_hi: float) -> bool:
        return self.x_min <= x_lo and x_hi <= self.x_max and self.p_min <= p_lo and p_hi <= self.p_max

    def same_as(self, other: "PhaseGrid") -> bool:
        return (self.n_x, self.n_p) == (other.n_x, other.n_p) and np.allclose(
            [self.x_min, self.x_max, self.p_min, self.p_max],
            [other.x_min, other.x_max, other.p_min, other.p_max], rtol=1e-12, atol=0.0)


def _padded(n: int, fraction: float) -> int:
    extra = int(math.ceil(n * fraction))
    total = n + extra
    return total + (total % 2)


@dataclass(frozen=True)
class PhaseField:
    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0
    kind: str = "distribution"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_x, self.grid.n_p):
            raise ValueError(f"values shape {values.shape} does not match grid {(self.grid.n_x, self.grid.n_p)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell)

    def with_values(self, values, time: float | None = None, kind: str | None = None) -> "PhaseField":
        return replace(self, values=values, time=self.time if time is None else time,
                       kind=self.kind if kind is None else kind)

    def x_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dp

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.dx


# --- spectral substeps -------------------------------------------------------

def _expi(theta: np.ndarray) -> np.ndarray:
    """exp(i theta) for real theta (cheaper than the complex exponential)."""
    out = np.empty(np.shape(theta), dtype=complex)
    np.cos(theta, out=out.real)
    np.sin(theta, out=out.imag)
    return out


def _phase_multiply(values: np.ndarray, theta: np.ndarray, axis: int, n_padded: int) -> np.ndarray:
    """Multiply the padded real FFT along ``axis`` by exp(i theta) and crop."""
    spec = rfft(values, n=n_padded, axis=axis)
    spec *= _expi(theta)
    out = irfft(spec, n=n_padded, axis=axis)
    return out[:, : values.shape[1]] if axis == 1 else out[: values.shape[0]]


def _guard_shift(shift, limit: float, what: str) -> None:
    worst = float(np.max(np.abs(shift)))
    if worst > limit:
        raise ValueError(f"{what} shift {worst:.4g} exceeds half the padded domain ({limit:.4g})")


def advect_x(field: PhaseField, dt: float, mass: float = 1.0) -> PhaseField:
    """Exact free flight: every momentum column moves by p dt / m."""
    g = field.grid
    shift = g.p * dt / mass
    _guard_shift(shift, 0.5 * g.n_x_padded * g.dx, "position")
    theta = -np.outer(g.kx, shift)
    return field.with_values(_phase_multiply(field.values, theta, 0, g.n_x_padded), time=field.time + dt)


def kick_p_classical(field: PhaseField, force_gradient: np.ndarray, dt: float) -> PhaseField:
    """Exact momentum kick: the column at x moves by -dU/dx(x) dt."""
    g = field.grid
    grad = np.broadcast_to(np.asarray(force_gradient, dtype=float), (g.n_x,))
    _guard_shift(grad * dt, 0.5 * g.n_p_padded * g.dp, "momentum")
    theta = dt * np.outer(grad, g.kp)
    return field.with_values(_phase_multiply(field.values, theta, 1, g.n_p_padded))


def wigner_phase(potential: Callable, x: np.ndarray, eta: np.ndarray, epsilon: float) -> np.ndarray:
    """[U(x + eps eta / 2) - U(x - eps eta / 2)] / eps on the (x, eta) mesh."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    half = 0.5 * epsilon * eta[None, :]
    xx = x[:, None]
    return (potential(xx + half) - potential(xx - half)) / epsilon


def kick_p_wigner(field: PhaseField, potential: Callable, epsilon: float, dt: float) -> PhaseField:
    """Exact potential substep of the Wigner equation.

    ``potential`` is evaluated analytically at the staggered points
    x +- eps eta / 2; for linear or quadratic U this is the classical kick.
    """
    g = field.grid
    theta = dt * wigner_phase(potential, g.x, g.kp, epsilon)
    return field.with_values(_phase_multiply(field.values, theta, 1, g.n_p_padded))


# --- friction and diffusion --------------------------------------------------

def drift_diffusion_band(nodes: np.ndarray, step: float, drift_rate: float, diffusion: float) -> np.ndarray:
    """Banded (1, 1) matrix of ``drift_rate d/dq (q f) + diffusion d2f/dq2`` with zero exterior values."""
    n = nodes.size
    c = diffusion / step**2
    ab = np.zeros((3, n))
    ab[1] = -2.0 * c
    ab[0, 1:] = c + drift_rate * nodes[1:] / (2.0 * step)
    ab[2, :-1] = c - drift_rate * nodes[:-1] / (2.0 * step)
    return ab


def _band_transpose(ab: np.ndarray) -> np.ndarray:
    out = np.zeros_like(ab)
    out[1] = ab[1]
    out[0, 1:] = ab[2, :-1]
    out[2, :-1] = ab[0, 1:]
    return out


def _band_matvec(ab: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Banded (1, 1) matrix times ``y`` along axis 0 (``y`` may be 2-D)."""
    out = ab[1][:, None] * y if y.ndim == 2 else ab[1] * y
    if y.ndim == 2:
        out[:-1] += ab[0, 1:][:, None] * y[1:]
        out[1:] += ab[2, :-1][:, None] * y[:-1]
    else:
        out[:-1] += ab[0, 1:] * y[1:]
        out[1:] += ab[2, :-1] * y[:-1]
    return out


class CrankNicolson:
    """``(I - a A)^{-1} (I + a A)`` with ``a = dt / 2`` for a tridiagonal ``A``; also its transpose."""

    def __init__(self, band: np.ndarray, dt: float):
        if dt < 0:
            raise ValueError("time step must be non-negative")
        a = 0.5 * dt
        eye = np.zeros_like(band)
        eye[1] = 1.0
        self.explicit = eye + a * band
        self.implicit = eye - a * band
        self.explicit_t = _band_transpose(self.explicit)
        self.implicit_t = _band_transpose(self.implicit)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.implicit, _band_matvec(self.explicit, y), check_finite=False)

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return _band_matvec(self.explicit_t, solve_banded((1, 1), self.implicit_t, y, check_finite=False))


class FrictionDiffusion:
    """Crank-Nicolson step for 2 gamma d/dp(p f) + D_p d2f/dp2 + D_x d2f/dx2.

    The p and x operators act on different axes and commute, so the step is
    the product of two one-dimensional CN factors.
    """

    def __init__(self, grid: PhaseGrid, noise: NoiseParams, dt: float):
        if dt < 0:
            raise ValueError("time step must be non-negative")
        self.active_p = noise.gamma != 0 or noise.d_p != 0
        self.active_x = noise.d_x != 0
        self._p = CrankNicolson(drift_diffusion_band(grid.p, grid.dp, 2.0 * noise.gamma, noise.d_p), dt)
        self._x = CrankNicolson(drift_diffusion_band(grid.x, grid.dx, 0.0, noise.d_x), dt)

    def forward(self, values: np.ndarray) -> np.ndarray:
        out = values
        if self.active_p:
            out = self._p.apply(out.T).T
        if self.active_x:
            out = self._x.apply(out)
        return out

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        out = values
        if self.active_x:
            out = self._x.apply_transpose(out)
        if self.active_p:
            out = self._p.apply_transpose(out.T).T
        return out


def friction_diffusion_step(field: PhaseField, noise: NoiseParams, dt: float, direction: str = "forward") -> PhaseField:
    """One CN step of the Fokker-Planck terms, or its exact transpose for ``direction="adjoint"``."""
    if dt < 0:
        raise ValueError("time step must be non-negative")
    op = FrictionDiffusion(field.grid, noise, dt)
    if direction == "forward":
        return field.with_values(op.forward(field.values))
    if direction == "adjoint":
        return field.with_values(op.adjoint(field.values))
    raise ValueError("direction must be 'forward' or 'adjoint'")


# --- diagnostics ---------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    mass: float
    mean_x: float
    mean_p: float
    kinetic_energy: float
    potential_energy: float
    temperature: float

    @property
    def energy(self) -> float:
        return self.kinetic_energy + self.potential_energy


def local_minimum(potential: Callable, around: float, half_width: float, samples: int = 801) -> float:
    """Smallest value of ``potential`` on ``[around - half_width, around + half_width]``."""
    xs = np.linspace(around - half_width, around + half_width, samples)
    return float(np.min(potential(xs)))


def moments(field: PhaseField, potential: Callable | None = None, mass: float = 1.0,
            thermal_unit: float = 1.0, search_half_width: float = 1.5) -> Moments:
    """Mass, means and energies; temperature = <p^2/2m + U - U_min> / thermal_unit.

    ``U_min`` is the minimum of ``potential`` within ``search_half_width`` of
    the mean position; without a potential only the kinetic part counts.
    """
    g = field.grid
    f = field.values
    mass_total = float(f.sum() * g.cell)
    if mass_total == 0.0:
        raise ValueError("field has zero mass")
    px = f.sum(axis=1) * g.dp
    pp = f.sum(axis=0) * g.dx
    mean_x = float(px @ g.x * g.dx / mass_total)
    mean_p = float(pp @ g.p * g.dp / mass_total)
    kinetic = float(pp @ (g.p**2) * g.dp / (2.0 * mass * mass_total))
    pot = 0.0
    if potential is not None:
        u_min = local_minimum(potential, mean_x, search_half_width)
        pot = float(px @ (potential(g.x) - u_min) * g.dx / mass_total)
    return Moments(mass_total, mean_x, mean_p, kinetic, pot, (kinetic + pot) / thermal_unit)


def overlap(a: PhaseField, b: PhaseField) -> float:
    """Quadrature of a * b over phase space."""
    if not a.grid.same_as(b.grid):
        raise ValueError("fields live on different grids")
    return float(np.vdot(a.values, b.values) * a.grid.cell)


# --- split-step propagator ---------------------------------------------------------

def kick_phase_derivatives(grid: PhaseGrid, landscape: Landscape, u: float, v: float,
                           epsilon: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """d/du and d/dv of the kick phase rate Delta(x, eta).

    Classically Delta = eta dU/dx; in the Wigner tier
    Delta = [U(x + eps eta/2) - U(x - eps eta/2)] / eps.
    """
    if epsilon is None:
        d = total_potential_derivs(grid.x, u, v, landscape)
        return np.outer(d.d2U_dxdu, grid.kp), np.outer(d.d2U_dxdv, grid.kp)
    half = 0.5 * epsilon * grid.kp[None, :]
    x_plus, x_minus = grid.x[:, None] + half, grid.x[:, None] - half
    du = (landscape.tweezer_du(x_plus, u, v) - landscape.tweezer_du(x_minus, u, v)) / epsilon
    dv = (landscape.tweezer_profile(x_plus, u) - landscape.tweezer_profile(x_minus, u)) / epsilon
    return du, dv


class SplitStepper:
    """Strang step D(dt/2) K(dt/2; t_n) T(dt) K(dt/2; t_n+1) D(dt/2).

    D is friction/diffusion, K the momentum kick (classical or Wigner when
    ``epsilon`` is given), T free flight.  Controls are nodal (u, v) pairs.
    """

    def __init__(self, grid: PhaseGrid, landscape: Landscape, dt: float, mass: float = 1.0,
                 noise: NoiseParams = NOISELESS, epsilon: float | None = None):
        if not dt > 0:
            raise ValueError("time step must be positive")
        self.grid, self.landscape, self.dt, self.mass = grid, landscape, dt, mass
        self.noise, self.epsilon = noise, epsilon
        self._diff = FrictionDiffusion(grid, noise, 0.5 * dt)
        self._diffuse = self._diff.active_p or self._diff.active_x
        shift = grid.p * dt / mass
        _guard_shift(shift, 0.5 * grid.n_x_padded * grid.dx, "position")
        self._advect = _expi(-np.outer(grid.kx, shift))
        self._advect_back = self._advect.conj()
        if epsilon is not None:
            if not epsilon > 0:
                raise ValueError("epsilon must be positive")
            half = 0.5 * epsilon * grid.kp[None, :]
            self._x_plus = grid.x[:, None] + half
            self._x_minus = grid.x[:, None] - half
            self._static_delta = (landscape.static_potential(self._x_plus)
                                  - landscape.static_potential(self._x_minus)) / epsilon

    # kick phases and their control derivatives: Delta(x, eta) with theta = tau * Delta
    def delta(self, u: float, v: float) -> np.ndarray:
        g = self.grid
        if self.epsilon is None:
            grad = self.landscape.force_gradient(g.x, u, v)
            _guard_shift(grad * 0.5 * self.dt, 0.5 * g.n_p_padded * g.dp, "momentum")
            return np.outer(grad, g.kp)
        lw = self.landscape
        return self._static_delta + v * (lw.tweezer_profile(self._x_plus, u)
                                         - lw.tweezer_profile(self._x_minus, u)) / self.epsilon

    def delta_derivatives(self, u: float, v: float) -> tuple[np.ndarray, np.ndarray]:
        if self.epsilon is None:
            return kick_phase_derivatives(self.grid, self.landscape, u, v, None)
        lw = self.landscape
        du = (lw.tweezer_du(self._x_plus, u, v) - lw.tweezer_du(self._x_minus, u, v)) / self.epsilon
        dv = (lw.tweezer_profile(self._x_plus, u) - lw.tweezer_profile(self._x_minus, u)) / self.epsilon
        return du, dv

    def kick(self, values: np.ndarray, u: float, v: float, tau: float) -> np.ndarray:
        return _phase_multiply(values, tau * self.delta(u, v), 1, self.grid.n_p_padded)

    def advect(self, values: np.ndarray, backward: bool = False) -> np.ndarray:
        g = self.grid
        spec = rfft(values, n=g.n_x_padded, axis=0)
        spec *= self._advect_back if backward else self._advect
        return irfft(spec, n=g.n_x_padded, axis=0)[: g.n_x]

    def diffuse(self, values: np.ndarray, adjoint: bool = False) -> np.ndarray:
        if not self._diffuse:
            return values
        return self._diff.adjoint(values) if adjoint else self._diff.forward(values)

    def step(self, values: np.ndarray, c0: tuple[float, float], c1: tuple[float, float]) -> np.ndarray:
        half = 0.5 * self.dt
        out = self.diffuse(values)
        out = self.kick(out, *c0, half)
        out = self.advect(out)
        out = self.kick(out, *c1, half)
        return self.diffuse(out)

    def step_with_stages(self, values, c0, c1):
        """Forward step that also returns the two fields entering the kicks."""
        half = 0.5 * self.dt
        before_first = self.diffuse(values)
        before_second = self.advect(self.kick(before_first, *c0, half))
        out = self.diffuse(self.kick(before_second, *c1, half))
        return out, before_first, before_second

    def adjoint_step(self, values: np.ndarray, c0: tuple[float, float], c1: tuple[float, float]) -> np.ndarray:
        """Exact transpose of :meth:`step`."""
        return self.adjoint_step_with_stages(values, c0, c1)[0]

    def adjoint_step_with_stages(self, values, c0, c1):
        """Transpose step plus the adjoint fields just after each kick (second kick first)."""
        half = 0.5 * self.dt
        after_second = self.diffuse(values, adjoint=True)
        after_first = self.advect(self.kick(after_second, *c1, -half), backward=True)
        out = self.diffuse(self.kick(after_first, *c0, -half), adjoint=True)
        return out, after_first, after_second

    def kick_sensitivity(self, before: np.ndarray, after_adjoint: np.ndarray, u: float, v: float) -> tuple[float, float]:
        """d<h, K(u, v) f>/d(u, v) for one half kick, as phase-space quadratures."""
        g = self.grid
        tau = 0.5 * self.dt
        spec = rfft(before, n=g.n_p_padded, axis=1) * _expi(tau * self.delta(u, v))
        du, dv = self.delta_derivatives(u, v)
        out = []
        for d in (du, dv):
            field = irfft(1j * tau * d * spec, n=g.n_p_padded, axis=1)[:, : g.n_p]
            out.append(float(np.vdot(after_adjoint, field) * g.cell))
        return out[0], out[1]


# --- snapshot files ----------------------------------------------------------

def write_phsf(path, field: PhaseField) -> None:
    """Binary little-endian snapshot: fixed header followed by x-major float64 values."""
    g = field.grid
    header = _PHSF_HEADER.pack(_PHSF_MAGIC, _PHSF_VERSION, g.n_x, g.n_p, g.x_min, g.x_max, g.p_min, g.p_max,
                               float(field.time), FIELD_KINDS.index(field.kind))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_phsf(path, pad_fraction: float = 0.25) -> PhaseField:
    data = Path(path).read_bytes()
    if len(data) < _PHSF_HEADER.size:
        raise ValueError("file too short for a PHSF header")
    magic, version, n_x, n_p, x_min, x_max, p_min, p_max, time, kind = _PHSF_HEADER.unpack_from(data)
    if magic != _PHSF_MAGIC:
        raise ValueError("not a PHSF file")
    if version != _PHSF_VERSION:
        raise ValueError(f"unsupported PHSF version {version}")
    if kind >= len(FIELD_KINDS):
        raise ValueError(f"unknown field kind code {kind}")
    body = data[_PHSF_HEADER.size:]
    if len(body) != 8 * n_x * n_p:
        raise ValueError("PHSF payload size does not match the header")
    values = np.frombuffer(body, dtype="<f8").reshape(n_x, n_p).astype(float)
    grid = PhaseGrid(x_min, x_max, p_min, p_max, n_x, n_p, pad_fraction)
    return PhaseField(grid, values, time, FIELD_KINDS[kind])
