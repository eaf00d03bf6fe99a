"""Physical model: units, Gaussian trap landscape, cost weights, noise and phase-space densities.

Internal units are micrometres, microseconds and the atom mass, so the atom
mass is 1 and momenta are velocities in um/us.  Energies are therefore in
``m * (um/us)**2``.  Trap depths are negative for attractive wells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import constants as sc

SPECIES_MASS_AMU = {
    "Sr88": 87.9056121,
    "Li6": 6.0151228874,
}


def _check_finite(*values) -> None:
    for value in values:
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite input: {value!r}")


@dataclass(frozen=True)
class PhysicalConstants:
    boltzmann_constant: float = sc.k
    hbar: float = sc.hbar
    atomic_mass: float = SPECIES_MASS_AMU["Sr88"] * sc.atomic_mass

    def __post_init__(self):
        for name in ("boltzmann_constant", "hbar", "atomic_mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def for_species(cls, name: str | None = None, mass_amu: float | None = None) -> "PhysicalConstants":
        if mass_amu is None:
            if name not in SPECIES_MASS_AMU:
                raise ValueError(f"unknown species {name!r}; give mass_amu explicitly")
            mass_amu = SPECIES_MASS_AMU[name]
        return cls(atomic_mass=mass_amu * sc.atomic_mass)


_KINDS = ("length", "time", "mass", "energy", "momentum", "force", "rate")


@dataclass(frozen=True)
class UnitSystem:
    """SI <-> internal conversion.  ``epsilon`` is hbar expressed in internal units."""

    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    length_unit: float = 1e-6
    time_unit: float = 1e-6

    @property
    def mass_unit(self) -> float:
        return self.constants.atomic_mass

    @property
    def energy_unit(self) -> float:
        return self.mass_unit * self.length_unit**2 / self.time_unit**2

    @property
    def momentum_unit(self) -> float:
        return self.mass_unit * self.length_unit / self.time_unit

    @property
    def epsilon(self) -> float:
        return self.constants.hbar / (self.energy_unit * self.time_unit)

    @property
    def hbar(self) -> float:
        return self.epsilon

    def unit(self, kind: str) -> float:
        if kind not in _KINDS:
            raise ValueError(f"unknown quantity kind {kind!r}")
        return {
            "length": self.length_unit,
            "time": self.time_unit,
            "mass": self.mass_unit,
            "energy": self.energy_unit,
            "momentum": self.momentum_unit,
            "force": self.energy_unit / self.length_unit,
            "rate": 1.0 / self.time_unit,
        }[kind]

    def to_internal(self, value, kind: str):
        return value / self.unit(kind)

    def to_si(self, value, kind: str):
        return value * self.unit(kind)

    # experimentalist units
    def mk_to_energy(self, temperature_mk):
        """k_B * T for T in millikelvin, in internal energy units."""
        return self.constants.boltzmann_constant * 1e-3 * np.asarray(temperature_mk) / self.energy_unit

    def energy_to_mk(self, energy):
        return np.asarray(energy) * self.energy_unit / (self.constants.boltzmann_constant * 1e-3)

    @property
    def kb_mk(self) -> float:
        """Internal energy of one millikelvin."""
        return float(self.mk_to_energy(1.0))


@dataclass(frozen=True)
class TrapSpec:
    center: float
    depth: float
    width: float

    def __post_init__(self):
        _check_finite(self.center, self.depth, self.width)
        if not self.width > 0:
            raise ValueError("trap width must be positive")

    def __call__(self, x):
        return gaussian_potential(x, self.center, self.depth, self.width)

    @property
    def curvature(self) -> float:
        """Second derivative of the trap potential at its centre."""
        return -2.0 * self.depth / self.width**2


def gaussian_potential(x, center, depth, width):
    """``depth * exp(-(x - center)**2 / width**2)``."""
    _check_finite(x, center, depth, width)
    if not np.all(np.asarray(width) > 0):
        raise ValueError("width must be positive")
    s = (np.asarray(x, dtype=float) - center) / width
    return depth * np.exp(-s * s)


class PotentialDerivs(NamedTuple):
    U: np.ndarray
    dU_dx: np.ndarray
    d2U_dx2: np.ndarray
    d2U_dxdu: np.ndarray
    d2U_dxdv: np.ndarray


@dataclass(frozen=True)
class Landscape:
    """Two static traps plus one moving tweezer of fixed width."""

    trap_a: TrapSpec
    trap_b: TrapSpec
    tweezer_width: float

    def __post_init__(self):
        if not self.tweezer_width > 0:
            raise ValueError("tweezer width must be positive")

    @property
    def distance(self) -> float:
        return abs(self.trap_b.center - self.trap_a.center)

    def static_potential(self, x):
        return self.trap_a(x) + self.trap_b(x)

    def static_force_gradient(self, x):
        out = 0.0
        for trap in (self.trap_a, self.trap_b):
            s = (np.asarray(x, dtype=float) - trap.center) / trap.width
            out = out - 2.0 * s / trap.width * trap.depth * np.exp(-s * s)
        return out

    def tweezer_profile(self, x, u):
        """exp(-(x-u)^2/sigma^2), i.e. dU/dv."""
        s = (np.asarray(x, dtype=float) - u) / self.tweezer_width
        return np.exp(-s * s)

    def tweezer_du(self, x, u, v):
        """dU/du of the tweezer term."""
        s = (np.asarray(x, dtype=float) - u) / self.tweezer_width
        return 2.0 * s / self.tweezer_width * v * np.exp(-s * s)

    def potential(self, x, u, v):
        return self.static_potential(x) + v * self.tweezer_profile(x, u)

    def force_gradient(self, x, u, v):
        """dU/dx."""
        s = (np.asarray(x, dtype=float) - u) / self.tweezer_width
        return self.static_force_gradient(x) - 2.0 * s / self.tweezer_width * v * np.exp(-s * s)


def total_potential_derivs(x, u, v, landscape: Landscape) -> PotentialDerivs:
    """Analytic U and the four derivatives used by the optimality system."""
    _check_finite(x, u, v)
    x = np.asarray(x, dtype=float)
    U = np.zeros_like(x + u + v)
    dU = np.zeros_like(U)
    d2U = np.zeros_like(U)
    for center, depth, width in (
        (landscape.trap_a.center, landscape.trap_a.depth, landscape.trap_a.width),
        (landscape.trap_b.center, landscape.trap_b.depth, landscape.trap_b.width),
        (u, v, landscape.tweezer_width),
    ):
        s = (x - center) / width
        g = depth * np.exp(-s * s)
        U = U + g
        dU = dU - 2.0 * s / width * g
        d2U = d2U + (4.0 * s * s - 2.0) / width**2 * g
    sigma = landscape.tweezer_width
    s = (x - u) / sigma
    e = np.exp(-s * s)
    tweezer_xx = (4.0 * s * s - 2.0) / sigma**2 * v * e
    return PotentialDerivs(U, dU, d2U, -tweezer_xx, -2.0 * s / sigma * e)


class TweezerLimits(NamedTuple):
    force: float
    acceleration: float
    argmax_offset: float
    t_lim: float | None
    t_bang_bang: float | None


def max_tweezer_force(v: float, width: float, mass: float = 1.0, distance: float | None = None) -> TweezerLimits:
    """Peak |dU_C/dx| of a Gaussian tweezer and two transfer-time scales.

    The peak sits at ``|x - u| = width/sqrt(2)`` with value
    ``sqrt(2) |v| / width * exp(-1/2)``.  ``t_lim = 2 sqrt((d/2)/a_M)`` is the
    customary estimate; ``t_bang_bang = 2 sqrt(d/a_M)`` is the exact duration
    of accelerating at ``a_M`` over half the distance and braking over the
    rest, a hard lower bound without static traps.  Both are None for
    ``v == 0`` or when no distance is given.
    """
    if not width > 0:
        raise ValueError("width must be positive")
    force = math.sqrt(2.0) * abs(v) / width * math.exp(-0.5)
    acc = force / mass
    t_lim = t_bb = None
    if distance is not None and acc > 0:
        t_lim = 2.0 * math.sqrt(0.5 * distance / acc)
        t_bb = 2.0 * math.sqrt(distance / acc)
    return TweezerLimits(force, acc, width / math.sqrt(2.0), t_lim, t_bb)


@dataclass(frozen=True)
class CostWeights:
    gamma_u: float = 1e-3
    gamma_v: float = 1e-3
    nu_u: float = 0.1
    nu_v: float = 0.1
    nu_x: float = 1e2
    nu_p: float = 1e2
    nu_tf: float = 0.0
    nu_target: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"weight {name} must be finite and >= 0")


@dataclass(frozen=True)
class NoiseParams:
    gamma: float
    bath_energy: float
    d_p: float
    d_x: float


def noise_coefficients(gamma: float, bath_energy: float, mass: float = 1.0, hbar: float = 1.0) -> NoiseParams:
    """Friction/diffusion coefficients on the equality branch of fluctuation-dissipation.

    ``bath_energy`` is k_B T_th.  D_p = gamma m k_B T_th and D_x follows from
    D_p D_x = (hbar gamma / 2)**2.  ``hbar`` must be given in the same units
    as the other arguments (``UnitSystem.epsilon`` for internal units).
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not bath_energy > 0:
        raise ValueError("bath temperature must be positive")
    if gamma == 0:
        return NoiseParams(0.0, bath_energy, 0.0, 0.0)
    d_p = gamma * mass * bath_energy
    d_x = (hbar * gamma) ** 2 / (4.0 * d_p)
    return NoiseParams(gamma, bath_energy, d_p, d_x)


NOISELESS = NoiseParams(0.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class ControlSignal:
    """Tweezer centre ``u`` and depth ``v`` sampled on ``times`` spanning [0, t_f]."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 0:
            v = np.full_like(times, float(v))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need at least two time samples")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if u.shape != times.shape or v.shape != times.shape:
            raise ValueError("u, v must match times")
        _check_finite(times, u, v)

    @property
    def t_f(self) -> float:
        return float(self.times[-1])

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    def at(self, t):
        """Linearly interpolated (u, v)."""
        return np.interp(t, self.times, self.u), np.interp(t, self.times, self.v)

    def with_values(self, u=None, v=None) -> "ControlSignal":
        return ControlSignal(self.times, self.u if u is None else u, self.v if v is None else v)

    def resample(self, t_f: float | None = None, n_intervals: int | None = None) -> "ControlSignal":
        """Stretch onto a uniform grid over [0, t_f] (shape in scaled time is kept)."""
        t_f = self.t_f if t_f is None else t_f
        if not t_f > 0:
            raise ValueError("t_f must be positive")
        n = self.n_intervals if n_intervals is None else n_intervals
        s_old = self.times / self.t_f
        s_new = np.linspace(0.0, 1.0, n + 1)
        return ControlSignal(s_new * t_f, np.interp(s_new, s_old, self.u), np.interp(s_new, s_old, self.v))

    @classmethod
    def uniform(cls, t_f: float, n_intervals: int, u, v) -> "ControlSignal":
        times = np.linspace(0.0, t_f, n_intervals + 1)
        u = u(times) if callable(u) else np.broadcast_to(np.asarray(u, float), times.shape).copy()
        v = v(times) if callable(v) else np.broadcast_to(np.asarray(v, float), times.shape).copy()
        return cls(times, u, v)

    @classmethod
    def smooth_ramp(cls, x_start: float, x_end: float, t_f: float, v: float, n_intervals: int = 2000) -> "ControlSignal":
        """Cubic smoothstep from x_start to x_end with zero end slopes."""
        def ramp(t):
            s = t / t_f
            return x_start + (x_end - x_start) * s * s * (3.0 - 2.0 * s)

        return cls.uniform(t_f, n_intervals, ramp, v)


# --- phase-space densities -------------------------------------------------

def _thermal_variance_factor(trap: TrapSpec, thermal_energy: float, mass: float, hbar: float | None) -> float:
    """a coth(a) with a = hbar w / (2 k_B T); 1 in the classical limit."""
    if hbar is None:
        return 1.0
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    a = hbar * math.sqrt(trap.curvature / mass) / (2.0 * thermal_energy)
    return a / math.tanh(a)


def thermal_widths(trap: TrapSpec, thermal_energy: float, mass: float = 1.0,
                   hbar: float | None = None) -> tuple[float, float]:
    """(sigma_x, sigma_p) of ``thermal_initial_field``."""
    if not thermal_energy > 0:
        raise ValueError("temperature must be positive")
    kappa = trap.curvature
    if not kappa > 0:
        raise ValueError("trap has no confining curvature at its minimum")
    fac = _thermal_variance_factor(trap, thermal_energy, mass, hbar)
    return math.sqrt(thermal_energy * fac / kappa), math.sqrt(mass * thermal_energy * fac)


def thermal_initial_field(trap: TrapSpec, thermal_energy: float, grid, mass: float = 1.0,
                          hbar: float | None = None):
    """Gaussian thermal state of the harmonic approximation of ``trap``.

    Position variance k_B T / (m w^2) with m w^2 the trap curvature, momentum
    variance m k_B T; normalised to unit mass on ``grid``.  With ``hbar`` both
    variances carry the factor a coth(a), a = hbar w / (2 k_B T), which makes
    the field the exact Wigner function of the harmonic thermal state (the
    ground state when k_B T << hbar w).
    """
    from .phase_grid import PhaseField

    sx, sp = thermal_widths(trap, thermal_energy, mass, hbar)
    X, P = grid.mesh
    values = np.exp(-0.5 * ((X - trap.center) / sx) ** 2 - 0.5 * (P / sp) ** 2)
    values /= values.sum() * grid.dx * grid.dp
    return PhaseField(grid, values, 0.0, "distribution" if hbar is None else "wigner")


def target_field(x_b: float, widths: tuple[float, float], grid):
    """Unnormalised Gaussian weight peaked (value 1) at (x_b, 0)."""
    from .phase_grid import PhaseField

    w_x, w_p = widths
    if not (w_x > 0 and w_p > 0):
        raise ValueError("target widths must be positive")
    X, P = grid.mesh
    return PhaseField(grid, np.exp(-(((X - x_b) / w_x) ** 2) - (P / w_p) ** 2), 0.0, "adjoint")


def escape_momentum(depth_energy: float, mass: float = 1.0) -> float:
    """sqrt(2 m U0): momentum needed to leave a well of depth U0."""
    return math.sqrt(2.0 * mass * abs(depth_energy))
