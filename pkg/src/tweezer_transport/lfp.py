"""Forward Liouville-Fokker-Planck evolution and its discrete adjoint."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import NOISELESS, ControlSignal, Landscape, NoiseParams
from .phase_grid import PhaseField, SplitStepper, write_phsf

log = logging.getLogger(__name__)

MASS_DRIFT_LIMIT = 1e-3


class DomainError(RuntimeError):
    """Probability left the computational window."""


@dataclass
class EvolutionRecord:
    """Snapshots every ``store_stride`` steps (always including both ends).

    ``times`` and ``fields`` are in chronological order for forward and
    adjoint runs alike; ``mass_trace`` has one entry per time node.
    """

    times: np.ndarray
    fields: list
    store_stride: int
    terminal: PhaseField
    mass_trace: np.ndarray
    step_times: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if len(self.times) != len(self.fields):
            raise ValueError("one field per checkpoint time required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("checkpoint times must increase")

    @property
    def checkpoints(self) -> list:
        return list(zip(self.times, self.fields))

    @property
    def initial(self) -> PhaseField:
        return self.fields[0]

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass_trace - self.mass_trace[0])))

    def export(self, directory, config: dict | None = None, prefix: str = "snapshot") -> Path:
        """Write one PHSF file per checkpoint plus ``index.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for i, fld in enumerate(self.fields):
            name = f"{prefix}_{i:05d}.phsf"
            write_phsf(out / name, fld)
            files.append(name)
        blob = json.dumps(config or {}, sort_keys=True, default=str).encode()
        index = {
            "times": [float(t) for t in self.times],
            "files": files,
            "mass_trace": [float(m) for m in self.mass_trace],
            "config_hash": hashlib.sha256(blob).hexdigest(),
        }
        path = out / "index.json"
        path.write_text(json.dumps(index, indent=2))
        return path


def step_nodes(control: ControlSignal, n_steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time nodes of a uniform split-step run and the controls sampled there."""
    if n_steps < 1:
        raise ValueError("need at least one step")
    times = np.linspace(0.0, control.t_f, n_steps + 1)
    if control.times.size == times.size and np.allclose(control.times, times, rtol=0, atol=1e-12 * control.t_f):
        return times, control.u, control.v
    u, v = control.at(times)
    return times, np.asarray(u, dtype=float), np.asarray(v, dtype=float)


def make_stepper(f0: PhaseField, control: ControlSignal, landscape: Landscape, noise: NoiseParams,
                 n_steps: int, mass: float, epsilon: float | None) -> SplitStepper:
    return SplitStepper(f0.grid, landscape, control.t_f / n_steps, mass, noise, epsilon)


def evolve_forward(stepper: SplitStepper, f0: PhaseField, times, u, v, store_stride: int = 1,
                   kind: str | None = None, check_mass: bool = True) -> EvolutionRecord:
    if store_stride < 1:
        raise ValueError("store_stride must be positive")
    kind = kind or f0.kind
    n = len(times) - 1
    values = f0.values
    masses = np.empty(n + 1)
    masses[0] = values.sum() * f0.grid.cell
    keep_t, keep_f = [times[0]], [f0.with_values(values, time=float(times[0]), kind=kind)]
    for k in range(n):
        values = stepper.step(values, (u[k], v[k]), (u[k + 1], v[k + 1]))
        masses[k + 1] = values.sum() * f0.grid.cell
        if (k + 1) % store_stride == 0 or k + 1 == n:
            keep_t.append(times[k + 1])
            keep_f.append(f0.with_values(values, time=float(times[k + 1]), kind=kind))
    drift = float(np.max(np.abs(masses - masses[0])))
    if check_mass and drift > MASS_DRIFT_LIMIT * max(abs(masses[0]), 1e-300):
        raise DomainError(f"mass drift {drift:.3g} exceeds {MASS_DRIFT_LIMIT:g}; enlarge the phase-space window")
    return EvolutionRecord(np.asarray(keep_t), keep_f, store_stride, keep_f[-1], masses, np.asarray(times))


def evolve_adjoint(stepper: SplitStepper, h_T: PhaseField, times, u, v, store_stride: int = 1) -> EvolutionRecord:
    n = len(times) - 1
    values = h_T.values
    masses = np.empty(n + 1)
    masses[n] = values.sum() * h_T.grid.cell
    keep = [(times[n], h_T.with_values(values, time=float(times[n]), kind="adjoint"))]
    for k in range(n - 1, -1, -1):
        values = stepper.adjoint_step(values, (u[k], v[k]), (u[k + 1], v[k + 1]))
        masses[k] = values.sum() * h_T.grid.cell
        if k % store_stride == 0:
            keep.append((times[k], h_T.with_values(values, time=float(times[k]), kind="adjoint")))
    keep.reverse()
    ts = np.array([t for t, _ in keep])
    return EvolutionRecord(ts, [f for _, f in keep], store_stride, keep[-1][1], masses, np.asarray(times))


def lfp_forward(f0: PhaseField, control: ControlSignal, landscape: Landscape, noise: NoiseParams = NOISELESS,
                n_steps: int = 2000, mass: float = 1.0, store_stride: int = 1,
                check_mass: bool = True) -> EvolutionRecord:
    """Strang-split evolution of a classical distribution under the tweezer control.

    Raises :class:`DomainError` when the total mass drifts by more than
    ``MASS_DRIFT_LIMIT`` unless ``check_mass`` is off.
    """
    times, u, v = step_nodes(control, n_steps)
    stepper = make_stepper(f0, control, landscape, noise, n_steps, mass, None)
    return evolve_forward(stepper, f0, times, u, v, store_stride, check_mass=check_mass)


def lfp_adjoint(h_T: PhaseField, control: ControlSignal, landscape: Landscape, noise: NoiseParams = NOISELESS,
                n_steps: int = 2000, mass: float = 1.0, store_stride: int = 1) -> EvolutionRecord:
    """Backward evolution with the exact transpose of every forward substep."""
    times, u, v = step_nodes(control, n_steps)
    stepper = make_stepper(h_T, control, landscape, noise, n_steps, mass, None)
    return evolve_adjoint(stepper, h_T, times, u, v, store_stride)
