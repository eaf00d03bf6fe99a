"""Experiment configuration: nested dataclasses loaded from TOML or JSON.

Values are in laboratory units (um, us, mK, amu); conversion to internal
units happens in :mod:`tweezer_transport.experiments`.  Unknown keys are
rejected with their full dotted path.
"""
from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class SpeciesConfig:
    name: str = "Sr88"
    mass_amu: float | None = None


@dataclass(frozen=True)
class TrapsConfig:
    x_A: float = 0.0
    x_B: float = 10.0
    depth_mK: float = 1.0
    sigma_um: float = 1.5
    attractive: bool = True


@dataclass(frozen=True)
class TweezerConfig:
    sigma_um: float | None = None
    v_fixed_mK: float = -1.5
    v_init_mK: float = -16.0
    v_bounds_mK: tuple[float, float] = (-20.0, 0.0)


@dataclass(frozen=True)
class WeightsConfig:
    gamma_u: float = 1e-3
    gamma_v: float = 1e-3
    nu_u: float = 0.1
    nu_v: float = 0.1
    nu_x: float = 1e2
    nu_p: float = 1e2
    nu_tf: float = 0.0
    nu_target: float = 100.0


@dataclass(frozen=True)
class NoiseConfig:
    gamma_per_us: float = 0.01
    T_th_mK: float = 0.1
    T_init_mK: float = 0.1


@dataclass(frozen=True)
class GridConfig:
    n_x: int = 256
    n_p: int = 256
    x_window_um: tuple[float, float] = (-3.0, 13.0)
    p_window_ptd: tuple[float, float] = (-4.5, 9.0)
    n_steps: int = 200
    pad_fraction: float = 0.25


@dataclass(frozen=True)
class DeterministicConfig:
    n_intervals: int = 800
    max_iter: int = 1500
    seeds: tuple[float, ...] = (1.0, 1.5, 2.0)
    nu_tf_sweep: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    tf_start_us: float = 30.0
    reference_tf_us: float = 30.0
    robustness_nu_u: tuple[float, ...] = (0.01, 0.1, 1.0)
    robustness_gamma_u: tuple[float, ...] = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class EnsembleConfig:
    t_f_us: float = 7.36
    max_iter: int = 60
    tol: float = 1e-6
    initial_state: str = "auto"
    seed: str = "reference"
    seed_sharpness: float = 1.5
    seed_nu_x: float = 1e3
    box_x_um: float = 1.0
    box_depth_mK: float = 1.0
    target_wx_um: float | None = None
    target_wp_ptd: float = 0.5


@dataclass(frozen=True)
class SweepConfig:
    bath_T_mK: tuple[float, ...] = (0.1, 1.0, 10.0, 20.0)
    tf_us: tuple[float, ...] = (9.0, 12.0, 20.0, 35.0, 50.0)
    tf_max_iter: int = 25
    depth_offsets_mK: tuple[float, ...] = (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0)
    ramp_amplitudes_um: tuple[float, ...] = (-0.8, -0.4, -0.2, 0.0, 0.2, 0.4, 0.8)
    sine_amplitudes_um: tuple[float, ...] = (0.0, 0.2, 0.4, 0.8)
    sine_frequency_per_us: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    tier: str = "classical"
    epsilon: float | None = None
    output_dir: str = "runs"
    species: SpeciesConfig = field(default_factory=SpeciesConfig)
    traps: TrapsConfig = field(default_factory=TrapsConfig)
    tweezer: TweezerConfig = field(default_factory=TweezerConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    deterministic: DeterministicConfig = field(default_factory=DeterministicConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    sweeps: SweepConfig = field(default_factory=SweepConfig)

    TIERS = ("deterministic", "classical", "quantum")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(tp, value, path: str, problems: list[str]):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            problems.append(f"{path}: expected a table")
            return None
        return _build(tp, value, path, problems)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path, problems)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            problems.append(f"{path}: expected a list")
            return None
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]", problems) for i, v in enumerate(value))
        if len(value) != len(args):
            problems.append(f"{path}: expected {len(args)} entries")
            return None
        return tuple(_convert(a, v, f"{path}[{i}]", problems) for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number")
            return value
        if not math.isfinite(value):
            problems.append(f"{path}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            problems.append(f"{path}: expected a string")
        return value
    return value


def _build(cls, data: dict, prefix: str, problems: list[str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            problems.append(f"{prefix + '.' if prefix else ''}{key}: unknown key")
    kwargs = {}
    for key in names & set(data):
        kwargs[key] = _convert(hints[key], data[key], f"{prefix + '.' if prefix else ''}{key}", problems)
    if problems:
        return None
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig) -> list[str]:
    problems = []
    if cfg.tier not in ExperimentConfig.TIERS:
        problems.append(f"tier: must be one of {', '.join(ExperimentConfig.TIERS)}")
    if cfg.tier == "quantum" and not (cfg.epsilon and cfg.epsilon > 0):
        problems.append("epsilon: quantum tier needs a positive epsilon")
    if cfg.epsilon is not None and not cfg.epsilon > 0:
        problems.append("epsilon: must be positive")
    positive = {
        "traps.depth_mK": cfg.traps.depth_mK, "traps.sigma_um": cfg.traps.sigma_um,
        "noise.T_init_mK": cfg.noise.T_init_mK, "ensemble.t_f_us": cfg.ensemble.t_f_us,
        "ensemble.box_x_um": cfg.ensemble.box_x_um, "ensemble.box_depth_mK": cfg.ensemble.box_depth_mK,
        "ensemble.target_wp_ptd": cfg.ensemble.target_wp_ptd, "grids.n_steps": cfg.grids.n_steps,
        "deterministic.n_intervals": cfg.deterministic.n_intervals,
    }
    for key, value in positive.items():
        if not value > 0:
            problems.append(f"{key}: must be positive")
    if cfg.ensemble.initial_state not in ("auto", "classical", "quantum"):
        problems.append("ensemble.initial_state: must be \"auto\", \"classical\" or \"quantum\"")
    if cfg.ensemble.seed not in ("reference", "deterministic"):
        problems.append("ensemble.seed: must be \"reference\" or \"deterministic\"")
    if not cfg.ensemble.seed_sharpness > 0:
        problems.append("ensemble.seed_sharpness: must be positive")
    if cfg.tweezer.sigma_um is not None and not cfg.tweezer.sigma_um > 0:
        problems.append("tweezer.sigma_um: must be positive")
    if cfg.noise.gamma_per_us < 0 or cfg.noise.T_th_mK < 0:
        problems.append("noise: gamma_per_us and T_th_mK must be non-negative")
    if cfg.grids.n_x < 8 or cfg.grids.n_p < 8:
        problems.append("grids: n_x and n_p must be at least 8")
    lo, hi = cfg.grids.x_window_um
    if not lo < hi:
        problems.append("grids.x_window_um: lower bound must be below upper bound")
    lo, hi = cfg.grids.p_window_ptd
    if not lo < hi:
        problems.append("grids.p_window_ptd: lower bound must be below upper bound")
    lo, hi = cfg.tweezer.v_bounds_mK
    if not lo < hi:
        problems.append("tweezer.v_bounds_mK: lower bound must be below upper bound")
    if cfg.traps.x_A == cfg.traps.x_B:
        problems.append("traps: x_A and x_B must differ")
    w = cfg.weights
    for key in ("gamma_u", "gamma_v", "nu_u", "nu_v", "nu_x", "nu_p", "nu_tf", "nu_target"):
        if getattr(w, key) < 0:
            problems.append(f"weights.{key}: must be non-negative")
    if w.gamma_u <= 0 or w.gamma_v <= 0:
        problems.append("weights: gamma_u and gamma_v must be positive (Neumann problems are singular otherwise)")
    return problems


def config_from_dict(data: dict) -> ExperimentConfig:
    problems: list[str] = []
    cfg = _build(ExperimentConfig, data, "", problems)
    if problems:
        raise ConfigError(problems)
    problems = _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read a TOML (``.toml``) or JSON (anything else) experiment file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = tomli.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError([f"{path.name}: {exc}"]) from exc
    return config_from_dict(data)
