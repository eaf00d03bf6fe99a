"""Command line entry point: ``tweezer-transport <subcommand> --config FILE --out DIR``.

Every subcommand writes CSV tables, PHSF snapshots where relevant and a
``manifest.json`` listing each artifact with its SHA-256.  Failures print a
JSON error object on stderr (and into ``error.json`` when the output
directory is known).  Exit codes: 0 success, 1 invalid input or runtime
failure, 2 solver did not converge (best-iterate artifacts are kept).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .model import ControlSignal

log = logging.getLogger("tweezer_transport")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class RunOutput:
    """Collects artifacts written into one output directory."""

    def __init__(self, directory: Path, subcommand: str, config: ExperimentConfig | None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.subcommand = subcommand
        self.config = config
        self.files: list[Path] = []
        self.summary: dict = {}
        self.converged = True

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.dir / name
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.files.append(path)
        return path

    def json(self, name: str, payload) -> Path:
        path = self.dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.files.append(path)
        return path

    def add(self, path: Path) -> None:
        self.files.append(Path(path))

    def manifest(self, wall_time: float) -> Path:
        artifacts = {str(p.relative_to(self.dir)): _sha256(p) for p in sorted(set(self.files))}
        payload = {
            "subcommand": self.subcommand,
            "config": self.config.to_dict() if self.config else None,
            "config_hash": config_hash(self.config) if self.config else None,
            "artifacts": artifacts,
            "summary": self.summary,
            "converged": self.converged,
            "wall_time_s": wall_time,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()


# --- control I/O -------------------------------------------------------------------

def control_rows(setup: ex.Setup, control: ControlSignal):
    kb = setup.kb_mk
    return [(t, u, v / kb) for t, u, v in zip(control.times, control.u, control.v)]


def read_control(setup: ex.Setup, path) -> ControlSignal:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ControlSignal(data[:, 0], data[:, 1], data[:, 2] * setup.kb_mk)


def write_control(out: RunOutput, setup: ex.Setup, control: ControlSignal, name: str = "control.csv") -> None:
    out.csv(name, ["t_us", "u_um", "v_mK"], control_rows(setup, control))


def write_temperature(out: RunOutput, trace: np.ndarray, name: str = "temperature_trace.csv") -> None:
    out.csv(name, ["t_us", "T_mK"], [(float(t), float(T)) for t, T in trace])


def export_snapshots(out: RunOutput, record, config: ExperimentConfig, subdir: str, kind_prefix: str) -> None:
    index = record.export(out.dir / subdir, config.to_dict(), kind_prefix)
    for path in sorted((out.dir / subdir).iterdir()):
        out.add(path)
    log.info("wrote %d snapshots to %s", len(record.fields), index.parent)


# --- parallel sweeps -----------------------------------------------------------------

def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _bath_point(args):
    config, control, t_th = args
    return ex.run_bath_sweep(ex.Setup(replace(config, sweeps=replace(config.sweeps, bath_T_mK=(t_th,)))), control)[0]


def _tf_point(args):
    config, t_f = args
    return ex.run_tf_temperature_sweep(ex.Setup(replace(config, sweeps=replace(config.sweeps, tf_us=(t_f,)))))[0]


def _perturb_point(args):
    config, control, kind, amp = args
    s = config.sweeps
    only = replace(s, depth_offsets_mK=(amp,) if kind == "depth_offset" else (),
                   ramp_amplitudes_um=(amp,) if kind == "linear_ramp" else (),
                   sine_amplitudes_um=(amp,) if kind == "sinusoid" else ())
    return ex.run_perturbations(ex.Setup(replace(config, sweeps=only)), control)[0]


# --- subcommands ----------------------------------------------------------------------

def _ensemble_control(args, setup: ex.Setup, out: RunOutput) -> ControlSignal:
    """Control from ``--control`` or a fresh ensemble optimisation (recorded in ``out``)."""
    if args.control:
        return read_control(setup, args.control)
    run = ex.run_ensemble(setup, snapshot_stride=args.snapshot_stride)
    write_control(out, setup, run.control)
    out.summary.update(optimised_fidelity=run.fidelity, seed_fidelity=run.seed_fidelity,
                       iterations=run.solution.iterations)
    out.converged = run.solution.converged
    return run.control


def cmd_trajectory(args, setup: ex.Setup, out: RunOutput) -> None:
    report = ex.run_trajectory(setup, robustness=not args.skip_robustness)
    kb = setup.kb_mk
    out.csv("nu_tf_sweep.csv", ["nu_tf", "t_f_us", "J_total", "J_terminal", "J_control", "J_time"],
            [(nu, s.control.t_f, s.cost.total, s.cost.terminal, s.cost.control, s.cost.time) for nu, s in report.sweep])
    out.csv("seeds.csv", ["seed_factor", "t_f_us", "J_total", "converged"],
            [(f, s.control.t_f, s.cost.total, int(s.converged)) for f, s in report.seeds])
    if report.robustness:
        out.csv("robustness.csv", ["nu_u", "gamma_u", "max_dev_over_d", "converged"],
                [(a, b, c, int(d)) for a, b, c, d in report.robustness])
    candidates = [s for _, s in report.seeds + report.sweep if s.converged]
    best = min(candidates, key=lambda s: s.control.t_f) if candidates else \
        min((s for _, s in report.seeds + report.sweep), key=lambda s: s.cost.total)
    write_control(out, setup, best.control)
    tr = best.trajectory
    out.csv("trajectory.csv", ["t_us", "x_um", "p"], zip(tr.times, tr.x, tr.p))
    out.summary.update(t_lim_self_us=report.t_lim_self, t_bang_bang_us=report.t_bang_bang,
                       smallest_converged_tf_us=report.smallest_converged_tf,
                       ratio_to_t_lim=report.smallest_converged_tf / report.t_lim_self,
                       v_fixed_mK=setup.v_fixed / kb)
    out.converged = bool(candidates)


def cmd_ensemble(args, setup: ex.Setup, out: RunOutput) -> None:
    initial = read_control(setup, args.control) if args.control else None
    run = ex.run_ensemble(setup, snapshot_stride=args.snapshot_stride, initial=initial)
    write_control(out, setup, run.control)
    write_control(out, setup, run.seed, "seed_control.csv")
    write_temperature(out, run.temperature)
    out.csv("cost_history.csv", ["iteration", "J"], enumerate(run.solution.cost_history))
    export_snapshots(out, run.record, setup.config, "snapshots", "ensemble")
    out.summary.update(fidelity=run.fidelity, seed_fidelity=run.seed_fidelity,
                       final_temperature_mK=float(run.temperature[-1, 1]), iterations=run.solution.iterations,
                       message=run.solution.message, wall_time_s=run.solution.wall_time)
    out.converged = run.solution.converged
    if args.plots:
        _plot_fields(out, run.record, "ensemble")


def cmd_bath_sweep(args, setup: ex.Setup, out: RunOutput) -> None:
    control = _ensemble_control(args, setup, out)
    temps = setup.config.sweeps.bath_T_mK
    rows = _pool_map(_bath_point, [(setup.config, control, t) for t in temps], args.jobs)
    out.csv("bath_sweep.csv", ["T_th_mK", "fidelity"], rows)
    out.summary["bath_sweep"] = rows


def cmd_temp_trace(args, setup: ex.Setup, out: RunOutput) -> None:
    run = ex.run_ensemble(setup, snapshot_stride=args.snapshot_stride)
    write_control(out, setup, run.control)
    write_temperature(out, run.temperature)
    rows = _pool_map(_tf_point, [(setup.config, t) for t in setup.config.sweeps.tf_us], args.jobs)
    out.csv("tf_temperature_sweep.csv", ["t_f_us", "T_mK", "fidelity"], rows)
    out.summary.update(final_temperature_mK=float(run.temperature[-1, 1]), fidelity=run.fidelity, tf_sweep=rows)
    out.converged = run.solution.converged


def cmd_perturb(args, setup: ex.Setup, out: RunOutput) -> None:
    control = _ensemble_control(args, setup, out)
    s = setup.config.sweeps
    items = [("depth_offset", a) for a in s.depth_offsets_mK] + [("linear_ramp", a) for a in s.ramp_amplitudes_um]
    items += [("sinusoid", a) for a in s.sine_amplitudes_um]
    rows = _pool_map(_perturb_point, [(setup.config, control, k, a) for k, a in items], args.jobs)
    out.csv("perturb.csv", ["kind", "amplitude", "fidelity"], rows)
    depth = [(a, f) for k, a, f in rows if k == "depth_offset"]
    if depth:
        out.summary["depth_offset_argmax_mK"] = max(depth, key=lambda r: r[1])[0]


def cmd_wigner(args, setup: ex.Setup, out: RunOutput) -> None:
    if setup.config.tier != "quantum":
        raise ConfigError(["tier: the wigner subcommand needs tier = \"quantum\""])
    run = ex.run_ensemble(setup, snapshot_stride=args.snapshot_stride)
    write_control(out, setup, run.control)
    write_temperature(out, run.temperature)
    export_snapshots(out, run.record, setup.config, "snapshots", "wigner")
    neg = [ex.negativity(f.values) for f in run.record.fields]
    out.csv("negativity.csv", ["t_us", "neg_min_over_max"], zip(run.record.times, neg))
    out.summary.update(fidelity=run.fidelity, seed_fidelity=run.seed_fidelity, max_negativity=max(neg),
                       epsilon=setup.config.epsilon, iterations=run.solution.iterations)
    out.converged = run.solution.converged
    if args.plots:
        _plot_fields(out, run.record, "wigner")


def cmd_limits(args, setup: ex.Setup, out: RunOutput) -> None:
    lim = ex.compute_limits(setup)
    payload = {
        "t_lim_self_us": lim.t_lim_self,
        "t_bang_bang_free_us": lim.t_bang_bang_free,
        "t_bang_bang_with_static_traps_us": lim.t_bang_bang_static,
        "max_tweezer_force_internal": lim.force,
        "p_td_internal": lim.p_td,
        "p_td_kg_m_per_s": lim.p_td_si,
        "epsilon_estimate": lim.epsilon.epsilon,
        "epsilon_energy_internal": lim.epsilon.energy,
        "epsilon_time_scale_us": lim.epsilon.time_scale,
    }
    out.json("limits.json", payload)
    out.summary.update(payload)
    print(f"p_td = {lim.p_td_si:.3e} kg m/s")
    print(f"t_lim_self = {lim.t_lim_self:.4f} us, bang-bang bound = {lim.t_bang_bang_static:.4f} us")
    print(f"epsilon estimate = {lim.epsilon.epsilon:.4g}")


def cmd_validate(args, setup: ex.Setup | None, out: RunOutput) -> None:
    from .invariants import run_all

    results = run_all()
    out.csv("invariants.csv", ["name", "value", "tolerance", "passed", "seconds"],
            [(r.name, r.value, r.tolerance, int(r.passed), r.seconds) for r in results])
    for r in results:
        print(r.line())
    out.summary["all_passed"] = all(r.passed for r in results)
    if not out.summary["all_passed"]:
        raise ValidationFailed([r.name for r in results if not r.passed])


class ValidationFailed(RuntimeError):
    def __init__(self, names):
        super().__init__("invariant checks failed: " + ", ".join(names))
        self.names = names


def _plot_fields(out: RunOutput, record, prefix: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return
    g = record.fields[0].grid
    for i, f in enumerate(record.fields):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.imshow(f.values.T, origin="lower", aspect="auto", extent=(g.x_min, g.x_max, g.p_min, g.p_max))
        ax.set_xlabel("x [um]")
        ax.set_ylabel("p [internal]")
        ax.set_title(f"t = {f.time:.3f} us")
        path = out.dir / "plots" / f"{prefix}_{i:04d}.png"
        path.parent.mkdir(exist_ok=True)
        fig.savefig(path, dpi=80)
        plt.close(fig)
        out.add(path)


COMMANDS = {
    "trajectory": cmd_trajectory,
    "ensemble": cmd_ensemble,
    "bath-sweep": cmd_bath_sweep,
    "temp-trace": cmd_temp_trace,
    "perturb": cmd_perturb,
    "wigner": cmd_wigner,
    "limits": cmd_limits,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tweezer-transport", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="TOML or JSON experiment file (defaults apply when omitted)")
    parser.add_argument("--out", help="output directory (default: <output_dir>/<subcommand>)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    parser.add_argument("--plots", action="store_true", help="also write PNG heatmaps")
    parser.add_argument("--snapshot-stride", type=int, default=None, help="time steps between stored snapshots")
    parser.add_argument("--control", help="reuse a control.csv instead of optimising")
    parser.add_argument("--skip-robustness", action="store_true", help="trajectory: omit the weight sweep")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["problems"] = exc.problems
    return payload


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    out = None
    try:
        if args.jobs < 1:
            raise ConfigError(["--jobs: must be at least 1"])
        if args.snapshot_stride is not None and args.snapshot_stride < 1:
            raise ConfigError(["--snapshot-stride: must be at least 1"])
        config = load_config(args.config) if args.config else ExperimentConfig()
        out_dir = Path(args.out) if args.out else Path(config.output_dir) / args.subcommand
        out = RunOutput(out_dir, args.subcommand, config)
        start = time.perf_counter()
        COMMANDS[args.subcommand](args, ex.Setup(config), out)
        out.manifest(time.perf_counter() - start)
    except Exception as exc:  # reported as JSON; the traceback goes to the log
        log.debug("failure", exc_info=True)
        payload = _error_payload(exc)
        print(json.dumps(payload), file=sys.stderr)
        if out is not None:
            (out.dir / "error.json").write_text(json.dumps(payload, indent=2) + "\n")
        return EXIT_ERROR
    if not out.converged:
        print(json.dumps({"error": "NotConverged", "message": "solver stopped before convergence; "
                                                              "best-iterate artifacts written"}), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
