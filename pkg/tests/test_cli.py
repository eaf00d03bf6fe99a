import csv
import hashlib
import json

import numpy as np
import pytest

from tweezer_transport.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main, read_control, write_control
from tweezer_transport.config import config_from_dict
from tweezer_transport.experiments import Setup
from tweezer_transport.model import ControlSignal

TINY = {
    "name": "tiny",
    "traps": {"x_B": 4.0},
    "tweezer": {"v_init_mK": -5.0},
    "grids": {"n_x": 48, "n_p": 48, "x_window_um": [-3.0, 7.0], "p_window_ptd": [-1.5, 3.0], "n_steps": 40},
    "ensemble": {"t_f_us": 8.0, "max_iter": 2, "seed_sharpness": 0.3},
    "sweeps": {"bath_T_mK": [0.1, 1.0], "depth_offsets_mK": [-1.0, 0.0], "ramp_amplitudes_um": [0.2],
               "sine_amplitudes_um": [0.2], "tf_us": [8.0], "tf_max_iter": 1},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def _manifest(out):
    data = json.loads((out / "manifest.json").read_text())
    for name, digest in data["artifacts"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    return data


def test_limits_writes_manifest(tmp_path, capsys):
    assert main(["limits", "--out", str(tmp_path)]) == EXIT_OK
    data = _manifest(tmp_path)
    assert data["summary"]["p_td_kg_m_per_s"] == pytest.approx(6.349e-26, rel=1e-3)
    assert "p_td" in capsys.readouterr().out


def test_validate_passes(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "invariants.csv").open()))
    assert len(rows) == 5 and all(r["passed"] == "1" for r in rows)


def test_invalid_config_reports_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"traps": {"depth_mK": -1}}))
    assert main(["limits", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and any("depth_mK" in p for p in err["problems"])


def test_wigner_needs_quantum_tier(tmp_path, tiny_config):
    out = tmp_path / "w"
    assert main(["wigner", "--config", str(tiny_config), "--out", str(out)]) == EXIT_ERROR
    assert json.loads((out / "error.json").read_text())["error"] == "ConfigError"


def test_bad_jobs_rejected(tmp_path):
    assert main(["limits", "--jobs", "0", "--out", str(tmp_path)]) == EXIT_ERROR


def test_control_csv_round_trip(tmp_path):
    setup = Setup(config_from_dict(TINY))
    c = ControlSignal(np.linspace(0, 2, 11), np.linspace(0, 4, 11), np.full(11, -3 * setup.kb_mk))

    class Out:
        def csv(self, name, header, rows):
            path = tmp_path / name
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows([[repr(float(x)) for x in r] for r in rows])

    write_control(Out(), setup, c)
    back = read_control(setup, tmp_path / "control.csv")
    np.testing.assert_array_equal(back.times, c.times)
    np.testing.assert_allclose(back.v, c.v, rtol=1e-15)


def test_ensemble_subcommand_artifacts(tmp_path, tiny_config):
    out = tmp_path / "e"
    code = main(["ensemble", "--config", str(tiny_config), "--out", str(out), "--snapshot-stride", "20"])
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    data = _manifest(out)
    for name in ("control.csv", "seed_control.csv", "temperature_trace.csv", "cost_history.csv",
                 "snapshots/index.json"):
        assert name in data["artifacts"]
    assert 0.0 <= data["summary"]["fidelity"] <= 1.0
    assert code == EXIT_OK or data["converged"] is False


def test_sweeps_reuse_a_control(tmp_path, tiny_config):
    ens = tmp_path / "e"
    main(["ensemble", "--config", str(tiny_config), "--out", str(ens)])
    for sub, table, n_rows in (("bath-sweep", "bath_sweep.csv", 2), ("perturb", "perturb.csv", 4)):
        out = tmp_path / sub
        code = main([sub, "--config", str(tiny_config), "--out", str(out), "--control", str(ens / "control.csv"),
                     "--jobs", "2"])
        assert code == EXIT_OK
        rows = list(csv.reader((out / table).open()))
        assert len(rows) == n_rows + 1
