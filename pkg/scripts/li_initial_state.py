"""Seed-control comparison of the two initial fields for the Wigner tier.

The classical Gaussian at T_init has sigma_x sigma_p below epsilon/2 when
k_B T is small against epsilon * omega, so it is not a Wigner function of any
state; the quantum-thermal Gaussian (variances times a coth a) is.  The script
prints uncertainty product, box fraction, negativity and mass drift for both.

    python scripts/li_initial_state.py --config configs/li6.toml
"""
import argparse
import math
from dataclasses import replace

from tweezer_transport.config import load_config
from tweezer_transport.ensemble_oc import fidelity, run_forward
from tweezer_transport.experiments import Setup, negativity, seed_control
from tweezer_transport.model import thermal_widths


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True)
    args = parser.parse_args()
    base = load_config(args.config)
    for mode in ("classical", "quantum"):
        setup = Setup(replace(base, ensemble=replace(base.ensemble, initial_state=mode)))
        eps = setup.epsilon
        kt = setup.mk(base.noise.T_init_mK)
        sx, sp = thermal_widths(setup.landscape.trap_a, kt, 1.0, eps if mode == "quantum" else None)
        problem = setup.ensemble_problem()
        record = run_forward(problem, seed_control(setup), max(1, problem.n_steps // 20))
        terminal = record.terminal
        print(f"{mode:9s} sigma_x sigma_p = {sx * sp:.4f} (epsilon/2 = {eps / 2:.4f}), "
              f"box fraction {fidelity(terminal, setup.box, setup.landscape.trap_b.center):.4f}, "
              f"negativity {negativity(terminal.values):.4f}, mass drift {record.mass_drift:.2e}")
    w = math.sqrt(Setup(base).landscape.trap_a.curvature)
    print(f"hbar_eff * omega = {base.epsilon * w / Setup(base).kb_mk:.3f} mK")


if __name__ == "__main__":
    main()
