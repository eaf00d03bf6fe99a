"""Wigner evolution at small epsilon against Liouville evolution under one control.

    python scripts/classical_limit.py --config configs/sr88.toml [--control runs/sr88/ensemble/control.csv]

Without ``--control`` the reference seed control of the configuration is used.
"""
import argparse

from tweezer_transport.cli import read_control
from tweezer_transport.config import load_config
from tweezer_transport.experiments import Setup, classical_limit, seed_control


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True)
    parser.add_argument("--control")
    parser.add_argument("--epsilon", type=float, default=1e-3)
    args = parser.parse_args()
    setup = Setup(load_config(args.config))
    control = read_control(setup, args.control) if args.control else seed_control(setup)
    res = classical_limit(setup, control, args.epsilon)
    print(f"epsilon={args.epsilon:g}: L1(Wigner - Liouville) = {res.l1:.3e}, "
          f"fidelity {res.fidelity_wigner:.5f} vs {res.fidelity_classical:.5f}")


if __name__ == "__main__":
    main()
