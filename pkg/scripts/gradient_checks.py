"""Adjoint gradients of both tiers against central finite differences.

    python scripts/gradient_checks.py --config configs/sr88.toml
"""
import argparse

from tweezer_transport.config import load_config
from tweezer_transport.experiments import Setup, deterministic_gradient_check, ensemble_gradient_check


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True)
    parser.add_argument("--nodes", type=int, default=20)
    args = parser.parse_args()
    setup = Setup(load_config(args.config))
    for name, check in (("deterministic dJ/du", deterministic_gradient_check(setup, count=args.nodes)),
                        ("ensemble dPhi'/du (64x64)", ensemble_gradient_check(setup, count=args.nodes))):
        print(f"{name}: relative error {check.relative_error:.3e}, worst node {check.worst_node_error:.3e}")


if __name__ == "__main__":
    main()
