"""
Command-line front end.

    python3 -m experiments.cli classify --preset rep-bou-tpp
    python3 -m experiments.cli solve --preset manufactured-linear -N 64 --eps 1 -k 2
    python3 -m experiments.cli convergence --config experiments/configs/rep_bou_tpp.ini
    python3 -m experiments.cli mesh --preset two-exp-layer-tpp -N 16 --eps 1e-6 --out mesh.txt
"""

import argparse
import logging
import sys

from experiments.config import ExperimentConfig, load_experiment_config
from experiments.harness import cmd_classify, cmd_convergence, cmd_mesh_dump, cmd_solve
from layer_fem.errors import LayerFemError
from layer_fem.mesh import GENERATORS
from utils.config import load_settings
from utils.helpers import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = ('classify', 'solve', 'convergence', 'mesh')


def build_parser():
    parser = argparse.ArgumentParser(prog='experiments.cli', description='Layer-adapted FEM experiments')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='INI experiment configuration')
    parser.add_argument('--preset', help='Built-in problem name')
    parser.add_argument('--out', help='Output file path')
    parser.add_argument('-N', type=int, nargs='+', dest='Ns', help='Numbers of mesh cells')
    parser.add_argument('--eps', type=float, nargs='+', dest='eps_values', help='Perturbation parameters')
    parser.add_argument('-k', type=int, help='Polynomial order')
    parser.add_argument('--rho', type=float, help='Transition point multiplier (default k+1)')
    parser.add_argument('--mu', type=float, help='Fraction of the admissible interior grading exponent')
    parser.add_argument('--generator', choices=GENERATORS, help='Mesh generating function')
    parser.add_argument('--mesh', choices=('preset', 'layer-adapted', 'uniform'), help='Mesh construction')
    parser.add_argument('--no-timing', action='store_true', help='Leave the seconds column empty')
    parser.add_argument('--env-file', help='Path of a .env file with process settings')
    return parser


def resolve_config(args):
    """Reads the configuration file, if any, and applies the command-line overrides."""
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    config = config.override(
        preset=args.preset,
        output=args.out,
        Ns=tuple(args.Ns) if args.Ns else None,
        eps_values=tuple(args.eps_values) if args.eps_values else None,
        k=args.k,
        rho=args.rho,
        mu=args.mu,
        generator=args.generator,
        mesh=args.mesh,
        timing=False if args.no_timing else None,
    )
    return config.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.env_file)
        setup_logging(settings.log_level)
        config = resolve_config(args)

        if args.command == 'classify':
            print(cmd_classify(config, settings))
        elif args.command == 'solve':
            outcome = cmd_solve(config, settings)
            if outcome.report is not None:
                print(', '.join(f"{name}={value:.6e}" for name, value in outcome.report.as_dict().items()))
            print(outcome.path)
        elif args.command == 'convergence':
            _, path = cmd_convergence(config, settings)
            print(path)
        else:
            _, path = cmd_mesh_dump(config, settings)
            print(path)
    except LayerFemError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
