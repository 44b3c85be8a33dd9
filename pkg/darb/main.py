"""darb command-line entry point.

    darb fig2|fig3|fig4|optimize|sweep [--config file.json] [--seed N] [--trials N] [--out path] ...
"""
import argparse
import logging
import sys

from darb import __version__, config
from darb.exceptions import DarbError, InfeasibleSubproblemError
from darb.integrations.config_store import build_spec, load_config_file, merge_values
from darb.orchestrator import RUNNERS, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NOT_CONVERGED = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Experiment-specific grid defaults, below the config file in precedence
EXPERIMENT_DEFAULTS = {
    "fig4": {"l_list": [config.FIG4_L_BEAMS], "channel_gain": config.FIG4_CHANNEL_GAIN},
    "sweep": {"k_list": list(config.SWEEP_K_LIST)},
}


def _int_list(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darb",
        description="Dumb-RIS random beamforming: Monte Carlo figures, closed forms and EE optimization.",
    )
    parser.add_argument("experiment", choices=sorted(RUNNERS))
    parser.add_argument("--version", action="version", version=f"darb {__version__}")
    parser.add_argument("--config", help="JSON file of overrides (power, system and experiment keys)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    parser.add_argument("--out", help=f"CSV output path (default {config.OUTPUT_DIR}/<experiment>.csv)")
    parser.add_argument("--trace-out", help="also write the per-trial Monte Carlo trace here")
    parser.add_argument("--layout-in", help="simulate the users listed in this layout CSV")
    parser.add_argument("--layout-out", help="also write the simulated user layout here")
    parser.add_argument("--channel-gain", choices=["path-loss", "unit"],
                        help="placed users with path loss, or unit-gain users at --snr-eff")
    parser.add_argument("--snr-eff", type=float, help="beta * P_T / sigma2 of unit-gain users (linear)")
    parser.add_argument("--oracle", action="store_true", default=None,
                        help="compare the optimizer against an exhaustive grid search")
    parser.add_argument("--tfs-alpha", type=float, dest="alpha", help="feedback threshold (linear SINR)")
    parser.add_argument("--beta-ref-dist", type=float, help="distance (m) of the scalar path-loss gain")
    parser.add_argument("--c-variant", choices=["paper", "corrected"])
    parser.add_argument("--phi", choices=["haar", "phase-dft"], dest="phi_method")
    parser.add_argument("--mode", choices=["ideal", "full", "tfs"], help="scheduler for simulated rates")
    parser.add_argument("--k-list", type=_int_list, help="user counts, e.g. 10,20,50")
    parser.add_argument("--l-list", type=_int_list, help="RIS row counts, e.g. 8,18")
    parser.add_argument("--p-t-dbw", type=float, help="transmit power for the fixed-power curves")
    parser.add_argument("--spectral-ee", action="store_true", default=None,
                        help="report EE in bits/s/Hz per watt")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("seed", "trials", "out", "trace_out", "layout_in", "layout_out", "channel_gain", "snr_eff",
            "oracle", "alpha", "beta_ref_dist", "c_variant", "phi_method", "mode", "k_list", "l_list",
            "p_t_dbw", "spectral_ee", "workers")
    return {key: getattr(args, key) for key in keys if getattr(args, key) is not None}


def _report(output) -> int:
    for path in output.paths:
        print(f"wrote {path}")
    result = output.result
    if result is None:
        return EXIT_OK

    print(f"L*={result.l_opt} P_T*={result.p_t_opt:.6g} W ({result.p_t_opt_dbw:.4f} dBW) "
          f"EE={result.ee_opt:.6g} iterations={result.iterations} converged={result.converged}")
    if output.oracle is not None:
        l_grid, p_grid, ee_grid = output.oracle
        gap = "" if output.oracle_gap is None else f"{output.oracle_gap:.3g}"
        print(f"oracle L={l_grid} P_T={p_grid:.6g} W EE={ee_grid:.6g} gap={gap}")
    if output.mc_ee is not None:
        print(f"monte-carlo EE at optimum={output.mc_ee[0]:.6g} +/- {output.mc_ee[1]:.2g}")
    else:
        print("monte-carlo EE at optimum=")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level or config.LOG_LEVEL, format=LOG_FORMAT)

    try:
        file_values = load_config_file(args.config) if args.config else {}
        defaults = EXPERIMENT_DEFAULTS.get(args.experiment, {})
        spec = build_spec(args.experiment, merge_values(defaults, file_values), _overrides(args))
        output = run_experiment(spec)
    except InfeasibleSubproblemError as e:
        logger.error("Optimization infeasible after %d iteration(s): %s", max(len(e.trace) - 1, 0), e)
        return EXIT_INFEASIBLE
    except DarbError as e:
        logger.error("%s failed: %s", args.experiment, e)
        return EXIT_ERROR
    return _report(output)


if __name__ == "__main__":
    sys.exit(main())
