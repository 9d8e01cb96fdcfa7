"""consensus_lab command line: simulate, certify, sweep and ic-gen.

Exit codes: 0 success (or certificate holds), 1 certificate fails,
2 usage or configuration error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import artifacts
from .certificates import (
    CertificateQuery,
    DivergentFamilyError,
    QuadratureToleranceError,
    Verdict,
    extended_certificate,
)
from .config import ConfigError, RunConfig, default_output_dir, dump_config, load_config, load_environment, log_level
from .contours import contour_extract
from .experiments import DegenerateInitialConditionError, generate_ic, rescale_ic, run_sweep
from .flock import FlockState
from .integrator import IntegrationBlowupError, decay_monitor, simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILS = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _output_dir(args, config: Optional[RunConfig] = None) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if config is not None and config.output.directory:
        return Path(config.output.directory)
    return default_output_dir()


def initial_state(config: RunConfig) -> FlockState:
    """Initial condition of a run: the ic-gen CSV if one is named, else the seeded draw rescaled to (X0, V0)."""
    initial = config.initial
    if initial.path is None:
        raw = generate_ic(config.model.N, config.model.d, initial.seed)
        return rescale_ic(raw, initial.X0, initial.V0)

    try:
        state = artifacts.read_ic_csv(initial.path)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read initial condition {initial.path}: {e}") from e
    if (state.N, state.d) != (config.model.N, config.model.d):
        raise ConfigError(
            f"initial condition {initial.path} has N={state.N}, d={state.d}; "
            f"model expects N={config.model.N}, d={config.model.d}"
        )
    return state


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.overrides)
    initial = initial_state(config)
    trajectory = simulate(initial, config.model.kernel, config.controller, config.sim)
    summary = artifacts.trajectory_summary(trajectory)

    out = _output_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_trajectory_csv(out / "trajectory.csv", trajectory)
    if trajectory.snapshots is not None:
        artifacts.write_snapshots_csv(out / "snapshots.csv", trajectory, config.sim.dt)
        if len(trajectory.times) >= 3:
            report = decay_monitor(trajectory, config.model.kernel, config.controller)
            artifacts.write_decay_csv(out / "decay.csv", report)
    artifacts.write_json(out / "summary.json", summary)
    (out / "config.yaml").write_text(dump_config(config), encoding="utf-8")

    logger.info("Simulation written to %s (consensus=%s)", out, summary["consensus"])
    print(artifacts.to_json(summary))
    return EXIT_OK


def _certificate_query(args) -> CertificateQuery:
    family = {"kind": args.family}
    if args.family in ("chi_radius", "psi_r_theta"):
        family["R"] = args.R
    if args.family == "psi_r_theta":
        family["theta"] = args.theta
    if args.family == "power_law":
        family["epsilon"] = args.epsilon
    return CertificateQuery.model_validate(
        {
            "N": args.N,
            "X0": args.X0,
            "V0": args.V0,
            "kernel": {"kind": "power_law", "delta": args.delta},
            "gamma": args.gamma,
            "family": family,
            "eta_bound": args.eta_bound,
        }
    )


def cmd_certify(args) -> int:
    try:
        query = _certificate_query(args)
        result = extended_certificate(query)
    except (ValidationError, DivergentFamilyError) as e:
        raise ConfigError(str(e)) from e

    print(artifacts.to_json({"query": query.model_dump(), **artifacts.certificate_record(result)}))
    return EXIT_FAILS if result.verdict == Verdict.FAILS else EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.overrides)
    if args.contour is not None and not 0.0 < args.contour < 1.0:
        raise ConfigError("--contour level must lie in (0, 1)")
    try:
        sweep = config.sweep_config(workers=args.workers)
    except ValidationError as e:
        raise ConfigError(str(e)) from e

    grid = run_sweep(sweep)
    polylines = contour_extract(grid, args.contour) if args.contour is not None else None

    out = _output_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_grid_csv(out / "grid.csv", grid)
    artifacts.write_json(out / "manifest.json", artifacts.sweep_manifest(sweep, grid, dump_config(config)))
    (out / "config.yaml").write_text(dump_config(config), encoding="utf-8")
    if polylines is not None:
        artifacts.write_contour_csv(out / "contour.csv", polylines)
    if config.output.plot_script:
        script = artifacts.plot_script("grid.csv", "contour.csv" if polylines is not None else None, args.contour)
        (out / "plot.gp").write_text(script, encoding="utf-8")

    logger.info(
        "Sweep of %d simulations written to %s in %.1fs", grid.simulations, out, grid.runtime_seconds
    )
    return EXIT_OK


def cmd_ic_gen(args) -> int:
    try:
        state = rescale_ic(generate_ic(args.N, args.d, args.seed), args.X0, args.V0)
    except DegenerateInitialConditionError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e

    if args.output == "-":
        artifacts.write_ic_csv(sys.stdout, state)
    else:
        artifacts.write_ic_csv(args.output, state)
        logger.info("Initial condition written to %s", args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus_lab", description="Controlled Cucker-Smale consensus lab.")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config_arguments(sub):
        sub.add_argument("config", help="YAML run configuration")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override a configuration field, e.g. --set sim.T=50",
        )
        sub.add_argument("--output-dir", default=None, help="Directory for the written artifacts")

    simulate_cmd = commands.add_parser("simulate", help="Integrate one flock and write its trajectory")
    add_config_arguments(simulate_cmd)
    simulate_cmd.set_defaults(handler=cmd_simulate)

    certify_cmd = commands.add_parser("certify", help="Evaluate the consensus certificate for (X0, V0)")
    certify_cmd.add_argument("--N", type=int, required=True)
    certify_cmd.add_argument("--X0", type=float, required=True)
    certify_cmd.add_argument("--V0", type=float, required=True)
    certify_cmd.add_argument("--delta", type=float, default=1.0, help="Exponent of the power-law kernel")
    certify_cmd.add_argument("--gamma", type=float, default=0.0, help="Feedback strength")
    certify_cmd.add_argument(
        "--family", choices=["none", "chi_radius", "psi_r_theta", "power_law"], default="none"
    )
    certify_cmd.add_argument("--R", type=float, default=float("inf"))
    certify_cmd.add_argument("--theta", type=float, default=2.0)
    certify_cmd.add_argument("--epsilon", type=float, default=1.0)
    certify_cmd.add_argument("--eta-bound", type=float, default=None)
    certify_cmd.set_defaults(handler=cmd_certify)

    sweep_cmd = commands.add_parser("sweep", help="Estimate consensus probabilities over an (X0, V0) grid")
    add_config_arguments(sweep_cmd)
    sweep_cmd.add_argument("--contour", type=float, default=None, metavar="LEVEL", help="Also write this level curve")
    sweep_cmd.add_argument("--workers", type=int, default=None, help="Worker processes")
    sweep_cmd.set_defaults(handler=cmd_sweep)

    ic_cmd = commands.add_parser("ic-gen", help="Write a seeded initial condition rescaled to (X0, V0)")
    ic_cmd.add_argument("--N", type=int, required=True)
    ic_cmd.add_argument("--d", type=int, default=2)
    ic_cmd.add_argument("--seed", type=int, default=0)
    ic_cmd.add_argument("--X0", type=float, default=1.0)
    ic_cmd.add_argument("--V0", type=float, default=1.0)
    ic_cmd.add_argument("--output", default="-", help="CSV path, or - for standard output")
    ic_cmd.set_defaults(handler=cmd_ic_gen)

    return parser


def _configure_logging() -> None:
    level = logging.getLevelName(log_level())
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    _configure_logging()
    args = build_parser().parse_args(argv)

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationBlowupError, QuadratureToleranceError, DegenerateInitialConditionError) as e:
        logger.error("Numerical failure: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
