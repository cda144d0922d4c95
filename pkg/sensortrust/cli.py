"""
cli.py

Command-line entry point: ``simulate``, ``calibrate``, ``tune`` and ``pomdp``.

Exit codes: 0 on success, 2 on a configuration error, 3 on a runtime fault.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from sensortrust.harness import (
    STOCHASTIC,
    ScenarioConfig,
    SummaryReport,
    calibrate_detector,
    export,
    run_batch,
    tune_thresholds,
    tune_wolf,
)
from sensortrust.persistence import SensorTrustPersistence
from sensortrust.pomdp import PomdpProblem, analyze
from sensortrust.utilities import ConvergenceError, EstimatorFault, MethodFactory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
DEFAULT_CALIBRATION = "calibration.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensortrust", description="Sensor-trust cart-pole simulator.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Run a batch of seeds for one or more methods")
    simulate.add_argument("--scenario", default="NoAttack", help="Scenario name, 'stochastic', or a config .json file")
    simulate.add_argument(
        "--method", action="append", default=None,
        help=f"Method to run; repeatable. One of: {', '.join(MethodFactory.names())}",
    )
    _add_common(simulate)
    simulate.add_argument("--out", default=None, help="Output directory for runs.csv and summary.json")

    calibrate = sub.add_parser("calibrate", help="Calibrate the CUSUM detector on benign runs")
    calibrate.add_argument("--benign-seeds", type=int, default=50, help="Number of benign runs (default: 50)")
    calibrate.add_argument("--budget", type=float, default=0.05, help="Per-step false-alarm budget (default: 0.05)")
    calibrate.add_argument("--config", default=None, help="Scenario config .json supplying plant and noise")
    calibrate.add_argument("--horizon", type=float, default=None, help="Run length in seconds")
    calibrate.add_argument("--workers", type=int, default=None, help="Worker processes (default: SENSORTRUST_WORKERS or 1)")
    calibrate.add_argument("--out", default=DEFAULT_CALIBRATION, help=f"Calibration file (default: {DEFAULT_CALIBRATION})")

    tune = sub.add_parser("tune", help="Grid-search probing windows or WoLF hyperparameters")
    tune.add_argument("--mode", choices=[STOCHASTIC, "benign", "wolf"], default=STOCHASTIC)
    tune.add_argument("--method", default=None, help="WoLF variant for --mode wolf")
    tune.add_argument("--scenario", default=None, help="Scenario for --mode wolf, or a config .json file")
    _add_common(tune)
    tune.add_argument("--out", default=None, help="Write the selected values to this .json file")

    pomdp = sub.add_parser("pomdp", help="Analyze the two-sensor selection problem")
    pomdp.add_argument("--config", default=None, help="Problem .json file (default: reference problem)")
    pomdp.add_argument("--out", default=None, help="Output directory for pomdp_report.json and pomdp_grid.csv")
    return parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seeds", type=int, default=None, help="Run seeds 0 .. N-1")
    parser.add_argument("--master-seed", type=int, default=None, help="Master seed combined with every run seed")
    parser.add_argument("--horizon", type=float, default=None, help="Run length in seconds")
    parser.add_argument("--calibration", default=DEFAULT_CALIBRATION, help=f"Calibration file (default: {DEFAULT_CALIBRATION})")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes (default: SENSORTRUST_WORKERS or 1)")


def _base_config(scenario: Optional[str]) -> ScenarioConfig:
    if scenario and scenario.lower().endswith(".json"):
        return ScenarioConfig.load(scenario)
    return ScenarioConfig(scenario=scenario) if scenario else ScenarioConfig()


def _apply_common(config: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.seeds is not None:
        if args.seeds < 1:
            raise ValueError(f"--seeds must be at least 1, got {args.seeds}")
        changes["seeds"] = tuple(range(args.seeds))
    if args.master_seed is not None:
        changes["master_seed"] = args.master_seed
    if args.horizon is not None:
        changes["horizon_s"] = args.horizon
    if config.calibration is None and os.path.exists(args.calibration):
        changes["calibration"] = SensorTrustPersistence.load_calibration(args.calibration)
    return replace(config, **changes)


def cmd_simulate(args) -> int:
    base = _apply_common(_base_config(args.scenario), args)
    methods = args.method or [base.method]
    records = []
    report = SummaryReport()
    for method in methods:
        batch = run_batch(replace(base, method=method, output_dir=None), workers=args.workers)
        records.extend(batch.records)
        report = report.merge(batch.report)
    print(report.failure_table().to_string(index=False))
    if args.out:
        paths = export(records, report, args.out)
        logger.info(f"Wrote {', '.join(paths.values())}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    if args.horizon is not None:
        config = replace(config, horizon_s=args.horizon)
    calibration = calibrate_detector(config, n_runs=args.benign_seeds, budget=args.budget, workers=args.workers)
    SensorTrustPersistence.export(calibration, args.out)
    print(SensorTrustPersistence.to_json(calibration))
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _apply_common(_base_config(args.scenario), args)
    if args.mode == "wolf":
        if not args.method:
            raise ValueError("--mode wolf needs --method wolf-imq, wolf-md or wolf-tmd")
        config = replace(config, method=args.method)
        result = {"method": args.method, "scenario": config.scenario_label(), "c": tune_wolf(config, workers=args.workers)}
    else:
        low, high = tune_thresholds(config, mode=args.mode, workers=args.workers)
        result = {"mode": args.mode, "window_low": low, "window_high": high}
    print(json.dumps(result, indent=2))
    if args.out:
        SensorTrustPersistence.export(result, args.out)
    return EXIT_OK


def cmd_pomdp(args) -> int:
    problem = PomdpProblem.from_dict(SensorTrustPersistence.load(args.config)) if args.config else PomdpProblem()
    report, frame = analyze(problem)
    dominance = report["dominance"]
    print(json.dumps({
        "breakpoints": report["breakpoints"],
        "myopic_region": dominance["myopic_region"],
        "violations": dominance["violations"],
        "extra_probing_measure": dominance["extra_probing_measure"],
    }, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        SensorTrustPersistence.export(report, os.path.join(args.out, "pomdp_report.json"))
        SensorTrustPersistence.export_frame(frame, os.path.join(args.out, "pomdp_grid.csv"))
    if dominance["violations"]:
        logger.error(f"Optimal policy skips the expensive sensor at {dominance['violations']} grid point(s) inside the myopic region")
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "tune": cmd_tune,
    "pomdp": cmd_pomdp,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (EstimatorFault, ConvergenceError, AssertionError, OSError) as e:
        logger.error(f"Runtime fault: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
