"""Command-line entry point.

Subcommands:
    derive-requirements  Requirement table from geometry and risk (stdout + CSV)
    simulate             Simulated flight(s) with logs, outputs and a verdict
    replay               Estimation chain over a recorded log directory
    report               Cross-run comparison against the requirement set
    fault-tree           Evaluated shipped/configured fault trees

Exit codes: 0 success, 1 domain failure, 2 usage or schema error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from vertinav import __version__
from vertinav.atmosphere import format_calibration_report
from vertinav.config import load_config, settings
from vertinav.errors import ConfigError, InfeasibleError, LogFormatError, VertinavError
from vertinav.integrity import configured_fault_trees, evaluate_with_report, format_fault_tree_report, shipped_fault_trees
from vertinav.logs import OUTPUT_SCHEMAS, read_logs, read_table, write_logs, write_outputs, write_records
from vertinav.models import CliInvocation, IntegrityState, OrGateMode, VertinavConfig
from vertinav.requirements import derive_requirement_report, format_requirement_table, requirement_rows, requirement_set_for
from vertinav.sim import RunRecord, aggregate_runs, estimate, evaluate_run, monte_carlo, run_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SCENARIO_FILE = "scenario.json"
RUN_SUMMARY_FILE = "run_summary.csv"
MC_REPORT_FILE = "mc_report.csv"
MAX_LISTED_ALERTS = 10


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors surface as ConfigError instead of SystemExit."""

    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Configuration document (falls back to VERTINAV_CONFIG)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="More log output")

    parser = _Parser(prog="vertinav", description="Vertiport approach navigation toolkit")
    parser.add_argument("--version", action="version", version=f"vertinav {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    sub.add_parser("derive-requirements", parents=[common], help="Derive the requirement table")

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate vertiport-to-vertiport flights")
    simulate.add_argument("--seed", type=int, help="Override scenario.seed")
    simulate.add_argument("--runs", type=int, help="Override monte_carlo.runs")
    simulate.add_argument("--fail-on-alert", action="store_true", help="Exit 1 when any epoch raises an alert")

    replay = sub.add_parser("replay", parents=[common], help="Run the estimation chain on recorded logs")
    replay.add_argument("paths", nargs=1, metavar="LOG_DIR")

    report = sub.add_parser("report", parents=[common], help="Compare run directories")
    report.add_argument("paths", nargs="+", metavar="RUN_DIR")

    sub.add_parser("fault-tree", parents=[common], help="Evaluate the integrity fault trees")
    return parser


def parse_invocation(argv: Optional[List[str]] = None) -> CliInvocation:
    """Parse and validate a command line.

    Raises:
        ConfigError: Unknown subcommand, bad flag or invalid value
    """
    args = build_parser().parse_args(argv)
    try:
        invocation = CliInvocation(
            subcommand=args.subcommand,
            config=args.config,
            out=args.out,
            seed=getattr(args, "seed", None),
            runs=getattr(args, "runs", None),
            verbosity=args.verbose,
            paths=getattr(args, "paths", None) or [],
            fail_on_alert=bool(getattr(args, "fail_on_alert", False)),
        )
    except ValidationError as e:
        raise ConfigError("usage: invalid arguments", [err["msg"] for err in e.errors()]) from e
    if invocation.runs is not None and invocation.runs < 1:
        raise ConfigError("usage: --runs must be at least 1")
    if invocation.seed is not None and invocation.seed < 0:
        raise ConfigError("usage: --seed cannot be negative")
    return invocation


def configure_logging(verbosity: int) -> None:
    level = logging.DEBUG if verbosity > 0 else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )


def _output_dir(invocation: CliInvocation, default: Optional[str] = None) -> Optional[Path]:
    out = invocation.out or default
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_scenario(config: VertinavConfig, directory: Path) -> Path:
    path = directory / SCENARIO_FILE
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    return path


def _verdict(availability: float, alerts: int, hpe95, vpe95, config: VertinavConfig) -> str:
    req = requirement_set_for(config.requirements)

    def fmt(value):
        return "n/a" if value is None else f"{value:.2f} m"

    return (
        f"{availability * 100:.2f} % available, {alerts} alerts, "
        f"HPE95 {fmt(hpe95)} (HAL {req.hal:.2f} m), VPE95 {fmt(vpe95)} (VAL {req.val:.2f} m)"
    )


def _alert_times(record: RunRecord) -> List[float]:
    table = record.integrity
    return table.loc[table["state"] == IntegrityState.ALERT.value, "t"].tolist()


def _write_record(record: RunRecord, directory: Path) -> None:
    tables = {"fused": record.fused, "integrity": record.integrity, "gnss_pl": record.gnss_pl}
    if record.pe_pl is not None:
        tables["pe_pl"] = record.pe_pl
    write_outputs(tables, directory)
    if record.events:
        write_records(record.events, directory / "events.csv")
    if record.calibration is not None:
        write_records([record.calibration], directory / "calibration.csv")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_derive_requirements(invocation: CliInvocation, config: VertinavConfig) -> int:
    req = config.requirements
    report = derive_requirement_report(
        req.geometry, req.risk, req.multipliers, req.operation, req.tta, req.continuity, req.availability
    )
    print(format_requirement_table(report))
    out = _output_dir(invocation)
    if out is not None:
        pd.DataFrame(requirement_rows(report)).to_csv(
            out / "requirements.csv", index=False, encoding="utf-8", lineterminator="\n"
        )
        write_records(report.sets.values(), out / "requirement_sets.csv")
    return EXIT_OK


def cmd_simulate(invocation: CliInvocation, config: VertinavConfig) -> int:
    if invocation.seed is not None:
        config = config.model_copy(
            update={"scenario": config.scenario.model_copy(update={"seed": invocation.seed})}
        )
    runs = invocation.runs or config.monte_carlo.runs
    out = _output_dir(invocation, "vertinav_out")
    write_scenario(config, out)

    if runs == 1:
        record = run_scenario(config)
        write_logs(record.logs, out / "logs")
        _write_record(record, out)
        summaries = [record.summary]
        report = aggregate_runs(summaries, [record.pe_pl["hpe"].to_numpy()], [record.pe_pl["vpe"].to_numpy()])
        alert_times = _alert_times(record)
    else:
        report, summaries = monte_carlo(config, runs, settings.workers if settings.workers > 1 else None)
        alert_times = []

    write_records(summaries, out / RUN_SUMMARY_FILE)
    write_records([report], out / MC_REPORT_FILE)

    verdict = _verdict(report.availability, report.alerts, report.hpe95, report.vpe95, config)
    if alert_times:
        listed = ", ".join(f"{t:.1f}" for t in alert_times[:MAX_LISTED_ALERTS])
        more = "" if len(alert_times) <= MAX_LISTED_ALERTS else f" (+{len(alert_times) - MAX_LISTED_ALERTS} more)"
        verdict += f"; alert epochs at t = {listed} s{more}"
    print(verdict)
    if invocation.fail_on_alert and report.alerts > 0:
        return EXIT_FAILURE
    return EXIT_OK


def _replay_config(invocation: CliInvocation, log_dir: Path) -> VertinavConfig:
    """--config, then VERTINAV_CONFIG, then a scenario.json next to the logs."""
    if invocation.config or settings.config:
        return load_config(invocation.config)
    for candidate in (log_dir / SCENARIO_FILE, log_dir.parent / SCENARIO_FILE):
        if candidate.is_file():
            logger.info(f"Using configuration {candidate}")
            return load_config(str(candidate))
    raise ConfigError("no configuration given (use --config or VERTINAV_CONFIG)")


def cmd_replay(invocation: CliInvocation) -> int:
    log_dir = Path(invocation.paths[0])
    config = _replay_config(invocation, log_dir)
    logs = read_logs(log_dir)
    record = estimate(logs, config)
    if logs.truth is not None:
        record = evaluate_run(record, logs.truth, config)
    out = _output_dir(invocation, str(log_dir.parent / "replay"))
    _write_record(record, out)
    if record.summary is not None:
        write_records([record.summary], out / RUN_SUMMARY_FILE)

    if record.calibration is not None:
        print(format_calibration_report(record.calibration))
    states = record.integrity["state"]
    available = (states == IntegrityState.AVAILABLE.value).mean() if len(states) else 0.0
    alerts = int((states == IntegrityState.ALERT.value).sum())
    summary = record.summary
    print(_verdict(
        float(available), alerts,
        summary.hpe95 if summary else None, summary.vpe95 if summary else None,
        config,
    ))
    if logs.corners.empty:
        print("vision: unavailable (no camera stream)")
    return EXIT_OK


def _load_run_summaries(directory: Path) -> pd.DataFrame:
    path = directory / RUN_SUMMARY_FILE
    if not directory.is_dir():
        raise LogFormatError("run directory not found", str(directory))
    if not path.is_file():
        raise LogFormatError("no run summary", str(path))
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise LogFormatError(f"malformed run summary: {e}", str(path)) from e


def _run_config(invocation: CliInvocation, directory: Path) -> VertinavConfig:
    scenario = directory / SCENARIO_FILE
    if scenario.is_file():
        return load_config(str(scenario))
    return load_config(invocation.config)


def cmd_report(invocation: CliInvocation) -> int:
    rows, series = [], []
    for name in invocation.paths:
        directory = Path(name)
        summaries = _load_run_summaries(directory)
        config = _run_config(invocation, directory)
        req = requirement_set_for(config.requirements)
        for s in summaries.to_dict("records"):
            rows.append({
                "source": directory.name,
                "run": s["run"],
                "seed": s["seed"],
                "hpe95": s["hpe95"],
                "vpe95": s["vpe95"],
                "hal": req.hal,
                "val": req.val,
                "hpe95_target": req.hpe95,
                "vpe95_target": req.vpe95,
                "meets_accuracy": bool(s["hpe95"] <= req.hpe95 and s["vpe95"] <= req.vpe95),
                "max_hpl": s["max_hpl"],
                "max_vpl": s["max_vpl"],
                "pl_violations": s["pl_violations"],
                "alert_epochs": s["alert_epochs"],
                "availability": s["availability"],
            })
        pe_pl_path = directory / OUTPUT_SCHEMAS["pe_pl"].filename
        if pe_pl_path.is_file():
            pe = read_table(pe_pl_path, OUTPUT_SCHEMAS["pe_pl"])
            pe.insert(0, "source", directory.name)
            series.append(pe)

    table = pd.DataFrame(rows)
    print(table.to_string(index=False))
    out = _output_dir(invocation)
    if out is not None:
        table.to_csv(out / "comparison.csv", index=False, encoding="utf-8", lineterminator="\n")
        if series:
            pd.concat(series, ignore_index=True).to_csv(
                out / "pe_pl_series.csv", index=False, encoding="utf-8", lineterminator="\n"
            )
    return EXIT_OK


def cmd_fault_tree(invocation: CliInvocation) -> int:
    if invocation.config or settings.config:
        config = load_config(invocation.config)
        trees, mode = configured_fault_trees(config.integrity), config.integrity.mode
    else:
        trees, mode = shipped_fault_trees(), OrGateMode.SUM
    reports = [evaluate_with_report(tree, mode) for tree in trees.values()]
    print("\n\n".join(format_fault_tree_report(r) for r in reports))
    out = _output_dir(invocation)
    if out is not None:
        nodes = [
            {"tree": r.root, **n.model_dump(mode="json")}
            for r in reports
            for n in r.nodes
        ]
        pd.DataFrame(nodes).to_csv(out / "fault_trees.csv", index=False, encoding="utf-8", lineterminator="\n")
    return EXIT_OK


def run(invocation: CliInvocation) -> int:
    if invocation.subcommand == "derive-requirements":
        return cmd_derive_requirements(invocation, load_config(invocation.config))
    if invocation.subcommand == "simulate":
        return cmd_simulate(invocation, load_config(invocation.config))
    if invocation.subcommand == "replay":
        return cmd_replay(invocation)
    if invocation.subcommand == "report":
        return cmd_report(invocation)
    return cmd_fault_tree(invocation)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse, dispatch and map errors to exit codes."""
    try:
        invocation = parse_invocation(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(invocation.verbosity)
    logger.debug(f"Invocation: {invocation.model_dump()}")

    try:
        return run(invocation)
    except (ConfigError, LogFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except VertinavError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
