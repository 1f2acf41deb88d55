"""CLI entry point for rampwatch command."""

import argparse
import asyncio
import json
import logging
import math
import os
import sys
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path

import pandas as pd
import yaml

from . import snapshot
from .accumulator import DataQualityError, ObservationEvent
from .config import Config, Task, load_plan
from .controller import RolloutPlan, RolloutState, RolloutStateError, start, step
from .stats import PowerQuery, estimate_power, required_sample_size

logger = logging.getLogger(__name__)

# Environment variable for config file path (special: no corresponding CLI flag)
RAMPWATCH_CONFIG_ENV = "RAMPWATCH_CONFIG"


class UsageError(Exception):
    """Bad input detected after argument parsing; maps to exit code 2."""

    pass


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="rampwatch",
        description="Staged feature rollouts with always-valid sequential monitoring",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    # simulate
    simulate = commands.add_parser("simulate", help="Run A/A and A/B replications")
    simulate.add_argument(
        "config",
        nargs="?",
        type=Path,
        help="Simulation config file path (YAML)",
    )
    simulate.add_argument("--replications", type=int, help="Replications per scenario")
    simulate.add_argument("--seed", type=int, help="Base seed")
    simulate.add_argument("--parallel", type=int, help="Worker processes")
    simulate.add_argument("--output-dir", help="Directory for run outputs")
    simulate.add_argument("--dry-run", action="store_true", help="Show tasks only")

    # monitor
    monitor = commands.add_parser("monitor", help="Replay an event stream as a rollout")
    monitor.add_argument("plan", type=Path, help="Rollout plan file (YAML)")
    monitor.add_argument("events", type=Path, help="Events file (JSON lines)")
    monitor.add_argument(
        "--state", type=Path, help="Snapshot file; resumed from if present, then updated"
    )
    monitor.add_argument(
        "--until-hour", type=int, help="Stop after this hour (default: last event hour)"
    )

    # power
    power = commands.add_parser("power", help="Sequential sample size or power")
    power.add_argument("--delta", type=float, required=True, help="True difference")
    power.add_argument("--alpha", type=float, default=0.05, help="Significance level")
    power.add_argument("--var-ctrl", type=float, default=0.21, help="Control variance")
    power.add_argument("--var-trt", type=float, default=0.21, help="Treatment variance")
    query = power.add_mutually_exclusive_group(required=True)
    query.add_argument("--beta", type=float, help="Target type II error (size query)")
    query.add_argument("--n", type=float, help="Per-group sample size (power query)")

    # generate
    generate = commands.add_parser(
        "generate", help="Record one simulated replication's events for monitor"
    )
    generate.add_argument("config", type=Path, help="Simulation config file path (YAML)")
    generate.add_argument("--scenario", help="Scenario name (default: first)")
    generate.add_argument("--seed", type=int, default=0, help="Stream seed")
    generate.add_argument(
        "--output", type=Path, default=Path("events.jsonl"), help="Events file to write"
    )
    generate.add_argument(
        "--plan-output", type=Path, help="Where to write the scenario's plan (YAML)"
    )

    # study
    study = commands.add_parser("study", help="Monte Carlo studies of the test")
    studies = study.add_subparsers(dest="study", required=True)
    power_fit = studies.add_parser("power-fit", help="Sample-size formula vs simulation")
    power_fit.add_argument("--deltas", type=float, nargs="+", default=[0.03, 0.05, 0.1])
    power_fit.add_argument("--betas", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.5])
    power_fit.add_argument("--draws", type=int, default=500)
    power_fit.add_argument("--seed", type=int, default=0)
    power_fit.add_argument("--output", type=Path, help="Also write the table as CSV")
    tau = studies.add_parser("tau", help="Compare the horizon-based tau policies")
    tau.add_argument("--p-grid", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    tau.add_argument("--rel-diff", type=float, default=0.05)
    tau.add_argument("--checks", type=int, default=200)
    tau.add_argument("--reps", type=int, default=200)
    tau.add_argument("--seed", type=int, default=0)
    tau.add_argument("--output", type=Path, help="Also write the table as CSV")

    return parser


################################################################################
# simulate
################################################################################


def print_tasks(tasks: list[Task]) -> None:
    """Print task list for dry run."""
    total = len(tasks)
    for i, task in enumerate(tasks, 1):
        print(f"[{i:0{len(str(total))}d}/{total}] {task}")


async def execute(config: Config, tasks: list[Task]) -> int:
    """Execute all replications and write the reports. Returns exit code."""
    from .collector import Collector, summarize_scenarios
    from .executor import Executor

    collector = Collector(config)
    collector.setup_file_logging()
    executor = Executor(config=config, tasks=tasks)

    try:
        results = await executor.run()
        collector.write_replications(tasks, results)
        reports = summarize_scenarios(config, tasks, results)
        collector.write_reports(reports)
        for report in reports:
            print(
                f"{report.scenario}: positive rate {report.positive_rate:.3f}, "
                f"loss > C {report.pct_exceeding_C:.3f}"
            )
        print(f"Reports written to {collector.run_dir}")
        return 0
    except (KeyboardInterrupt, asyncio.CancelledError):
        print("\nInterrupted by user")
        return 130
    except Exception as e:
        logger.exception("Simulation failed")
        print(f"Execution failed: {e}")
        return 1
    finally:
        collector.close()


def _resolve_config_path(args_config: Path | None) -> Path | None:
    """Resolve config path: CLI arg takes precedence over RAMPWATCH_CONFIG env var."""
    if args_config is not None:
        return args_config
    env_config = os.environ.get(RAMPWATCH_CONFIG_ENV)
    if env_config:
        return Path(env_config)
    return None


def cmd_simulate(args: argparse.Namespace) -> int:
    config_path = _resolve_config_path(args.config)
    if config_path is None:
        raise UsageError(f"a config file is required (argument or {RAMPWATCH_CONFIG_ENV})")

    # Build config with precedence: env < yaml < args
    config = Config.load(yaml_path=config_path, args=args)
    config.validate()
    tasks = config.generate_tasks()

    if args.dry_run:
        print_tasks(tasks)
        return 0
    return asyncio.run(execute(config, tasks))


################################################################################
# monitor
################################################################################


def read_events(path: Path, plan: RolloutPlan) -> dict[int, list[ObservationEvent]]:
    """Parse an events file into hour buckets, enforcing nondecreasing hours."""
    if not path.exists():
        raise FileNotFoundError(f"Events file not found: {path}")
    hours: dict[int, list[ObservationEvent]] = defaultdict(list)
    names = set(plan.metric_names)
    last_hour = -1
    with path.open() as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                event = ObservationEvent(
                    timestamp=int(data["hour"]),
                    unit_id=str(data["unit_id"]),
                    group=data["group"],
                    value=float(data["value"]),
                    metric=str(data.get("metric", "")),
                )
                event.validate()
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise UsageError(f"{path}:{lineno}: invalid event: {e}") from e
            if event.timestamp < last_hour:
                raise UsageError(
                    f"{path}:{lineno}: hour {event.timestamp} after hour {last_hour}"
                )
            if event.metric and event.metric not in names:
                raise UsageError(f"{path}:{lineno}: unknown metric {event.metric!r}")
            last_hour = event.timestamp
            hours[event.timestamp].append(event)
    return hours


def monitor(
    plan: RolloutPlan,
    events: dict[int, list[ObservationEvent]],
    state: RolloutState,
    until_hour: int | None = None,
) -> RolloutState:
    """Step hour by hour from ``state.elapsed_hours``; hours before it are already in."""
    last = until_hour if until_hour is not None else max(events, default=-1)
    for hour in range(state.elapsed_hours, last + 1):
        if state.is_terminal:
            skipped = sum(len(events.get(h, [])) for h in range(hour, last + 1))
            if skipped:
                logger.warning(f"Skipping {skipped} events after the rollout {state.status}")
                print(f"WARNING: {skipped} events after the rollout {state.status} skipped")
            break
        state, decision = step(plan, state, events.get(hour, []))
        print(f"[hour {hour:04d}] {decision}")
    return state


def cmd_monitor(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    if args.state is not None and args.state.exists():
        state = snapshot.load(args.state, plan)
        print(f"Resuming at hour {state.elapsed_hours} ({state.status})")
    else:
        state = start(plan)
    events = read_events(args.events, plan)
    try:
        state = monitor(plan, events, state, args.until_hour)
    except (RolloutStateError, DataQualityError) as e:
        raise UsageError(str(e)) from e
    if args.state is not None:
        snapshot.save(args.state, state, plan)
    print(f"Final: {state.status} at {state.treatment_pct:.2%} after {state.elapsed_hours}h")
    return 0


################################################################################
# power
################################################################################


def cmd_power(args: argparse.Namespace) -> int:
    if args.beta is not None:
        q = PowerQuery(args.delta, args.alpha, args.beta, args.var_ctrl, args.var_trt)
        n = required_sample_size(q)
        table = pd.DataFrame(
            [{"delta": q.delta, "alpha": q.alpha, "beta": q.beta, "n_per_group": math.ceil(n)}]
        )
    else:
        power = estimate_power(args.n, args.delta, args.var_ctrl, args.var_trt, args.alpha)
        table = pd.DataFrame(
            [{"delta": args.delta, "alpha": args.alpha, "n_per_group": args.n, "power": power}]
        )
    print(table.to_string(index=False))
    return 0


################################################################################
# generate / study
################################################################################


def cmd_generate(args: argparse.Namespace) -> int:
    from .sim import record_stream

    config = Config.load(yaml_path=args.config)
    config.validate()
    scenario = config.scenario(args.scenario) if args.scenario else config.scenarios[0]
    result = record_stream(
        scenario.plan, scenario.population, scenario.effect, args.seed, args.output
    )
    plan_path = args.plan_output or args.output.with_name(f"{scenario.name}.plan.yaml")
    plan_path.write_text(yaml.safe_dump(scenario.plan.to_dict(), sort_keys=False))
    print(f"{scenario.name}: {result.outcome} at hour {result.hour}")
    print(f"Events: {args.output}")
    print(f"Plan:   {plan_path}")
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    from .studies import power_fit_study, tau_policy_study

    if args.study == "power-fit":
        cells = power_fit_study(
            deltas=tuple(args.deltas),
            betas=tuple(args.betas),
            draws=args.draws,
            seed=args.seed,
        )
    else:
        cells = tau_policy_study(
            p_grid=tuple(args.p_grid),
            rel_diff=args.rel_diff,
            checks=args.checks,
            reps=args.reps,
            seed=args.seed,
        )
    table = pd.DataFrame([asdict(c) for c in cells])
    print(table.to_string(index=False))
    if args.output is not None:
        table.to_csv(args.output, index=False)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "monitor": cmd_monitor,
    "power": cmd_power,
    "generate": cmd_generate,
    "study": cmd_study,
}


def main() -> None:
    """Main entry point for rampwatch command."""
    parser = create_parser()
    args = parser.parse_args()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        exit_code = COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, UsageError) as e:
        parser.error(str(e))
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        sys.exit(130)
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"Execution failed: {e}")
        sys.exit(1)
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
