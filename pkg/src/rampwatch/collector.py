"""Output files of a simulation run."""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any

import pandas as pd

from . import __version__
from .config import Config, Task
from .render import ReportRenderer
from .sim import EvaluationReport, ReplicationResult, cost_tolerance, summarize

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def summarize_scenarios(
    config: Config, tasks: list[Task], results: list[ReplicationResult]
) -> list[EvaluationReport]:
    """One report per scenario, folding results in task order."""
    by_scenario: dict[str, list[ReplicationResult]] = {s.name: [] for s in config.scenarios}
    for task, result in zip(tasks, results, strict=True):
        by_scenario[task.scenario].append(result)
    return [
        summarize(
            by_scenario[s.name],
            scenario=s.name,
            policy=s.plan.policy.kind,
            c=cost_tolerance(s.plan),
        )
        for s in config.scenarios
        if by_scenario[s.name]
    ]


class Collector:
    """Writes everything a simulate run produces into one directory.

    Files: config.json, replications.jsonl, report.json, report.csv,
    report.md and run.log.
    """

    def __init__(self, config: Config, base_dir: Path | None = None) -> None:
        root = base_dir if base_dir is not None else Path(config.output_dir)
        self.run_dir = root / config.name
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self._log_handler: logging.Handler | None = None

        with (self.run_dir / "config.json").open("w") as f:
            json.dump(self._settings() | {"scenarios": self._scenarios()}, f, indent=2)

    def _settings(self) -> dict[str, Any]:
        return {
            "name": self.config.name,
            "version": __version__,
            "replications": self.config.replications,
            "seed": self.config.seed,
            "parallel": self.config.parallel,
        }

    def _scenarios(self) -> list[dict[str, Any]]:
        return [
            {
                "name": s.name,
                "plan": s.plan.to_dict(),
                "population": asdict(s.population),
                "effect": asdict(s.effect),
            }
            for s in self.config.scenarios
        ]

    def setup_file_logging(self) -> None:
        """Redirect logging to run.log in the run directory."""
        root_logger = logging.getLogger()
        root_logger.setLevel(logging.INFO)
        for existing in root_logger.handlers[:]:
            root_logger.removeHandler(existing)
        handler = logging.FileHandler(self.run_dir / "run.log")
        handler.setLevel(logging.INFO)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        root_logger.addHandler(handler)
        self._log_handler = handler

    def close(self) -> None:
        if self._log_handler is not None:
            logging.getLogger().removeHandler(self._log_handler)
            self._log_handler.close()
            self._log_handler = None

    def write_replications(self, tasks: list[Task], results: list[ReplicationResult]) -> None:
        """Write one JSON line per replication to replications.jsonl."""
        with (self.run_dir / "replications.jsonl").open("w") as f:
            for task, result in zip(tasks, results, strict=True):
                record = {"scenario": task.scenario, "replication": task.replication}
                f.write(json.dumps(record | result.to_dict()) + "\n")

    def write_reports(self, reports: list[EvaluationReport]) -> None:
        """Write report.json, report.csv and report.md."""
        with (self.run_dir / "report.json").open("w") as f:
            json.dump(
                self._settings() | {"reports": [asdict(r) for r in reports]}, f, indent=2
            )

        rows = [
            asdict(r)
            | {"weighted_avg_rollout_pct": ";".join(f"{p:.4f}" for p in r.weighted_avg_rollout_pct)}
            for r in reports
        ]
        pd.DataFrame(rows).to_csv(self.run_dir / "report.csv", index=False, na_rep="NA")

        text = ReportRenderer().render_report(self.config.name, reports, self._settings())
        (self.run_dir / "report.md").write_text(text)


def read_replications(path: Path) -> list[tuple[str, ReplicationResult]]:
    """Load (scenario, result) pairs back from replications.jsonl."""
    pairs: list[tuple[str, ReplicationResult]] = []
    with path.open() as f:
        for line in f:
            data = json.loads(line)
            scenario = data.pop("scenario")
            data.pop("replication")
            pairs.append((scenario, ReplicationResult.from_dict(data)))
    return pairs
