"""Configuration for rampwatch simulation runs."""

import os
from argparse import Namespace
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Self

import yaml

from .controller import RolloutPlan
from .sim import EffectModel, PopulationModel, replication_seeds

################################################################################
# Mapping: config field -> env var
################################################################################

ENV_MAP: dict[str, str] = {
    "replications": "RAMPWATCH_REPLICATIONS",
    "seed": "RAMPWATCH_SEED",
    "parallel": "RAMPWATCH_PARALLEL",
    "output_dir": "RAMPWATCH_OUTPUT_DIR",
}

################################################################################
# Types for config conversion
################################################################################

INT_FIELDS: frozenset[str] = frozenset({"replications", "seed", "parallel"})
STRING_FIELDS: frozenset[str] = frozenset({"name", "output_dir"})


def _parse_env_value(field_name: str, value: str) -> int | str:
    """Convert env var string to proper type."""
    if field_name in INT_FIELDS:
        try:
            return int(value)
        except ValueError as e:
            raise ValueError(f"{ENV_MAP[field_name]} must be an integer: {value!r}") from e
    return value


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Deep merge override into base"""
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def _read_yaml(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with path.open() as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"Config file must contain a mapping: {path}")
    return data


def _load_from_env() -> dict[str, Any]:
    """Load config from RAMPWATCH_* environment variables."""
    result: dict[str, Any] = {}
    for field_name, env_var in ENV_MAP.items():
        if (val := os.environ.get(env_var)) is not None:
            result[field_name] = _parse_env_value(field_name, val)
    return result


def _load_from_yaml(path: Path) -> dict[str, Any]:
    """Load run settings and scenarios from a YAML file."""
    data = _read_yaml(path)
    result: dict[str, Any] = {}
    for field_name in INT_FIELDS | STRING_FIELDS:
        if field_name in data:
            result[field_name] = data[field_name]
    scenarios = data.get("scenarios") or []
    if not isinstance(scenarios, list):
        raise ValueError("scenarios must be a list")
    result["scenarios"] = [
        Scenario.from_dict(s, base_dir=path.parent, index=i)
        for i, s in enumerate(scenarios)
    ]
    return result


def _load_from_args(args: Namespace) -> dict[str, Any]:
    """Load config from CLI arguments."""
    result: dict[str, Any] = {}
    for field_name in INT_FIELDS | STRING_FIELDS:
        if (val := getattr(args, field_name, None)) is not None:
            result[field_name] = val
    return result


def load_plan(path: Path) -> RolloutPlan:
    """Read and validate a rollout plan file."""
    plan = RolloutPlan.from_dict(_read_yaml(path))
    plan.validate()
    return plan


################################################################################
# Scenarios and tasks
################################################################################


@dataclass(frozen=True)
class Scenario:
    """A plan simulated against a population and an effect."""

    name: str
    plan: RolloutPlan
    population: PopulationModel = field(default_factory=PopulationModel)
    effect: EffectModel = field(default_factory=EffectModel)

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path, index: int = 0) -> "Scenario":
        """``plan`` is an inline mapping or a path relative to the config file.

        ``plan_overrides`` is deep-merged into the plan, so one plan file can
        back several scenarios.
        """
        where = f"scenarios[{index}]"
        if not isinstance(data, dict):
            raise ValueError(f"{where} must be a mapping")
        if "name" not in data or "plan" not in data:
            raise ValueError(f"{where} needs a name and a plan")
        plan_data = data["plan"]
        if isinstance(plan_data, str):
            plan_data = _read_yaml(base_dir / plan_data)
        plan_data = _deep_merge(plan_data, data.get("plan_overrides") or {})
        try:
            return cls(
                name=str(data["name"]),
                plan=RolloutPlan.from_dict(plan_data),
                population=PopulationModel.from_dict(data.get("population") or {}),
                effect=EffectModel.from_dict(data.get("effect")),
            )
        except ValueError as e:
            raise ValueError(f"{where} ({data['name']}): {e}") from e

    def validate(self) -> None:
        try:
            self.plan.validate()
            self.population.validate()
            self.effect.validate()
        except ValueError as e:
            raise ValueError(f"scenario {self.name}: {e}") from e
        if len(self.plan.metrics) != 1:
            raise ValueError(f"scenario {self.name}: simulation drives exactly one metric")


@dataclass(frozen=True)
class Task:
    """Single replication of a scenario (immutable)."""

    scenario: str
    replication: int
    seed: int

    def __str__(self) -> str:
        """Human-readable task description."""
        return f"{self.scenario} | rep {self.replication:04d} | seed {self.seed}"


@dataclass
class Config:
    """Simulation run configuration."""

    name: str = "rampwatch"
    replications: int = 200
    seed: int = 0
    parallel: int = 1
    output_dir: str = "runs"
    scenarios: list[Scenario] = field(default_factory=list)

    @classmethod
    def load(
        cls,
        yaml_path: Path | None = None,
        args: Namespace | None = None,
    ) -> Self:
        """Load config with precedence: env < yaml < cli."""
        data: dict[str, Any] = {}

        # Layer 1: env vars (lowest priority)
        data.update(_load_from_env())

        # Layer 2: YAML file
        if yaml_path:
            data.update(_load_from_yaml(yaml_path))
            data.setdefault("name", yaml_path.stem)

        # Layer 3: CLI args (highest priority)
        if args:
            data.update(_load_from_args(args))

        return cls(**data)

    def validate(self) -> None:
        """Validate config. Raises ValueError if invalid."""
        if not self.scenarios:
            raise ValueError("At least one scenario is required")

        if self.replications < 1:
            raise ValueError("replications must be >= 1")

        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")

        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ValueError(f"Scenario names must be unique: {names}")

        for scenario in self.scenarios:
            scenario.validate()

    def scenario(self, name: str) -> Scenario:
        for scenario in self.scenarios:
            if scenario.name == name:
                return scenario
        raise ValueError(f"Unknown scenario: {name}. Valid: {[s.name for s in self.scenarios]}")

    def generate_tasks(self) -> list[Task]:
        """Generate all replications as Tasks.

        Every scenario uses the same replication seeds, so policies are compared
        on identical streams.
        """
        seeds = replication_seeds(self.seed, self.replications)
        return [
            Task(scenario=scenario.name, replication=i, seed=seed)
            for scenario in self.scenarios
            for i, seed in enumerate(seeds)
        ]

    @property
    def total_runs(self) -> int:
        """Calculate total number of runs."""
        return len(self.scenarios) * self.replications
