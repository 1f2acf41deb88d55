"""Configuration for integration tests.

Implements:
- Lazy scenario runs: a shipped scenario is simulated on first use and its
  report is shared by every test in the session
- The binomial tolerance used by the rate assertions
"""

from __future__ import annotations

import math
from collections.abc import Callable
from pathlib import Path

import pytest

from rampwatch.config import Config
from rampwatch.sim import EvaluationReport, run_experiment

# ============================================================================
# Constants
# ============================================================================

CONFIG_DIR = Path(__file__).parents[2] / "config"


def rate_bound(rate: float, replications: int) -> float:
    """``rate`` plus two binomial standard errors over ``replications`` runs."""
    return rate + 2 * math.sqrt(rate * (1 - rate) / replications)


# ============================================================================
# Lazy scenario reports
# ============================================================================


@pytest.fixture(scope="session")
def session_replications(request: pytest.FixtureRequest) -> int:
    return int(request.config.getoption("--replications"))


@pytest.fixture(scope="session")
def scenario_report(
    session_replications: int,
) -> Callable[[str, str], EvaluationReport]:
    """Report of ``scenario`` from ``config/<config_name>.yaml``, run once."""
    cache: dict[tuple[str, str], EvaluationReport] = {}

    def get(config_name: str, scenario: str) -> EvaluationReport:
        key = (config_name, scenario)
        if key not in cache:
            config = Config.load(yaml_path=CONFIG_DIR / f"{config_name}.yaml")
            s = config.scenario(scenario)
            cache[key] = run_experiment(
                s.plan,
                s.population,
                s.effect,
                replications=session_replications,
                seed=config.seed,
                scenario=s.name,
            )
        return cache[key]

    return get
