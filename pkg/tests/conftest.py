"""Test configuration and shared builders for rampwatch tests.

This module handles:
- The --replications option for the Monte Carlo acceptance tests
- Plan and accumulator builders shared by unit and integration tests
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
import pytest

from rampwatch.accumulator import CTRL, TRT, PartitionedAccumulator
from rampwatch.controller import MetricSpec, PowerGate, RolloutPlan
from rampwatch.rampup import (
    PowerBasedConfig,
    RampPolicyConfig,
    RiskBasedConfig,
    TimeBasedConfig,
)
from rampwatch.stats import SequentialTestConfig

# ============================================================================
# Constants
# ============================================================================

DEFAULT_REPLICATIONS: int = 200

# Daily schedule: 1%, 5%, 20%, 50% for a day each, then 100%
DAILY_SCHEDULE: tuple[tuple[int, float], ...] = (
    (24, 0.01),
    (24, 0.05),
    (24, 0.20),
    (24, 0.50),
    (24, 1.00),
)


# ============================================================================
# Pytest Hooks
# ============================================================================


def pytest_addoption(parser: pytest.Parser) -> None:
    """Add command line options."""
    parser.addoption(
        "--replications",
        type=int,
        default=DEFAULT_REPLICATIONS,
        help="Replications per scenario in integration tests",
    )


@pytest.fixture
def replications(request: pytest.FixtureRequest) -> int:
    """Replication count from --replications."""
    return int(request.config.getoption("--replications"))


# ============================================================================
# Builders
# ============================================================================


def make_plan(
    policy: RampPolicyConfig | None = None,
    metrics: Sequence[MetricSpec] | None = None,
    **overrides: Any,
) -> RolloutPlan:
    """A valid single-metric plan; keyword overrides replace plan fields."""
    fields: dict[str, Any] = {
        "feature_flag": "new_login_flow",
        "metrics": (
            tuple(metrics) if metrics is not None else (MetricSpec(name="login_success"),)
        ),
        "policy": policy or TimeBasedConfig(schedule=DAILY_SCHEDULE),
        "test": SequentialTestConfig(alpha=0.05),
        "power_gate": PowerGate(mde=0.05, beta=0.1),
        "assignment_salt": "new_login_flow/assignment",
        "partition_salt": "new_login_flow/partition",
    }
    if not isinstance(fields["policy"], TimeBasedConfig):
        fields["predicted_population_per_stage"] = (100_000,)
    fields.update(overrides)
    return RolloutPlan(**fields)


def power_policy(**overrides: Any) -> PowerBasedConfig:
    return PowerBasedConfig(**({"mde": 0.05, "stage_limits": (5000,)} | overrides))


def risk_policy(**overrides: Any) -> RiskBasedConfig:
    return RiskBasedConfig(**({"C": 500.0, "R": 0.1} | overrides))


def make_accumulator(
    ctrl: Sequence[Sequence[float]], trt: Sequence[Sequence[float]]
) -> PartitionedAccumulator:
    """Accumulator from per-partition value lists of each group."""
    if len(ctrl) != len(trt):
        raise ValueError("ctrl and trt need the same number of partitions")
    acc = PartitionedAccumulator(partitions=len(ctrl))
    for group, cells in ((CTRL, ctrl), (TRT, trt)):
        for r, values in enumerate(cells):
            for value in values:
                acc.add(group, r, value)
    return acc


def bernoulli_accumulator(
    n_per_group: int,
    p_ctrl: float,
    p_trt: float,
    partitions: int = 10,
    seed: int = 0,
) -> PartitionedAccumulator:
    """Accumulator filled with independent Bernoulli draws, spread evenly."""
    rng = np.random.default_rng(seed)
    acc = PartitionedAccumulator(partitions=partitions)
    for group, p in ((CTRL, p_ctrl), (TRT, p_trt)):
        values = (rng.random(n_per_group) < p).astype(np.float64)
        acc.add_batch(
            np.full(n_per_group, group),
            np.arange(n_per_group) % partitions,
            values,
        )
    return acc


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def time_plan() -> RolloutPlan:
    return make_plan()


@pytest.fixture
def power_plan() -> RolloutPlan:
    return make_plan(power_policy())


@pytest.fixture
def risk_plan() -> RolloutPlan:
    return make_plan(risk_policy())
