"""Synthetic session streams and the A/A, A/B replication harness."""

import json
import logging
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Any, Literal

import numpy as np

from .accumulator import CTRL, TRT, partition_of, unit_bucket
from .controller import (
    TREATMENT,
    UNTREATED,
    MetricBatch,
    RolloutPlan,
    assign_buckets,
    start,
    step_batch,
)
from .rampup import RiskBasedConfig, default_cost_tolerance
from .stats import InvalidConfigError

logger = logging.getLogger(__name__)

PopulationKind = Literal["iid_bernoulli", "clustered"]
EffectKind = Literal["none", "gamma_relative"]
Outcome = Literal["detected", "fully_rolled_out", "censored"]

# Subsets smaller than this are reported as NA
MIN_SUPPORT = 5


################################################################################
# Models
################################################################################


@dataclass(frozen=True)
class PopulationModel:
    """Who shows up each hour and what their success probability is.

    ``iid_bernoulli``: a Poisson(sessions_per_hour) number of fresh units per
    hour, each with a single Bernoulli(p) session. ``clustered``: a fixed pool of
    users with Beta(beta_a, beta_b) success probabilities and
    Poisson(sessions_per_user_hour) sessions per user and hour.
    """

    kind: PopulationKind = "clustered"
    p: float = 0.7
    sessions_per_hour: float = 800.0
    users: int = 2000
    beta_a: float = 7.0
    beta_b: float = 3.0
    sessions_per_user_hour: float = 0.4
    horizon_hours: int = 168

    @property
    def mean(self) -> float:
        if self.kind == "iid_bernoulli":
            return self.p
        return self.beta_a / (self.beta_a + self.beta_b)

    def validate(self) -> None:
        if self.kind not in ("iid_bernoulli", "clustered"):
            raise InvalidConfigError(f"population.kind: unknown kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidConfigError(f"population.p must be in [0, 1], got {self.p}")
        if self.sessions_per_hour < 0 or self.sessions_per_user_hour < 0:
            raise InvalidConfigError("population session rates must be >= 0")
        if self.users < 0:
            raise InvalidConfigError("population.users must be >= 0")
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise InvalidConfigError("population.beta_a and beta_b must be > 0")
        if self.horizon_hours < 1:
            raise InvalidConfigError("population.horizon_hours must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PopulationModel":
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidConfigError(f"population: {e}") from e


@dataclass(frozen=True)
class EffectModel:
    """Per-unit relative treatment effect."""

    kind: EffectKind = "none"
    shape: float = 6.25
    scale: float = 0.008
    direction: Literal["decrease", "increase"] = "decrease"

    def validate(self) -> None:
        if self.kind not in ("none", "gamma_relative"):
            raise InvalidConfigError(f"effect.kind: unknown kind {self.kind!r}")
        if self.shape <= 0 or self.scale <= 0:
            raise InvalidConfigError("effect.shape and effect.scale must be > 0")
        if self.direction not in ("decrease", "increase"):
            raise InvalidConfigError("effect.direction must be decrease or increase")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Signed relative effects, one per unit."""
        if self.kind == "none":
            return np.zeros(size)
        sign = -1.0 if self.direction == "decrease" else 1.0
        return sign * rng.gamma(self.shape, self.scale, size=size)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "EffectModel":
        try:
            return cls(**(data or {}))
        except TypeError as e:
            raise InvalidConfigError(f"effect: {e}") from e


@dataclass(frozen=True)
class HourSessions:
    """One hour of simulated sessions, one row per session."""

    hour: int
    units: np.ndarray
    value_ctrl: np.ndarray
    value_trt: np.ndarray
    # Treatment minus control success probability of the session's unit
    true_effect: np.ndarray


@dataclass(frozen=True)
class ReplicationResult:
    seed: int
    outcome: Outcome
    hour: int | None
    trajectory: tuple[float, ...]
    sample_size_used: int
    total_loss: float
    loss_exceeded_C: bool  # noqa: N815

    def to_dict(self) -> dict[str, Any]:
        return asdict(self) | {"trajectory": list(self.trajectory)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReplicationResult":
        return cls(**(data | {"trajectory": tuple(data["trajectory"])}))


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregate of a scenario's replications; None marks NA."""

    scenario: str
    policy: str
    replications: int
    positive_rate: float
    censored_rate: float
    avg_time_before_detection_h: float | None
    avg_time_before_full_rollout_h: float | None
    weighted_avg_rollout_pct: list[float] = field(default_factory=list)
    avg_sample_size_detection: float | None = None
    avg_sample_size_full: float | None = None
    avg_total_loss: float = 0.0
    pct_exceeding_C: float = 0.0  # noqa: N815
    cost_tolerance: float = 0.0


def unit_id(index: int) -> str:
    return f"u{index}"


def replication_seeds(seed: int, replications: int) -> list[int]:
    """Independent child seeds, stable for a given (seed, replications)."""
    children = np.random.SeedSequence(seed).spawn(replications)
    return [int(child.generate_state(1)[0]) for child in children]


################################################################################
# Stream generation
################################################################################


def generate_stream(
    pop: PopulationModel, effect: EffectModel, seed: int
) -> Iterator[HourSessions]:
    """Hourly sessions with both potential outcomes.

    Control and treatment outcomes share one uniform draw per session, so a
    session's two outcomes differ only through the unit's effect.
    """
    pop.validate()
    effect.validate()
    rng = np.random.default_rng(seed)

    if pop.kind == "clustered":
        q = rng.beta(pop.beta_a, pop.beta_b, size=pop.users)
        q_trt = np.clip(q * (1.0 + effect.draw(rng, pop.users)), 0.0, 1.0)
        for hour in range(pop.horizon_hours):
            counts = rng.poisson(pop.sessions_per_user_hour, size=pop.users)
            units = np.repeat(np.arange(pop.users), counts)
            u = rng.random(units.size)
            yield HourSessions(
                hour=hour,
                units=units,
                value_ctrl=(u < q[units]).astype(np.float64),
                value_trt=(u < q_trt[units]).astype(np.float64),
                true_effect=q_trt[units] - q[units],
            )
        return

    next_unit = 0
    for hour in range(pop.horizon_hours):
        n = int(rng.poisson(pop.sessions_per_hour))
        units = np.arange(next_unit, next_unit + n)
        next_unit += n
        q_trt = np.clip(pop.p * (1.0 + effect.draw(rng, n)), 0.0, 1.0)
        u = rng.random(n)
        yield HourSessions(
            hour=hour,
            units=units,
            value_ctrl=(u < pop.p).astype(np.float64),
            value_trt=(u < q_trt).astype(np.float64),
            true_effect=q_trt - pop.p,
        )


class _UnitHashes:
    """Assignment buckets and partitions per unit index, filled on demand."""

    def __init__(self, plan: RolloutPlan) -> None:
        self._plan = plan
        self.buckets = np.empty(0, dtype=np.float64)
        self.partitions = np.empty(0, dtype=np.int64)

    def lookup(self, units: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        needed = int(units.max()) + 1 if units.size else 0
        known = len(self.buckets)
        if needed > known:
            ids = [unit_id(i) for i in range(known, needed)]
            plan = self._plan
            self.buckets = np.concatenate(
                [self.buckets, [unit_bucket(plan.assignment_salt, u) for u in ids]]
            )
            self.partitions = np.concatenate(
                [
                    self.partitions,
                    np.asarray(
                        [partition_of(plan.partition_salt, u, plan.partitions) for u in ids],
                        dtype=np.int64,
                    ),
                ]
            )
        return self.buckets[units], self.partitions[units]


def cost_tolerance(plan: RolloutPlan) -> float:
    """C of a risk plan; for other policies the default a risk plan would use."""
    if isinstance(plan.policy, RiskBasedConfig):
        return plan.policy.C
    metric = plan.metrics[0]
    return default_cost_tolerance(
        metric.mde,
        plan.test.alpha,
        plan.power_gate.beta,
        metric.reference_var,
        metric.reference_var,
    )


################################################################################
# Replications
################################################################################


def _write_events(
    out: IO[str], metric: str, hour: int, units: np.ndarray, codes: np.ndarray, values: np.ndarray
) -> None:
    for unit, code, value in zip(units.tolist(), codes.tolist(), values.tolist(), strict=True):
        record = {
            "hour": hour,
            "unit_id": unit_id(unit),
            "group": "trt" if code == TRT else "ctrl",
            "metric": metric,
            "value": value,
        }
        out.write(json.dumps(record) + "\n")


def run_replication(
    plan: RolloutPlan,
    pop: PopulationModel,
    effect: EffectModel,
    seed: int,
    events_out: IO[str] | None = None,
) -> ReplicationResult:
    """Drive one rollout hour by hour over a generated stream.

    ``plan`` is used as given, salts included. When ``events_out`` is set, every
    observation the controller consumes is written to it as a JSON line.
    """
    if len(plan.metrics) != 1:
        raise InvalidConfigError("simulation drives exactly one metric")
    metric = plan.metrics[0]
    harm_sign = -1.0 if metric.harmful_direction == "decrease" else 1.0
    hashes = _UnitHashes(plan)

    state = start(plan)
    trajectory = [state.treatment_pct]
    loss = 0.0
    outcome: Outcome = "censored"
    hour: int | None = None

    for sessions in generate_stream(pop, effect, seed):
        buckets, partitions = hashes.lookup(sessions.units)
        codes = assign_buckets(buckets, state.treatment_pct)
        treated = codes == TREATMENT
        loss += float(np.maximum(harm_sign * sessions.true_effect[treated], 0.0).sum())

        exposed = codes != UNTREATED
        values = np.where(treated, sessions.value_trt, sessions.value_ctrl)[exposed]
        groups = codes[exposed].astype(np.int64)
        if events_out is not None:
            _write_events(
                events_out, metric.name, sessions.hour, sessions.units[exposed], groups, values
            )
        batch = {metric.name: MetricBatch(groups, partitions[exposed], values)}
        state, decision = step_batch(plan, state, batch)

        match decision.kind:
            case "ramp":
                trajectory.append(decision.target_pct)
            case "revert":
                outcome, hour = "detected", state.elapsed_hours
                break
            case "complete":
                trajectory.append(1.0)
                outcome, hour = "fully_rolled_out", state.elapsed_hours
                break

    acc = state.accumulators[metric.name]
    c = cost_tolerance(plan)
    return ReplicationResult(
        seed=seed,
        outcome=outcome,
        hour=hour,
        trajectory=tuple(trajectory),
        sample_size_used=acc.count(CTRL) + acc.count(TRT),
        total_loss=loss,
        loss_exceeded_C=loss > c,
    )


def record_stream(
    plan: RolloutPlan, pop: PopulationModel, effect: EffectModel, seed: int, path: Path
) -> ReplicationResult:
    """Run one replication and save the events it consumed for ``rampwatch monitor``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        result = run_replication(plan, pop, effect, seed, events_out=f)
    logger.info(f"Recorded {result.outcome} stream (seed {seed}) to {path}")
    return result


def run_replications(
    plan: RolloutPlan,
    pop: PopulationModel,
    effect: EffectModel,
    replications: int = 200,
    seed: int = 0,
) -> list[ReplicationResult]:
    """Sequential replications; replication i uses ``plan.for_replication(i)``."""
    if replications < 1:
        raise InvalidConfigError(f"replications must be >= 1, got {replications}")
    return [
        run_replication(plan.for_replication(i), pop, effect, s)
        for i, s in enumerate(replication_seeds(seed, replications))
    ]


################################################################################
# Aggregation
################################################################################


def _mean_or_na(values: list[float]) -> float | None:
    return float(np.mean(values)) if len(values) >= MIN_SUPPORT else None


def summarize(
    results: list[ReplicationResult],
    scenario: str = "",
    policy: str = "",
    c: float = 0.0,
) -> EvaluationReport:
    """Fold replication results in order into one report; ``c`` is the cost tolerance."""
    if not results:
        raise InvalidConfigError("cannot summarize zero replications")
    detected = [r for r in results if r.outcome == "detected"]
    full = [r for r in results if r.outcome == "fully_rolled_out"]
    censored = [r for r in results if r.outcome == "censored"]

    # Mean percentage per stage index over the replications that reached it
    stages = max(len(r.trajectory) for r in results)
    weighted = [
        float(np.mean([r.trajectory[i] for r in results if len(r.trajectory) > i]))
        for i in range(stages)
    ]

    n = len(results)
    return EvaluationReport(
        scenario=scenario,
        policy=policy,
        replications=n,
        positive_rate=len(detected) / n,
        censored_rate=len(censored) / n,
        avg_time_before_detection_h=_mean_or_na([r.hour for r in detected]),
        avg_time_before_full_rollout_h=_mean_or_na([r.hour for r in full]),
        weighted_avg_rollout_pct=weighted,
        avg_sample_size_detection=_mean_or_na([r.sample_size_used for r in detected]),
        avg_sample_size_full=_mean_or_na([r.sample_size_used for r in full]),
        avg_total_loss=float(np.mean([r.total_loss for r in results])),
        pct_exceeding_C=sum(r.loss_exceeded_C for r in results) / n,
        cost_tolerance=c,
    )


def run_experiment(
    plan: RolloutPlan,
    pop: PopulationModel,
    effect: EffectModel,
    replications: int = 200,
    seed: int = 0,
    scenario: str = "",
) -> EvaluationReport:
    """In-process equivalent of ``rampwatch simulate`` for one scenario."""
    results = run_replications(plan, pop, effect, replications, seed)
    return summarize(
        results, scenario=scenario, policy=plan.policy.kind, c=cost_tolerance(plan)
    )
