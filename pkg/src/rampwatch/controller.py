"""Staged-rollout state machine.

One ``step`` per hour: ingest the hour's observations, run the sequential check
on every metric, then decide to stay, ramp, revert or complete. The state is a
plain value; ``step`` returns a new state and never mutates its input.
"""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Literal

import numpy as np

from .accumulator import (
    CTRL,
    DEFAULT_PARTITIONS,
    TRT,
    ObservationEvent,
    PartitionedAccumulator,
    group_index,
    partition_of,
    unit_bucket,
)
from .rampup import (
    MAX_RAMP_PCT,
    HarmfulDirection,
    PowerBasedConfig,
    RampPolicyConfig,
    RiskBasedConfig,
    TimeBasedConfig,
    clamp_percentage,
    default_cost_tolerance,
    n_to_pct,
    posterior_update,
    power_based_next,
    risk_based_max_n,
    time_based_next,
)
from .stats import (
    InsufficientDataError,
    InvalidConfigError,
    SequentialOutcome,
    SequentialTestConfig,
    VarianceMethod,
    estimate_power,
    estimate_variance,
    fixed_horizon_n,
    resolve_tau,
    sequential_check,
    with_alpha,
)

logger = logging.getLogger(__name__)

Status = Literal["running", "reverted", "completed"]
DecisionKind = Literal["stay", "ramp", "revert", "complete"]
Assignment = Literal["treatment", "control", "untreated"]
AlertAction = Literal["revert", "pause"]
MetricKind = Literal["proportion", "continuous"]

# Group codes returned by assign_buckets; control and treatment match accumulator rows
UNTREATED, CONTROL, TREATMENT = -1, CTRL, TRT

_ASSIGNMENT_NAMES: dict[int, Assignment] = {
    UNTREATED: "untreated",
    CONTROL: "control",
    TREATMENT: "treatment",
}


class RolloutError(Exception):
    """Base exception for rollout control."""

    pass


class RolloutStateError(RolloutError):
    """Raised when a step is not allowed for the current rollout state."""

    pass


################################################################################
# Plan
################################################################################


@dataclass(frozen=True)
class MetricSpec:
    """A monitored metric and the direction in which it regresses."""

    name: str
    kind: MetricKind = "proportion"
    harmful_direction: HarmfulDirection = "decrease"
    mde: float = 0.05
    # Per-observation variance assumed before any data arrives (tau, horizon)
    reference_var: float = 0.21

    def validate(self) -> None:
        if not self.name:
            raise InvalidConfigError("metric name must not be empty")
        if self.kind not in ("proportion", "continuous"):
            raise InvalidConfigError(f"metric {self.name}: unknown kind {self.kind!r}")
        if self.harmful_direction not in ("decrease", "increase"):
            raise InvalidConfigError(
                f"metric {self.name}: harmful_direction must be decrease or increase"
            )
        if self.mde <= 0:
            raise InvalidConfigError(f"metric {self.name}: mde must be > 0")
        if self.reference_var <= 0:
            raise InvalidConfigError(f"metric {self.name}: reference_var must be > 0")


@dataclass(frozen=True)
class PowerGate:
    """Power required before the final jump from 50 % to 100 %."""

    mde: float
    beta: float = 0.1

    def validate(self) -> None:
        if self.mde <= 0:
            raise InvalidConfigError(f"power_gate.mde must be > 0, got {self.mde}")
        if not 0.0 < self.beta < 1.0:
            raise InvalidConfigError(f"power_gate.beta must be in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class RolloutPlan:
    """Everything needed to run one feature's staged rollout."""

    feature_flag: str
    metrics: tuple[MetricSpec, ...]
    policy: RampPolicyConfig
    test: SequentialTestConfig = field(default_factory=SequentialTestConfig)
    variance: VarianceMethod = "jackknife"
    target_population: str = ""
    partitions: int = DEFAULT_PARTITIONS
    check_interval: int = 1
    stage_hours: int = 24
    initial_pct: float = 0.01
    power_gate: PowerGate = field(default_factory=lambda: PowerGate(mde=0.05))
    assignment_salt: str = "assignment"
    partition_salt: str = "partition"
    predicted_population_per_stage: tuple[int, ...] = ()
    on_alert: AlertAction = "revert"
    bonferroni: bool = False

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.metrics)

    def validate(self) -> None:
        """Raise InvalidConfigError (a ValueError) naming the offending field."""
        if not self.feature_flag:
            raise InvalidConfigError("feature_flag must not be empty")
        if not self.metrics:
            raise InvalidConfigError("at least one metric is required")
        for metric in self.metrics:
            metric.validate()
        if len(set(self.metric_names)) != len(self.metrics):
            raise InvalidConfigError(f"metric names must be unique: {self.metric_names}")
        self.policy.validate()
        self.test.validate()
        self.power_gate.validate()
        if self.variance not in ("naive", "jackknife"):
            raise InvalidConfigError(f"test.variance: unknown method {self.variance!r}")
        if self.partitions < 1 or (self.variance == "jackknife" and self.partitions < 2):
            raise InvalidConfigError(
                f"partitions must be >= 2 for jackknife variance, got {self.partitions}"
            )
        if self.check_interval < 1:
            raise InvalidConfigError("check_interval must be >= 1")
        if self.stage_hours < 1:
            raise InvalidConfigError("stage_hours must be >= 1")
        if not 0.0 < self.initial_pct <= MAX_RAMP_PCT:
            raise InvalidConfigError(
                f"initial_pct must be in (0, {MAX_RAMP_PCT}], got {self.initial_pct}"
            )
        if self.assignment_salt == self.partition_salt:
            raise InvalidConfigError("assignment_salt and partition_salt must differ")
        if self.on_alert not in ("revert", "pause"):
            raise InvalidConfigError(f"on_alert must be revert or pause, got {self.on_alert!r}")
        if not isinstance(self.policy, TimeBasedConfig):
            if not self.predicted_population_per_stage:
                raise InvalidConfigError(
                    "predicted_population_per_stage is required for power and risk policies"
                )
            if any(p <= 0 for p in self.predicted_population_per_stage):
                raise InvalidConfigError("predicted_population_per_stage must be > 0")

    def population_for(self, stage: int) -> int:
        """Predicted population of a stage; the last entry repeats."""
        populations = self.predicted_population_per_stage
        return populations[min(stage, len(populations) - 1)]

    def stage_duration(self, stage: int) -> int:
        if isinstance(self.policy, TimeBasedConfig):
            return self.policy.schedule[min(stage, len(self.policy.schedule) - 1)][0]
        return self.stage_hours

    def for_replication(self, index: int) -> "RolloutPlan":
        """Same plan with salts unique to one simulated replication."""
        return replace(
            self,
            assignment_salt=f"{self.assignment_salt}/{index}",
            partition_salt=f"{self.partition_salt}/{index}",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature_flag": self.feature_flag,
            "target_population": self.target_population,
            "metrics": [asdict(m) for m in self.metrics],
            "policy": _policy_to_dict(self.policy),
            "test": asdict(self.test) | {"variance": self.variance},
            "partitions": self.partitions,
            "check_interval": self.check_interval,
            "stage_hours": self.stage_hours,
            "initial_pct": self.initial_pct,
            "power_gate": asdict(self.power_gate),
            "assignment_salt": self.assignment_salt,
            "partition_salt": self.partition_salt,
            "predicted_population_per_stage": list(self.predicted_population_per_stage),
            "on_alert": self.on_alert,
            "bonferroni": self.bonferroni,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RolloutPlan":
        """Build a plan from its YAML/JSON form.

        ``policy.C`` may be omitted (or ``auto``) for the risk policy; it then
        defaults to the primary metric's mde times the sample size reaching the
        power gate's target power.
        """
        try:
            metrics = tuple(MetricSpec(**m) for m in data["metrics"])
            if not metrics:
                raise InvalidConfigError("at least one metric is required")
            test_data = dict(data.get("test") or {})
            variance = test_data.pop("variance", "jackknife")
            test = SequentialTestConfig(**test_data)
            gate = PowerGate(**(data.get("power_gate") or {"mde": metrics[0].mde}))
            policy = _policy_from_dict(dict(data["policy"]), metrics, gate, test.alpha)
            optional = {
                key: data[key]
                for key in (
                    "target_population",
                    "partitions",
                    "check_interval",
                    "stage_hours",
                    "initial_pct",
                    "assignment_salt",
                    "partition_salt",
                    "on_alert",
                    "bonferroni",
                )
                if key in data
            }
            if "predicted_population_per_stage" in data:
                optional["predicted_population_per_stage"] = tuple(
                    int(p) for p in data["predicted_population_per_stage"]
                )
            return cls(
                feature_flag=str(data["feature_flag"]),
                metrics=metrics,
                policy=policy,
                test=test,
                variance=variance,
                power_gate=gate,
                **optional,
            )
        except KeyError as e:
            raise InvalidConfigError(f"plan is missing required field {e}") from e
        except TypeError as e:
            raise InvalidConfigError(f"plan has an invalid field: {e}") from e


def _policy_to_dict(policy: RampPolicyConfig) -> dict[str, Any]:
    data = asdict(policy)
    if isinstance(policy, TimeBasedConfig):
        data["schedule"] = [list(stage) for stage in policy.schedule]
    if isinstance(policy, PowerBasedConfig):
        data["stage_limits"] = list(policy.stage_limits)
    return data


def _policy_from_dict(
    data: dict[str, Any],
    metrics: tuple[MetricSpec, ...],
    gate: PowerGate,
    alpha: float,
) -> RampPolicyConfig:
    kind = data.pop("kind", None)
    match kind:
        case "time":
            if "schedule" in data:
                data["schedule"] = tuple((int(h), float(p)) for h, p in data["schedule"])
            return TimeBasedConfig(**data)
        case "power":
            if "stage_limits" in data:
                data["stage_limits"] = tuple(int(x) for x in data["stage_limits"])
            data.setdefault("mde", metrics[0].mde)
            return PowerBasedConfig(**data)
        case "risk":
            if data.get("C") in (None, "auto"):
                primary = metrics[0]
                data["C"] = default_cost_tolerance(
                    primary.mde,
                    alpha,
                    gate.beta,
                    primary.reference_var,
                    primary.reference_var,
                )
            return RiskBasedConfig(**data)
        case _:
            raise InvalidConfigError(
                f"policy.kind must be time, power or risk, got {kind!r}"
            )


################################################################################
# State and decisions
################################################################################


@dataclass(frozen=True)
class Decision:
    """Exactly one per step."""

    kind: DecisionKind
    target_pct: float
    reason: str
    triggering_metric: str | None = None

    def __str__(self) -> str:
        metric = f" [{self.triggering_metric}]" if self.triggering_metric else ""
        return f"{self.kind.upper():8} {self.target_pct:7.2%}{metric} | {self.reason}"


@dataclass(frozen=True)
class LogEntry:
    """A decision with the per-metric outcomes it was based on."""

    hour: int
    decision: Decision
    # None marks a metric without a verdict (insufficient data); empty when no check ran
    outcomes: dict[str, SequentialOutcome | None] = field(default_factory=dict)


@dataclass
class RolloutState:
    stage: int
    treatment_pct: float
    accumulators: dict[str, PartitionedAccumulator]
    taus: dict[str, float]
    status: Status = "running"
    paused: bool = False
    cum_trt_n: int = 0
    elapsed_hours: int = 0
    hours_in_stage: int = 0
    decision_log: list[LogEntry] = field(default_factory=list)

    @property
    def control_pct(self) -> float:
        """Equal to treatment until full rollout, where the control group is gone."""
        return self.treatment_pct if self.treatment_pct <= MAX_RAMP_PCT else 0.0

    @property
    def is_terminal(self) -> bool:
        return self.status != "running"

    def copy(self) -> "RolloutState":
        return replace(
            self,
            accumulators={k: acc.copy() for k, acc in self.accumulators.items()},
            taus=dict(self.taus),
            decision_log=list(self.decision_log),
        )


@dataclass(frozen=True)
class MetricBatch:
    """Pre-hashed observations of one metric for one hour."""

    groups: np.ndarray
    partitions: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


HourBatch = Mapping[str, MetricBatch]


################################################################################
# Assignment
################################################################################


def assign_buckets(buckets: np.ndarray, pct: float) -> np.ndarray:
    """Group code per bucket: treatment below ``pct``, control at or above ``1 - pct``."""
    codes = np.full(np.shape(buckets), UNTREATED, dtype=np.int8)
    if pct <= MAX_RAMP_PCT:
        codes[np.asarray(buckets) >= 1.0 - pct] = CONTROL
    codes[np.asarray(buckets) < pct] = TREATMENT
    return codes


def assign(unit_id: str, plan: RolloutPlan, state: RolloutState) -> Assignment:
    bucket = unit_bucket(plan.assignment_salt, unit_id)
    code = int(assign_buckets(np.array([bucket]), state.treatment_pct)[0])
    return _ASSIGNMENT_NAMES[code]


################################################################################
# Lifecycle
################################################################################


def _initial_tau(plan: RolloutPlan, metric: MetricSpec) -> float:
    cfg = plan.test
    v = metric.reference_var
    if cfg.tau_policy != "fixed" and cfg.horizon_n is None:
        # Default horizon puts tau at mde^2 for mde_scaled
        cfg = replace(cfg, horizon_n=fixed_horizon_n(metric.mde, v, v, cfg.alpha))
    return resolve_tau(cfg, v, v, beta=plan.power_gate.beta)


def start(plan: RolloutPlan) -> RolloutState:
    """Validate the plan, fix tau for every metric and open the first stage."""
    plan.validate()
    if isinstance(plan.policy, TimeBasedConfig):
        pct = plan.policy.schedule[0][1]
    else:
        pct = plan.initial_pct
    taus = {m.name: _initial_tau(plan, m) for m in plan.metrics}
    logger.info(f"{plan.feature_flag}: rollout started at {pct:.2%} ({plan.policy.kind})")
    return RolloutState(
        stage=0,
        treatment_pct=pct,
        accumulators={m.name: PartitionedAccumulator(plan.partitions) for m in plan.metrics},
        taus=taus,
    )


def _ensure_running(plan: RolloutPlan, state: RolloutState) -> None:
    if state.is_terminal:
        raise RolloutStateError(
            f"{plan.feature_flag}: rollout is {state.status}, no further steps allowed"
        )


def _batch_from_events(
    plan: RolloutPlan, state: RolloutState, events: Iterable[ObservationEvent]
) -> dict[str, MetricBatch]:
    names = plan.metric_names
    rows: dict[str, tuple[list[int], list[int], list[float]]] = {
        name: ([], [], []) for name in names
    }
    dropped = 0
    for event in events:
        event.validate()
        if event.timestamp != state.elapsed_hours:
            raise RolloutStateError(
                f"event for hour {event.timestamp} delivered at hour {state.elapsed_hours}"
            )
        metric = event.metric or (names[0] if len(names) == 1 else "")
        if metric not in rows:
            raise RolloutStateError(f"Unknown metric: {event.metric!r}")
        group = group_index(event.group)
        if assign(event.unit_id, plan, state) != _ASSIGNMENT_NAMES[group]:
            dropped += 1
            continue
        groups, partitions, values = rows[metric]
        groups.append(group)
        partitions.append(partition_of(plan.partition_salt, event.unit_id, plan.partitions))
        values.append(event.value)
    if dropped:
        logger.warning(
            f"{plan.feature_flag}: dropped {dropped} events whose group disagrees "
            f"with the assignment at hour {state.elapsed_hours}"
        )
    return {
        name: MetricBatch(
            groups=np.asarray(g, dtype=np.int64),
            partitions=np.asarray(p, dtype=np.int64),
            values=np.asarray(v, dtype=np.float64),
        )
        for name, (g, p, v) in rows.items()
    }


def step(
    plan: RolloutPlan, state: RolloutState, hour_events: Iterable[ObservationEvent]
) -> tuple[RolloutState, Decision]:
    """Advance the rollout by one hour of raw events."""
    _ensure_running(plan, state)
    return step_batch(plan, state, _batch_from_events(plan, state, hour_events))


def step_batch(
    plan: RolloutPlan, state: RolloutState, batch: HourBatch
) -> tuple[RolloutState, Decision]:
    """Advance the rollout by one hour of pre-hashed observations."""
    _ensure_running(plan, state)
    unknown = set(batch) - set(plan.metric_names)
    if unknown:
        raise RolloutStateError(f"Unknown metrics: {sorted(unknown)}")

    new = state.copy()
    for name, rows in batch.items():
        new.accumulators[name].add_batch(rows.groups, rows.partitions, rows.values)
    new.cum_trt_n = new.accumulators[plan.metrics[0].name].count(TRT)
    hour = new.elapsed_hours
    new.elapsed_hours += 1
    new.hours_in_stage += 1

    outcomes: dict[str, SequentialOutcome | None] = {}
    if new.elapsed_hours % plan.check_interval == 0:
        outcomes = _run_checks(plan, new)
    decision = _decide(plan, new, outcomes)
    new.decision_log.append(LogEntry(hour=hour, decision=decision, outcomes=outcomes))
    return new, decision


################################################################################
# Decision logic
################################################################################


def check_alpha(plan: RolloutPlan) -> float:
    """Per-metric significance level, Bonferroni-adjusted when the plan asks for it."""
    if plan.bonferroni:
        return plan.test.alpha / len(plan.metrics)
    return plan.test.alpha


def _run_checks(
    plan: RolloutPlan, state: RolloutState
) -> dict[str, SequentialOutcome | None]:
    alpha = check_alpha(plan)
    outcomes: dict[str, SequentialOutcome | None] = {}
    for metric in plan.metrics:
        cfg = with_alpha(replace(plan.test, tau=state.taus[metric.name]), alpha)
        try:
            outcomes[metric.name] = sequential_check(
                state.accumulators[metric.name], cfg, plan.variance
            )
        except InsufficientDataError as e:
            logger.debug(f"No verdict for {metric.name} at hour {state.elapsed_hours}: {e}")
            outcomes[metric.name] = None
    return outcomes


def _first_harmful(
    plan: RolloutPlan, outcomes: Mapping[str, SequentialOutcome | None]
) -> tuple[MetricSpec, SequentialOutcome] | None:
    for metric in plan.metrics:
        outcome = outcomes.get(metric.name)
        if (
            outcome is not None
            and outcome.significant
            and outcome.direction == metric.harmful_direction
        ):
            return metric, outcome
    return None


def power_gate_passed(plan: RolloutPlan, state: RolloutState) -> bool:
    """True when every metric reaches the gate's power at the current sample size."""
    gate = plan.power_gate
    alpha = check_alpha(plan)
    for metric in plan.metrics:
        try:
            est = estimate_variance(state.accumulators[metric.name], plan.variance)
        except InsufficientDataError:
            return False
        power = estimate_power(
            min(est.n_ctrl, est.n_trt),
            gate.mde,
            est.effective_var_ctrl,
            est.effective_var_trt,
            alpha,
        )
        if power < 1.0 - gate.beta:
            return False
    return True


@dataclass(frozen=True)
class StageData:
    """What a ramp policy sees of one metric at a stage boundary."""

    mean_ctrl: float
    mean_trt: float
    v_ctrl: float
    v_trt: float
    n_ctrl: int
    n_trt: int
    source: str

    @property
    def delta_hat(self) -> float:
        return self.mean_trt - self.mean_ctrl

    @property
    def pooled_var(self) -> float:
        n = self.n_ctrl + self.n_trt
        if n == 0:
            return (self.v_ctrl + self.v_trt) / 2
        return (self.n_ctrl * self.v_ctrl + self.n_trt * self.v_trt) / n


def stage_data(plan: RolloutPlan, metric: MetricSpec, acc: PartitionedAccumulator) -> StageData:
    """Per-observation variances for sizing the next stage.

    Falls back from the plan's estimator to naive variance, then to the
    metric's ``reference_var``, so a stage can always be sized.
    """
    methods: list[VarianceMethod] = [plan.variance]
    if plan.variance != "naive":
        methods.append("naive")
    for method in methods:
        try:
            est = estimate_variance(acc, method)
        except InsufficientDataError as e:
            logger.debug(f"{metric.name}: no {method} variance for sizing: {e}")
            continue
        if est.effective_var_ctrl + est.effective_var_trt > 0:
            return StageData(
                mean_ctrl=acc.mean(CTRL),
                mean_trt=acc.mean(TRT),
                v_ctrl=est.effective_var_ctrl,
                v_trt=est.effective_var_trt,
                n_ctrl=est.n_ctrl,
                n_trt=est.n_trt,
                source=method,
            )
    v = metric.reference_var
    n_c, n_t = acc.count(CTRL), acc.count(TRT)
    if n_c and n_t:
        return StageData(acc.mean(CTRL), acc.mean(TRT), v, v, n_c, n_t, "reference")
    return StageData(0.0, 0.0, v, v, 0, 0, "reference")


def _fallback_note(plan: RolloutPlan, data: StageData, metric: MetricSpec) -> list[str]:
    if data.source == plan.variance:
        return []
    return [f"{metric.name} sized on {data.source} variance"]


def _recommend_power(
    plan: RolloutPlan, policy: PowerBasedConfig, state: RolloutState
) -> tuple[int | None, str, list[str]]:
    sizes: list[int] = []
    rationales: list[str] = []
    notes: list[str] = []
    for metric in plan.metrics:
        data = stage_data(plan, metric, state.accumulators[metric.name])
        notes += _fallback_note(plan, data, metric)
        rec = power_based_next(
            replace(policy, mde=metric.mde),
            data.delta_hat,
            data.v_ctrl,
            data.v_trt,
            state.stage,
            state.elapsed_hours,
        )
        if rec.next_treatment_n is None:
            return None, rec.rationale, []
        sizes.append(rec.next_treatment_n)
        rationales.append(rec.rationale)
    # Every metric must reach its power: the largest request wins
    i = max(range(len(sizes)), key=sizes.__getitem__)
    return sizes[i], rationales[i], notes


def _recommend_risk(
    plan: RolloutPlan, policy: RiskBasedConfig, state: RolloutState
) -> tuple[int | None, str, list[str]]:
    best: int | None = None
    notes: list[str] = []
    for metric in plan.metrics:
        acc = state.accumulators[metric.name]
        data = stage_data(plan, metric, acc)
        notes += _fallback_note(plan, data, metric)
        post = posterior_update(
            policy,
            data.mean_trt,
            data.mean_ctrl,
            data.pooled_var,
            min(data.n_ctrl, data.n_trt),
        )
        rec = risk_based_max_n(
            policy, post, acc.count(TRT), direction=metric.harmful_direction
        )
        if rec.next_treatment_n is not None:
            # Every metric must stay within its risk: the smallest bound wins
            best = rec.next_treatment_n if best is None else min(best, rec.next_treatment_n)
    return best, "risk_unbounded" if best is None else "risk_cap", notes


def _ramp(plan: RolloutPlan, state: RolloutState) -> Decision:
    current = state.treatment_pct
    policy = plan.policy

    if isinstance(policy, TimeBasedConfig):
        rec = time_based_next(policy, state.stage, state.hours_in_stage)
        target = rec.next_treatment_pct if rec.next_treatment_pct is not None else current
        if target >= 1.0:
            # Full rollout is the power gate's call
            if current >= MAX_RAMP_PCT:
                return Decision("stay", current, "schedule at 100%, awaiting power gate")
            target = MAX_RAMP_PCT
        if target <= current:
            return Decision("stay", current, "final scheduled stage")
        state.stage += 1
        state.hours_in_stage = 0
        state.treatment_pct = target
        logger.info(f"{plan.feature_flag}: ramp to {target:.2%} (time)")
        return Decision("ramp", target, "time")

    if isinstance(policy, PowerBasedConfig):
        n, rationale, notes = _recommend_power(plan, policy, state)
    else:
        n, rationale, notes = _recommend_risk(plan, policy, state)

    raw = None if n is None else n_to_pct(n, plan.population_for(state.stage + 1))
    target = clamp_percentage(current, raw)
    state.hours_in_stage = 0
    note = "".join(f"; {text}" for text in notes)
    if target <= current:
        return Decision("stay", current, f"{rationale}: holding at {current:.2%}{note}")
    state.stage += 1
    state.treatment_pct = target
    size = "unbounded" if n is None else f"n={n}"
    logger.info(f"{plan.feature_flag}: ramp to {target:.2%} ({rationale}, {size}{note})")
    return Decision("ramp", target, f"{rationale} ({size}){note}")


def _complete(plan: RolloutPlan, state: RolloutState, reason: str) -> Decision:
    state.treatment_pct = 1.0
    state.status = "completed"
    state.stage += 1
    logger.info(f"{plan.feature_flag}: complete at hour {state.elapsed_hours}: {reason}")
    return Decision("complete", 1.0, reason)


def _decide(
    plan: RolloutPlan,
    state: RolloutState,
    outcomes: Mapping[str, SequentialOutcome | None],
) -> Decision:
    current = state.treatment_pct

    if (harmful := _first_harmful(plan, outcomes)) is not None:
        metric, outcome = harmful
        reason = (
            f"significant {outcome.direction} of {outcome.delta_hat:+.4f} "
            f"(ci [{outcome.ci_low:+.4f}, {outcome.ci_high:+.4f}])"
        )
        if plan.on_alert == "revert":
            state.treatment_pct = 0.0
            state.status = "reverted"
            logger.info(
                f"{plan.feature_flag}: revert at hour {state.elapsed_hours} "
                f"on {metric.name}: {reason}"
            )
            return Decision("revert", 0.0, reason, metric.name)
        if not state.paused:
            state.paused = True
            logger.warning(
                f"{plan.feature_flag}: paused at {current:.2%} on {metric.name}: {reason}"
            )
        return Decision("stay", current, f"paused: {reason}", metric.name)

    if state.paused:
        return Decision("stay", current, "paused after alert")

    if current >= MAX_RAMP_PCT and power_gate_passed(plan, state):
        return _complete(plan, state, "power gate passed")

    if state.hours_in_stage < plan.stage_duration(state.stage):
        return Decision("stay", current, "within stage")
    return _ramp(plan, state)

