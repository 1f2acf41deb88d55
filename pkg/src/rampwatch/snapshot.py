"""JSON snapshots of a rollout's state."""

import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any

from .accumulator import PartitionedAccumulator
from .controller import Decision, LogEntry, RolloutPlan, RolloutState
from .stats import SequentialOutcome

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class SnapshotError(ValueError):
    """Raised for malformed snapshot documents."""

    def __init__(self, location: str, message: str) -> None:
        super().__init__(f"{location}: {message}")
        self.location = location


def plan_hash(plan: RolloutPlan) -> str:
    """sha256 of the plan's canonical JSON form."""
    canonical = json.dumps(plan.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


################################################################################
# Writing
################################################################################


def _entry_to_dict(entry: LogEntry) -> dict[str, Any]:
    return {
        "hour": entry.hour,
        "decision": asdict(entry.decision),
        "outcomes": {
            name: None if outcome is None else asdict(outcome)
            for name, outcome in entry.outcomes.items()
        },
    }


def snapshot(state: RolloutState, plan: RolloutPlan | None = None) -> dict[str, Any]:
    """Self-describing document for ``state``; includes the plan hash when given."""
    return {
        "schema_version": SCHEMA_VERSION,
        "plan_hash": plan_hash(plan) if plan is not None else None,
        "state": {
            "stage": state.stage,
            "treatment_pct": state.treatment_pct,
            "status": state.status,
            "paused": state.paused,
            "cum_trt_n": state.cum_trt_n,
            "elapsed_hours": state.elapsed_hours,
            "hours_in_stage": state.hours_in_stage,
            "taus": dict(state.taus),
            "accumulators": {
                name: acc.to_dict() for name, acc in state.accumulators.items()
            },
            "decision_log": [_entry_to_dict(e) for e in state.decision_log],
        },
    }


def dumps(state: RolloutState, plan: RolloutPlan | None = None) -> str:
    return json.dumps(snapshot(state, plan), indent=2)


def save(path: Path, state: RolloutState, plan: RolloutPlan | None = None) -> None:
    """Write the snapshot atomically (write then rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps(state, plan))
    tmp.replace(path)
    logger.debug(f"Snapshot written to {path} at hour {state.elapsed_hours}")


################################################################################
# Reading
################################################################################


def _get(data: Any, key: str, location: str) -> Any:
    if not isinstance(data, dict):
        raise SnapshotError(location, f"expected an object, got {type(data).__name__}")
    if key not in data:
        raise SnapshotError(f"{location}.{key}", "missing")
    return data[key]


def _typed(value: Any, kind: type | tuple[type, ...], location: str) -> Any:
    # bool is an int subclass; reject it where a number is expected
    if isinstance(value, bool) and bool not in (kind if isinstance(kind, tuple) else (kind,)):
        raise SnapshotError(location, "unexpected boolean")
    if not isinstance(value, kind):
        raise SnapshotError(location, f"unexpected type {type(value).__name__}")
    return value


def _number(data: Any, key: str, location: str) -> float:
    return float(_typed(_get(data, key, location), (int, float), f"{location}.{key}"))


def _integer(data: Any, key: str, location: str) -> int:
    return _typed(_get(data, key, location), int, f"{location}.{key}")


def _outcome(data: Any, location: str) -> SequentialOutcome | None:
    if data is None:
        return None
    return SequentialOutcome(
        delta_hat=_number(data, "delta_hat", location),
        V=_number(data, "V", location),
        ci_low=_number(data, "ci_low", location),
        ci_high=_number(data, "ci_high", location),
        significant=_typed(_get(data, "significant", location), bool, f"{location}.significant"),
        direction=_get(data, "direction", location),
        n_ctrl=_integer(data, "n_ctrl", location),
        n_trt=_integer(data, "n_trt", location),
    )


def _entry(data: Any, location: str) -> LogEntry:
    decision = _get(data, "decision", location)
    at = f"{location}.decision"
    outcomes = _typed(_get(data, "outcomes", location), dict, f"{location}.outcomes")
    return LogEntry(
        hour=_integer(data, "hour", location),
        decision=Decision(
            kind=_get(decision, "kind", at),
            target_pct=_number(decision, "target_pct", at),
            reason=_typed(_get(decision, "reason", at), str, f"{at}.reason"),
            triggering_metric=_get(decision, "triggering_metric", at),
        ),
        outcomes={
            name: _outcome(value, f"{location}.outcomes.{name}")
            for name, value in outcomes.items()
        },
    )


def _accumulator(data: Any, location: str) -> PartitionedAccumulator:
    for key in ("partitions", "sums", "sumsq", "counts"):
        _get(data, key, location)
    try:
        return PartitionedAccumulator.from_dict(data)
    except (TypeError, ValueError) as e:
        raise SnapshotError(location, str(e)) from e


def restore(document: Any, plan: RolloutPlan | None = None) -> RolloutState:
    """Inverse of ``snapshot``; checks the plan hash when a plan is given."""
    version = _get(document, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise SnapshotError("$.schema_version", f"unsupported version {version!r}")
    if plan is not None:
        stored = _get(document, "plan_hash", "$")
        if stored is not None and stored != plan_hash(plan):
            raise SnapshotError("$.plan_hash", "snapshot was taken under a different plan")

    state = _get(document, "state", "$")
    at = "$.state"
    status = _get(state, "status", at)
    if status not in ("running", "reverted", "completed"):
        raise SnapshotError(f"{at}.status", f"unknown status {status!r}")
    taus = _typed(_get(state, "taus", at), dict, f"{at}.taus")
    accumulators = _typed(_get(state, "accumulators", at), dict, f"{at}.accumulators")
    log = _typed(_get(state, "decision_log", at), list, f"{at}.decision_log")
    return RolloutState(
        stage=_integer(state, "stage", at),
        treatment_pct=_number(state, "treatment_pct", at),
        status=status,
        paused=_typed(_get(state, "paused", at), bool, f"{at}.paused"),
        cum_trt_n=_integer(state, "cum_trt_n", at),
        elapsed_hours=_integer(state, "elapsed_hours", at),
        hours_in_stage=_integer(state, "hours_in_stage", at),
        taus={
            name: float(_typed(value, (int, float), f"{at}.taus.{name}"))
            for name, value in taus.items()
        },
        accumulators={
            name: _accumulator(value, f"{at}.accumulators.{name}")
            for name, value in accumulators.items()
        },
        decision_log=[_entry(e, f"{at}.decision_log[{i}]") for i, e in enumerate(log)],
    )


def loads(text: str, plan: RolloutPlan | None = None) -> RolloutState:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SnapshotError(f"line {e.lineno} column {e.colno}", e.msg) from e
    return restore(document, plan)


def load(path: Path, plan: RolloutPlan | None = None) -> RolloutState:
    if not path.exists():
        raise FileNotFoundError(f"Snapshot not found: {path}")
    return loads(path.read_text(), plan)
