"""Unit tests for the snapshot module."""

import json
from pathlib import Path

import numpy as np
import pytest

from rampwatch import snapshot
from rampwatch.controller import MetricSpec, RolloutPlan, RolloutState, start, step_batch
from rampwatch.snapshot import SCHEMA_VERSION, SnapshotError
from tests.conftest import make_plan
from tests.unit.test_controller import harmful_batch, make_batch

METRICS = (
    MetricSpec("login_success"),
    MetricSpec("checkout_success"),
    MetricSpec("latency_ms", kind="continuous", harmful_direction="increase", reference_var=900.0),
)


@pytest.fixture
def plan() -> RolloutPlan:
    return make_plan(metrics=METRICS)


@pytest.fixture
def mid_rollout(plan: RolloutPlan) -> RolloutState:
    """Three metrics, 30 hours in, with outcomes and one metric without a verdict."""
    rng = np.random.default_rng(0)
    state = start(plan)
    for hour in range(30):
        # Identical arms: estimates and intervals without any significant result
        values = (rng.random(200) < 0.7).astype(float)
        batch = {"login_success": make_batch(values, values)}
        if hour % 2:
            latency = rng.normal(300, 30, 100)
            batch["latency_ms"] = make_batch(latency, latency)
        state, _ = step_batch(plan, state, batch)
    return state


# ============================================================================
# Test round trips
# ============================================================================


class TestRoundTrip:
    """Tests for restore(snapshot(state)) == state."""

    def test_fresh_state(self, plan: RolloutPlan) -> None:
        state = start(plan)
        assert snapshot.restore(snapshot.snapshot(state, plan), plan) == state

    def test_mid_rollout_three_metrics(self, plan: RolloutPlan, mid_rollout: RolloutState) -> None:
        restored = snapshot.loads(snapshot.dumps(mid_rollout, plan), plan)
        assert restored == mid_rollout
        assert restored.stage == 1
        outcomes = restored.decision_log[-1].outcomes
        assert outcomes["checkout_success"] is None
        assert outcomes["login_success"] is not None

    def test_terminal_state(self, plan: RolloutPlan) -> None:
        state, _ = step_batch(plan, start(plan), {"login_success": harmful_batch()})
        restored = snapshot.loads(snapshot.dumps(state))
        assert restored.status == "reverted"
        assert restored == state

    def test_save_and_load(
        self, tmp_path: Path, plan: RolloutPlan, mid_rollout: RolloutState
    ) -> None:
        path = tmp_path / "state" / "rollout.json"
        snapshot.save(path, mid_rollout, plan)
        assert path.exists()
        assert not path.with_suffix(".json.tmp").exists()
        assert snapshot.load(path, plan) == mid_rollout

    def test_load_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError, match="Snapshot not found"):
            snapshot.load(tmp_path / "missing.json")


# ============================================================================
# Test malformed documents
# ============================================================================


class TestMalformed:
    """Tests for parse errors with locations."""

    def test_truncated_document(self, plan: RolloutPlan) -> None:
        text = snapshot.dumps(start(plan), plan)
        with pytest.raises(SnapshotError) as exc:
            snapshot.loads(text[: len(text) // 2], plan)
        assert exc.value.location.startswith("line ")

    def test_missing_field(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        del document["state"]["cum_trt_n"]
        with pytest.raises(SnapshotError) as exc:
            snapshot.restore(document)
        assert exc.value.location == "$.state.cum_trt_n"

    def test_wrong_type(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        document["state"]["elapsed_hours"] = "12"
        with pytest.raises(SnapshotError, match=r"\$\.state\.elapsed_hours"):
            snapshot.restore(document)

    def test_boolean_is_not_a_number(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        document["state"]["stage"] = True
        with pytest.raises(SnapshotError, match="unexpected boolean"):
            snapshot.restore(document)

    def test_nested_location(self, plan: RolloutPlan, mid_rollout: RolloutState) -> None:
        document = json.loads(snapshot.dumps(mid_rollout, plan))
        del document["state"]["decision_log"][3]["decision"]["reason"]
        with pytest.raises(SnapshotError) as exc:
            snapshot.restore(document)
        assert exc.value.location == "$.state.decision_log[3].decision.reason"

    def test_bad_accumulator_shape(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        document["state"]["accumulators"]["login_success"]["sums"] = [[0.0]]
        with pytest.raises(SnapshotError, match="accumulators.login_success"):
            snapshot.restore(document)

    def test_unknown_status(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        document["state"]["status"] = "paused"
        with pytest.raises(SnapshotError, match="unknown status"):
            snapshot.restore(document)

    def test_unsupported_version(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        document["schema_version"] = SCHEMA_VERSION + 1
        with pytest.raises(SnapshotError, match="unsupported version"):
            snapshot.restore(document)

    def test_not_an_object(self) -> None:
        with pytest.raises(SnapshotError, match="expected an object"):
            snapshot.loads("[]")


# ============================================================================
# Test plan hash
# ============================================================================


class TestPlanHash:
    """Tests for binding a snapshot to its plan."""

    def test_hash_is_stable(self, plan: RolloutPlan) -> None:
        assert snapshot.plan_hash(plan) == snapshot.plan_hash(RolloutPlan.from_dict(plan.to_dict()))

    def test_other_plan_rejected(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan), plan)
        other = make_plan(metrics=METRICS, check_interval=2)
        with pytest.raises(SnapshotError, match="different plan"):
            snapshot.restore(document, other)

    def test_no_plan_skips_check(self, plan: RolloutPlan) -> None:
        document = snapshot.snapshot(start(plan))
        assert document["plan_hash"] is None
        snapshot.restore(document, make_plan(metrics=METRICS, check_interval=2))
