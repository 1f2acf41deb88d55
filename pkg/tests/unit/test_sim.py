"""Unit tests for the sim module."""

import io
import json
from pathlib import Path

import numpy as np
import pytest

from rampwatch.controller import MetricSpec, RolloutPlan
from rampwatch.rampup import default_cost_tolerance
from rampwatch.sim import (
    MIN_SUPPORT,
    EffectModel,
    PopulationModel,
    ReplicationResult,
    cost_tolerance,
    generate_stream,
    record_stream,
    replication_seeds,
    run_experiment,
    run_replication,
    run_replications,
    summarize,
    unit_id,
)
from rampwatch.stats import InvalidConfigError
from tests.conftest import make_plan, risk_policy

NO_EFFECT = EffectModel()
STRONG_DECREASE = EffectModel(kind="gamma_relative", shape=6.25, scale=0.04)


def result(
    outcome: str = "fully_rolled_out",
    hour: int | None = 96,
    trajectory: tuple[float, ...] = (0.01, 0.05, 0.2, 0.5, 1.0),
    n: int = 1000,
    loss: float = 0.0,
    exceeded: bool = False,
) -> ReplicationResult:
    return ReplicationResult(
        seed=0,
        outcome=outcome,  # type: ignore[arg-type]
        hour=hour,
        trajectory=trajectory,
        sample_size_used=n,
        total_loss=loss,
        loss_exceeded_C=exceeded,
    )


# ============================================================================
# Test models
# ============================================================================


class TestPopulationModel:
    """Tests for the population model."""

    def test_means(self) -> None:
        assert PopulationModel().mean == pytest.approx(0.7)
        assert PopulationModel(kind="iid_bernoulli", p=0.4).mean == 0.4

    @pytest.mark.parametrize(
        "overrides",
        [
            {"kind": "poisson"},
            {"p": 1.5},
            {"sessions_per_hour": -1.0},
            {"users": -5},
            {"beta_a": 0.0},
            {"horizon_hours": 0},
        ],
    )
    def test_invalid(self, overrides: dict) -> None:
        with pytest.raises(InvalidConfigError, match="population"):
            PopulationModel(**overrides).validate()

    def test_unknown_field(self) -> None:
        with pytest.raises(InvalidConfigError, match="population"):
            PopulationModel.from_dict({"userz": 10})


class TestEffectModel:
    """Tests for per-unit effects."""

    def test_no_effect_is_zero(self) -> None:
        draws = NO_EFFECT.draw(np.random.default_rng(0), 100)
        assert (draws == 0).all()

    def test_gamma_decrease(self) -> None:
        """Mean shape * scale = 5 %, all negative."""
        effect = EffectModel(kind="gamma_relative")
        draws = effect.draw(np.random.default_rng(0), 100_000)
        assert (draws < 0).all()
        assert draws.mean() == pytest.approx(-0.05, rel=0.01)
        assert draws.std() == pytest.approx(0.02, rel=0.02)

    def test_gamma_increase(self) -> None:
        effect = EffectModel(kind="gamma_relative", direction="increase")
        assert (effect.draw(np.random.default_rng(0), 1000) > 0).all()

    def test_from_dict_defaults(self) -> None:
        assert EffectModel.from_dict(None) == NO_EFFECT

    def test_invalid(self) -> None:
        with pytest.raises(InvalidConfigError, match="effect"):
            EffectModel(kind="gamma_relative", shape=0.0).validate()


# ============================================================================
# Test generate_stream
# ============================================================================


class TestGenerateStream:
    """Tests for synthetic session streams."""

    def test_deterministic(self) -> None:
        pop = PopulationModel(horizon_hours=5)
        a = list(generate_stream(pop, STRONG_DECREASE, seed=3))
        b = list(generate_stream(pop, STRONG_DECREASE, seed=3))
        for x, y in zip(a, b, strict=True):
            np.testing.assert_array_equal(x.units, y.units)
            np.testing.assert_array_equal(x.value_trt, y.value_trt)

    def test_horizon_and_rate(self) -> None:
        """2000 users at 0.4 sessions an hour: about 800 sessions per hour."""
        hours = list(generate_stream(PopulationModel(horizon_hours=24), NO_EFFECT, seed=1))
        assert [h.hour for h in hours] == list(range(24))
        per_hour = np.mean([h.units.size for h in hours])
        assert per_hour == pytest.approx(800, rel=0.05)
        assert all(h.units.max() < 2000 for h in hours)

    def test_no_effect_outcomes_coincide(self) -> None:
        for hour in generate_stream(PopulationModel(horizon_hours=3), NO_EFFECT, seed=2):
            np.testing.assert_array_equal(hour.value_ctrl, hour.value_trt)
            assert (hour.true_effect == 0).all()

    def test_common_random_numbers(self) -> None:
        """A decrease can only turn a success into a failure."""
        for hour in generate_stream(PopulationModel(horizon_hours=3), STRONG_DECREASE, seed=2):
            assert (hour.value_trt <= hour.value_ctrl).all()
            assert (hour.true_effect <= 0).all()

    def test_iid_units_are_fresh(self) -> None:
        pop = PopulationModel(kind="iid_bernoulli", sessions_per_hour=50, horizon_hours=4)
        units = np.concatenate([h.units for h in generate_stream(pop, NO_EFFECT, seed=0)])
        assert len(np.unique(units)) == len(units)

    def test_clustered_success_rate(self) -> None:
        values = np.concatenate(
            [h.value_ctrl for h in generate_stream(PopulationModel(horizon_hours=48), NO_EFFECT, 4)]
        )
        assert values.mean() == pytest.approx(0.7, abs=0.03)


class TestReplicationSeeds:
    """Tests for replication seed derivation."""

    def test_stable_and_distinct(self) -> None:
        seeds = replication_seeds(42, 50)
        assert seeds == replication_seeds(42, 50)
        assert len(set(seeds)) == 50

    def test_prefix_stable(self) -> None:
        """Adding replications keeps the earlier seeds."""
        assert replication_seeds(42, 60)[:50] == replication_seeds(42, 50)


# ============================================================================
# Test run_replication
# ============================================================================


class TestRunReplication:
    """Tests for driving one rollout over a stream."""

    def test_aa_has_no_loss(self, time_plan: RolloutPlan) -> None:
        res = run_replication(time_plan, PopulationModel(), NO_EFFECT, seed=5)
        assert res.total_loss == 0.0
        assert not res.loss_exceeded_C
        assert res.outcome in ("fully_rolled_out", "detected")
        if res.outcome == "fully_rolled_out":
            # The last stage opens at hour 72; the power gate decides when it ends
            assert res.trajectory == (0.01, 0.05, 0.2, 0.5, 1.0)
            assert res.hour is not None and 72 < res.hour <= 168

    def test_strong_degradation_detected(self, time_plan: RolloutPlan) -> None:
        res = run_replication(time_plan, PopulationModel(), STRONG_DECREASE, seed=5)
        assert res.outcome == "detected"
        assert res.hour is not None and res.hour <= 96
        assert res.total_loss > 0
        assert res.trajectory[-1] < 1.0

    def test_censored_at_horizon(self, time_plan: RolloutPlan) -> None:
        res = run_replication(time_plan, PopulationModel(horizon_hours=30), NO_EFFECT, seed=5)
        if res.outcome == "censored":
            assert res.hour is None
            assert res.trajectory == (0.01, 0.05)

    def test_events_out_matches_sample_size(self, time_plan: RolloutPlan) -> None:
        out = io.StringIO()
        res = run_replication(
            time_plan, PopulationModel(horizon_hours=12), NO_EFFECT, seed=1, events_out=out
        )
        lines = out.getvalue().splitlines()
        assert len(lines) == res.sample_size_used
        record = json.loads(lines[0])
        assert set(record) == {"hour", "unit_id", "group", "metric", "value"}
        assert record["metric"] == "login_success"
        assert record["group"] in ("ctrl", "trt")

    def test_loss_sums_treated_effects(self, time_plan: RolloutPlan) -> None:
        """Total loss is the harm over exactly the sessions served the treatment."""
        pop = PopulationModel(kind="iid_bernoulli", horizon_hours=30)
        out = io.StringIO()
        res = run_replication(time_plan, pop, STRONG_DECREASE, seed=3, events_out=out)
        effects = {}
        for sessions in generate_stream(pop, STRONG_DECREASE, seed=3):
            for unit, effect in zip(
                sessions.units.tolist(), sessions.true_effect.tolist(), strict=True
            ):
                effects[unit_id(unit)] = effect
        treated = [
            record["unit_id"]
            for record in map(json.loads, out.getvalue().splitlines())
            if record["group"] == "trt"
        ]
        expected = sum(max(-effects[u], 0.0) for u in treated)
        assert treated
        assert expected > 0
        assert res.total_loss == pytest.approx(expected, rel=1e-9)

    def test_requires_single_metric(self) -> None:
        plan = make_plan(metrics=(MetricSpec("a"), MetricSpec("b")))
        with pytest.raises(InvalidConfigError, match="exactly one metric"):
            run_replication(plan, PopulationModel(horizon_hours=1), NO_EFFECT, seed=0)

    def test_record_stream(self, tmp_path: Path, time_plan: RolloutPlan) -> None:
        path = tmp_path / "streams" / "events.jsonl"
        res = record_stream(time_plan, PopulationModel(horizon_hours=6), NO_EFFECT, 0, path)
        assert len(path.read_text().splitlines()) == res.sample_size_used

    def test_replications_are_reproducible(self, time_plan: RolloutPlan) -> None:
        pop = PopulationModel(horizon_hours=30)
        first = run_replications(time_plan, pop, NO_EFFECT, replications=3, seed=9)
        second = run_replications(time_plan, pop, NO_EFFECT, replications=3, seed=9)
        assert first == second
        assert [r.seed for r in first] == replication_seeds(9, 3)

    def test_zero_replications_rejected(self, time_plan: RolloutPlan) -> None:
        with pytest.raises(InvalidConfigError):
            run_replications(time_plan, PopulationModel(), NO_EFFECT, replications=0)


# ============================================================================
# Test aggregation
# ============================================================================


class TestSummarize:
    """Tests for folding replications into a report."""

    def test_rates(self) -> None:
        results = [result("detected", 30, (0.01, 0.05), loss=400, exceeded=True)] + [
            result() for _ in range(9)
        ]
        report = summarize(results, scenario="ab", policy="time", c=236.0)
        assert report.replications == 10
        assert report.positive_rate == pytest.approx(0.1)
        assert report.censored_rate == 0.0
        assert report.pct_exceeding_C == pytest.approx(0.1)
        assert report.avg_total_loss == pytest.approx(40.0)
        assert report.cost_tolerance == 236.0

    def test_small_subsets_are_na(self) -> None:
        results = [result("detected", 30, n=500)] * (MIN_SUPPORT - 1) + [result()] * MIN_SUPPORT
        report = summarize(results)
        assert report.avg_time_before_detection_h is None
        assert report.avg_sample_size_detection is None
        assert report.avg_time_before_full_rollout_h == 96
        assert report.avg_sample_size_full == 1000

    def test_weighted_rollout_per_stage(self) -> None:
        """Stage i averages over the replications that reached it."""
        results = [
            result(trajectory=(0.01, 0.05, 1.0)),
            result("detected", 20, (0.01,)),
            result("censored", None, (0.01, 0.03)),
        ]
        report = summarize(results)
        assert report.weighted_avg_rollout_pct == pytest.approx([0.01, 0.04, 1.0])
        assert report.censored_rate == pytest.approx(1 / 3)

    def test_empty_rejected(self) -> None:
        with pytest.raises(InvalidConfigError, match="zero replications"):
            summarize([])

    def test_dict_form(self) -> None:
        res = result()
        assert ReplicationResult.from_dict(json.loads(json.dumps(res.to_dict()))) == res


class TestCostTolerance:
    """Tests for the C attached to every scenario."""

    def test_risk_plan_uses_its_c(self) -> None:
        assert cost_tolerance(make_plan(risk_policy(C=123.0))) == 123.0

    def test_other_plans_use_default(self, time_plan: RolloutPlan) -> None:
        assert cost_tolerance(time_plan) == pytest.approx(
            default_cost_tolerance(0.05, 0.05, 0.1, 0.21, 0.21)
        )


class TestRunExperiment:
    """Tests for the in-process experiment."""

    def test_report(self, time_plan: RolloutPlan) -> None:
        report = run_experiment(
            time_plan, PopulationModel(horizon_hours=12), NO_EFFECT, replications=2, scenario="aa"
        )
        assert report.scenario == "aa"
        assert report.policy == "time"
        assert report.replications == 2
        assert report.censored_rate == 1.0
        assert report.avg_time_before_full_rollout_h is None
