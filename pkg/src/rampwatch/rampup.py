"""Ramp-up policies: how far to open the next stage.

Every policy is a pure function of its inputs. Power- and risk-based policies
recommend a treatment sample size; ``n_to_pct`` and ``clamp_percentage`` turn
it into the next treatment percentage.
"""

import math
from dataclasses import dataclass, field
from typing import Literal

from scipy.stats import norm

from .stats import (
    InsufficientDataError,
    InvalidConfigError,
    PowerQuery,
    required_sample_size,
)

Rationale = Literal[
    "time",
    "power_mde",
    "power_observed",
    "stage_limit",
    "deadline",
    "risk_cap",
    "risk_unbounded",
]
HarmfulDirection = Literal["decrease", "increase"]
RiskDirection = Literal["decrease", "increase", "two_sided"]

# Largest percentage any adaptive policy may reach; the rest is the power gate's call
MAX_RAMP_PCT = 0.5


################################################################################
# Policy configurations
################################################################################


@dataclass(frozen=True)
class TimeBasedConfig:
    """Fixed schedule of (stage duration in hours, treatment percentage)."""

    schedule: tuple[tuple[int, float], ...] = (
        (24, 0.01),
        (24, 0.05),
        (24, 0.20),
        (24, 0.50),
        (24, 1.00),
    )
    kind: Literal["time"] = field(default="time", init=False)

    def validate(self) -> None:
        if not self.schedule:
            raise InvalidConfigError("schedule must not be empty")
        previous = 0.0
        for hours, pct in self.schedule:
            if hours < 1:
                raise InvalidConfigError(f"stage duration must be >= 1h, got {hours}")
            if not 0.0 < pct <= 1.0:
                raise InvalidConfigError(f"treatment_pct must be in (0, 1], got {pct}")
            if pct <= previous:
                raise InvalidConfigError("treatment_pct must strictly increase")
            if pct > MAX_RAMP_PCT and pct != 1.0:
                raise InvalidConfigError(
                    f"treatment_pct above {MAX_RAMP_PCT} must be 1.0, got {pct}"
                )
            previous = pct


@dataclass(frozen=True)
class PowerBasedConfig:
    """Size each stage to reach power against the MDE."""

    mde: float
    alpha: float = 0.05
    beta: float = 0.1
    stage_limits: tuple[int, ...] = (1_000_000,)
    deadline_hours: int = 168
    kind: Literal["power"] = field(default="power", init=False)

    def validate(self) -> None:
        if self.mde <= 0:
            raise InvalidConfigError(f"mde must be > 0, got {self.mde}")
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.beta < 1.0:
            raise InvalidConfigError("alpha and beta must be in (0, 1)")
        if not self.stage_limits or any(limit < 1 for limit in self.stage_limits):
            raise InvalidConfigError("stage_limits must be positive integers")
        if any(a > b for a, b in zip(self.stage_limits, self.stage_limits[1:])):
            raise InvalidConfigError("stage_limits must be nondecreasing")
        if self.deadline_hours < 1:
            raise InvalidConfigError("deadline_hours must be >= 1")

    def stage_limit(self, stage: int) -> int:
        return self.stage_limits[min(stage, len(self.stage_limits) - 1)]


@dataclass(frozen=True)
class RiskBasedConfig:
    """Bound the posterior probability of losing more than C successes by R."""

    C: float  # noqa: N815
    R: float = 0.1  # noqa: N815
    delta0: float = 0.0
    sigma0_sq: float = 0.0004
    mu0: float = 0.0  # cancels out of the posterior of the difference
    kind: Literal["risk"] = field(default="risk", init=False)

    def validate(self) -> None:
        if self.C <= 0:
            raise InvalidConfigError(f"C must be > 0, got {self.C}")
        if not 0.0 < self.R < 0.5:
            raise InvalidConfigError(f"R must be in (0, 0.5), got {self.R}")
        if self.sigma0_sq <= 0:
            raise InvalidConfigError(f"sigma0_sq must be > 0, got {self.sigma0_sq}")


RampPolicyConfig = TimeBasedConfig | PowerBasedConfig | RiskBasedConfig


@dataclass(frozen=True)
class PosteriorState:
    """Normal posterior of the treatment-minus-control difference."""

    m_delta: float
    s_delta_sq: float

    @property
    def s_delta(self) -> float:
        return math.sqrt(self.s_delta_sq)


@dataclass(frozen=True)
class RampRecommendation:
    """Next stage size; ``next_treatment_n`` None means unbounded."""

    next_treatment_pct: float | None
    next_treatment_n: int | None
    rationale: Rationale


################################################################################
# Time-based
################################################################################


def time_based_next(
    cfg: TimeBasedConfig,
    current_stage: int,
    elapsed_in_stage: int,
    alert_active: bool = False,
) -> RampRecommendation:
    if not 0 <= current_stage < len(cfg.schedule):
        raise InvalidConfigError(f"stage {current_stage} is outside the schedule")
    duration, pct = cfg.schedule[current_stage]
    is_last = current_stage == len(cfg.schedule) - 1
    if elapsed_in_stage >= duration and not alert_active and not is_last:
        pct = cfg.schedule[current_stage + 1][1]
    return RampRecommendation(next_treatment_pct=pct, next_treatment_n=None, rationale="time")


################################################################################
# Power-based
################################################################################


def power_based_next(
    cfg: PowerBasedConfig,
    observed_delta: float,
    v_ctrl: float,
    v_trt: float,
    stage: int,
    elapsed_hours: int = 0,
) -> RampRecommendation:
    if v_ctrl < 0 or v_trt < 0 or not math.isfinite(v_ctrl + v_trt):
        raise InsufficientDataError("variances must be finite and >= 0")
    if elapsed_hours >= cfg.deadline_hours:
        return RampRecommendation(None, None, "deadline")

    candidates: list[tuple[float, Rationale]] = [
        (
            required_sample_size(
                PowerQuery(cfg.mde, cfg.alpha, cfg.beta, v_ctrl, v_trt)
            ),
            "power_mde",
        )
    ]
    if abs(observed_delta) > cfg.mde:
        candidates.append(
            (
                required_sample_size(
                    PowerQuery(observed_delta, cfg.alpha, cfg.beta, v_ctrl, v_trt)
                ),
                "power_observed",
            )
        )
    candidates.append((float(cfg.stage_limit(stage)), "stage_limit"))

    n, rationale = min(candidates, key=lambda c: c[0])
    return RampRecommendation(
        next_treatment_pct=None,
        next_treatment_n=math.ceil(n),
        rationale=rationale,
    )


################################################################################
# Risk-based
################################################################################


def posterior_update(
    cfg: RiskBasedConfig,
    x_bar_trt: float,
    x_bar_ctrl: float,
    pooled_var: float,
    n: float,
) -> PosteriorState:
    """Conjugate normal posterior of the difference given n observations per group."""
    if pooled_var <= 0 or not math.isfinite(pooled_var):
        raise InsufficientDataError(f"pooled variance must be > 0, got {pooled_var}")
    if n < 0:
        raise InsufficientDataError(f"n must be >= 0, got {n}")
    prior_precision = 1.0 / cfg.sigma0_sq
    data_precision = n / pooled_var
    m = (prior_precision * cfg.delta0 + data_precision * (x_bar_trt - x_bar_ctrl)) / (
        data_precision + prior_precision
    )
    s2 = 2.0 * pooled_var * cfg.sigma0_sq / (pooled_var + n * cfg.sigma0_sq)
    return PosteriorState(m_delta=m, s_delta_sq=s2)


def max_tolerable_n(
    C: float,  # noqa: N803
    R: float,  # noqa: N803
    m: float,
    s: float,
    cum: float,
) -> float | None:
    """Real-valued additional size at which Pr(N delta <= -C) reaches R.

    None when the bound holds for every N (the posterior is favourable enough).
    """
    g = s * norm.ppf(R) + m
    if g >= 0:
        return None
    return max(-C / g - cum, 0.0)


def _floor_or_none(n: float | None) -> int | None:
    return None if n is None else math.floor(n)


def risk_based_max_n(
    cfg: RiskBasedConfig,
    post: PosteriorState,
    cum_trt_n: int,
    direction: RiskDirection = "decrease",
) -> RampRecommendation:
    """Largest next-stage treatment size keeping the loss risk at or below R."""
    if cum_trt_n < 0:
        raise InvalidConfigError(f"cum_trt_n must be >= 0, got {cum_trt_n}")
    s = post.s_delta
    match direction:
        case "decrease":
            n = max_tolerable_n(cfg.C, cfg.R, post.m_delta, s, cum_trt_n)
        case "increase":
            n = max_tolerable_n(cfg.C, cfg.R, -post.m_delta, s, cum_trt_n)
        case "two_sided":
            bounds = [
                b
                for b in (
                    max_tolerable_n(cfg.C, cfg.R, post.m_delta, s, cum_trt_n),
                    max_tolerable_n(cfg.C, cfg.R, -post.m_delta, s, cum_trt_n),
                )
                if b is not None
            ]
            n = min(bounds) if bounds else None
    if n is None:
        return RampRecommendation(None, None, "risk_unbounded")
    return RampRecommendation(None, _floor_or_none(n), "risk_cap")


def default_cost_tolerance(
    mde: float, alpha: float, beta: float, v_ctrl: float, v_trt: float
) -> float:
    """C = mde * N(mde, 1 - beta): enough budget to reach the target power."""
    return mde * required_sample_size(PowerQuery(mde, alpha, beta, v_ctrl, v_trt))


################################################################################
# Percentages
################################################################################


def clamp_percentage(p_current: float, raw_pct: float | None) -> float:
    """Monotone non-decreasing, capped at 50 %; None (unbounded) goes to the cap."""
    if raw_pct is None:
        return MAX_RAMP_PCT
    return min(max(p_current, raw_pct), MAX_RAMP_PCT)


def n_to_pct(n_next: int, predicted_population: int) -> float:
    if predicted_population <= 0:
        raise InvalidConfigError(
            f"predicted population must be > 0, got {predicted_population}"
        )
    return min(max(n_next / predicted_population, 0.0), 1.0)
