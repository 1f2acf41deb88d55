"""Variance estimation, the mixture sequential test and sample-size formulas.

All logarithms are natural.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.stats import norm

from .accumulator import CTRL, TRT, PartitionedAccumulator, StatsError

logger = logging.getLogger(__name__)

VarianceMethod = Literal["naive", "jackknife"]
TauPolicy = Literal["fixed", "mde_scaled", "power_scaled"]
Sidedness = Literal["two_sided", "lower_is_regression", "higher_is_regression"]
Direction = Literal["none", "increase", "decrease"]

# Fitted coefficients of the sequential power curve (N ~ (a - b log beta) E[N])
POWER_FIT_INTERCEPT = 0.35
POWER_FIT_SLOPE = 0.79
# Below this the power curve fit is not trusted
POWER_FIT_MIN_N = 500


class InsufficientDataError(StatsError):
    """Raised when there is not enough data for an estimate."""

    pass


class InvalidConfigError(StatsError, ValueError):
    """Raised for invalid test or policy parameters."""

    pass


class InvalidQueryError(StatsError, ValueError):
    """Raised for invalid power or sample-size queries."""

    pass


################################################################################
# Domain types
################################################################################


@dataclass(frozen=True)
class VarianceEstimate:
    """Variance of the per-group means and of their difference."""

    method: VarianceMethod
    var_of_mean_ctrl: float
    var_of_mean_trt: float
    sample_var_ctrl: float
    sample_var_trt: float
    n_ctrl: int
    n_trt: int

    @property
    def V(self) -> float:  # noqa: N802
        """Variance of the mean difference."""
        return self.var_of_mean_ctrl + self.var_of_mean_trt

    @property
    def effective_var_ctrl(self) -> float:
        """Per-observation variance implied by the variance of the mean."""
        return self.var_of_mean_ctrl * self.n_ctrl

    @property
    def effective_var_trt(self) -> float:
        return self.var_of_mean_trt * self.n_trt


@dataclass(frozen=True)
class SequentialTestConfig:
    """Parameters of the mixture sequential test."""

    alpha: float = 0.05
    tau: float | None = None
    tau_policy: TauPolicy = "mde_scaled"
    horizon_n: float | None = None
    delta0: float = 0.0
    sidedness: Sidedness = "two_sided"

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.tau_policy == "fixed" and self.tau is None:
            raise InvalidConfigError("tau is required when tau_policy is 'fixed'")
        if self.tau is not None and self.tau <= 0:
            raise InvalidConfigError(f"tau must be > 0, got {self.tau}")
        if self.horizon_n is not None and self.horizon_n <= 0:
            raise InvalidConfigError(f"horizon_n must be > 0, got {self.horizon_n}")


@dataclass(frozen=True)
class SequentialOutcome:
    """Result of one sequential check."""

    delta_hat: float
    V: float
    ci_low: float
    ci_high: float
    significant: bool
    direction: Direction
    n_ctrl: int
    n_trt: int


@dataclass(frozen=True)
class PowerQuery:
    """Inputs of the sequential sample-size formula."""

    delta: float
    alpha: float
    beta: float
    v_ctrl: float
    v_trt: float

    def validate(self) -> None:
        if self.delta == 0:
            raise InvalidQueryError("delta must be non-zero")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidQueryError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise InvalidQueryError(f"beta must be in (0, 1), got {self.beta}")
        if self.v_ctrl < 0 or self.v_trt < 0:
            raise InvalidQueryError("variances must be >= 0")


################################################################################
# Variance estimators
################################################################################


def _sample_var(n: int, total: float, total_sq: float) -> float:
    # Clamp float cancellation noise below zero
    return max((total_sq - total * total / n) / (n - 1), 0.0)


def naive_variance(acc: PartitionedAccumulator) -> VarianceEstimate:
    """Variance assuming independent observations."""
    n_c, n_t = acc.count(CTRL), acc.count(TRT)
    if n_c < 2 or n_t < 2:
        raise InsufficientDataError(
            f"Need at least 2 observations per group (ctrl={n_c}, trt={n_t})"
        )
    v_c = _sample_var(n_c, acc.total(CTRL), acc.total_sq(CTRL))
    v_t = _sample_var(n_t, acc.total(TRT), acc.total_sq(TRT))
    return VarianceEstimate(
        method="naive",
        var_of_mean_ctrl=v_c / n_c,
        var_of_mean_trt=v_t / n_t,
        sample_var_ctrl=v_c,
        sample_var_trt=v_t,
        n_ctrl=n_c,
        n_trt=n_t,
    )


def _jackknife_group(acc: PartitionedAccumulator, group: int) -> float:
    sums = acc.sums[group]
    counts = acc.counts[group]
    total, n = float(sums.sum()), int(counts.sum())
    mean = total / n
    loo_means = (total - sums) / (n - counts)
    r = acc.partitions
    return float((r - 1) / r * ((loo_means - mean) ** 2).sum())


def jackknife_variance(acc: PartitionedAccumulator) -> VarianceEstimate:
    """Delete-a-group jackknife over the accumulator's hash partitions."""
    if acc.partitions < 2:
        raise InsufficientDataError("Jackknife needs at least 2 partitions")
    if (acc.counts < 1).any():
        empty = [
            f"{'ctrl' if g == CTRL else 'trt'}/{r}"
            for g, r in zip(*(acc.counts < 1).nonzero(), strict=True)
        ]
        raise InsufficientDataError(f"Empty jackknife partitions: {empty}")
    n_c, n_t = acc.count(CTRL), acc.count(TRT)
    return VarianceEstimate(
        method="jackknife",
        var_of_mean_ctrl=_jackknife_group(acc, CTRL),
        var_of_mean_trt=_jackknife_group(acc, TRT),
        sample_var_ctrl=_sample_var(n_c, acc.total(CTRL), acc.total_sq(CTRL))
        if n_c > 1
        else 0.0,
        sample_var_trt=_sample_var(n_t, acc.total(TRT), acc.total_sq(TRT))
        if n_t > 1
        else 0.0,
        n_ctrl=n_c,
        n_trt=n_t,
    )


def estimate_variance(
    acc: PartitionedAccumulator, method: VarianceMethod
) -> VarianceEstimate:
    match method:
        case "naive":
            return naive_variance(acc)
        case "jackknife":
            return jackknife_variance(acc)
        case _:
            raise InvalidConfigError(f"Unknown variance method: {method}")


################################################################################
# Mixture prior
################################################################################


def select_tau(v_ctrl: float, v_trt: float, n: float, alpha: float) -> float:
    """Mixture variance tuned to the effect a fixed-horizon test of size n detects."""
    if n <= 0:
        raise InvalidConfigError(f"horizon sample size must be > 0, got {n}")
    if v_ctrl < 0 or v_trt < 0 or v_ctrl + v_trt == 0:
        raise InvalidConfigError("variances must be >= 0 and not both zero")
    z = norm.ppf(1 - alpha / 2)
    return z * z * (v_ctrl + v_trt) / n


def select_tau_power(
    v_ctrl: float, v_trt: float, n: float, alpha: float, beta: float
) -> float:
    """Variant using (z_{1-alpha/2} + z_{1-beta/2})^2 as the scale."""
    if n <= 0:
        raise InvalidConfigError(f"horizon sample size must be > 0, got {n}")
    if v_ctrl < 0 or v_trt < 0 or v_ctrl + v_trt == 0:
        raise InvalidConfigError("variances must be >= 0 and not both zero")
    z = norm.ppf(1 - alpha / 2) + norm.ppf(1 - beta / 2)
    return z * z * (v_ctrl + v_trt) / n


def fixed_horizon_n(delta: float, v_ctrl: float, v_trt: float, alpha: float) -> float:
    """Per-group size at which a fixed-horizon level-alpha test just resolves ``delta``.

    ``select_tau`` at this horizon gives tau = delta^2.
    """
    if delta == 0:
        raise InvalidConfigError("delta must be non-zero")
    z = norm.ppf(1 - alpha / 2)
    return z * z * (v_ctrl + v_trt) / (delta * delta)


def resolve_tau(
    cfg: SequentialTestConfig, v_ctrl: float, v_trt: float, beta: float = 0.1
) -> float:
    """Fix tau once, at rollout start. Never call this per check."""
    cfg.validate()
    if cfg.tau_policy == "fixed":
        assert cfg.tau is not None
        return cfg.tau
    if cfg.horizon_n is None:
        raise InvalidConfigError(f"horizon_n is required for tau_policy {cfg.tau_policy}")
    if cfg.tau_policy == "power_scaled":
        return select_tau_power(v_ctrl, v_trt, cfg.horizon_n, cfg.alpha, beta)
    return select_tau(v_ctrl, v_trt, cfg.horizon_n, cfg.alpha)


################################################################################
# Mixture sequential test
################################################################################


def mixture_half_widths(V: np.ndarray, tau: float, alpha: float) -> np.ndarray:  # noqa: N803
    """Vectorised half-width; every ``V`` must be > 0."""
    V = np.asarray(V, dtype=np.float64)  # noqa: N806
    log_ratio = np.log(V) - np.log(V + tau)
    return np.sqrt(V * (V + tau) / tau * (-2.0 * math.log(alpha) - log_ratio))


def mixture_half_width(V: float, tau: float, alpha: float) -> float:  # noqa: N803
    if V <= 0 or not math.isfinite(V):
        raise InsufficientDataError(f"Variance of the difference must be > 0, got {V}")
    if tau <= 0:
        raise InvalidConfigError(f"tau must be > 0, got {tau}")
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigError(f"alpha must be in (0, 1), got {alpha}")
    return float(mixture_half_widths(np.float64(V), tau, alpha))


def mixture_ci(
    delta_hat: float,
    V: float,  # noqa: N803
    tau: float,
    alpha: float,
) -> tuple[float, float]:
    """Always-valid (1 - alpha) confidence interval for the mean difference."""
    half = mixture_half_width(V, tau, alpha)
    return delta_hat - half, delta_hat + half


def sequential_check(
    acc: PartitionedAccumulator,
    cfg: SequentialTestConfig,
    method: VarianceMethod = "jackknife",
) -> SequentialOutcome:
    """Run one monitoring check on the cumulative accumulator.

    ``cfg.tau`` must already be resolved (see ``resolve_tau``).
    """
    if cfg.tau is None:
        raise InvalidConfigError("tau must be resolved before checking")
    estimate = estimate_variance(acc, method)
    delta_hat = acc.mean(TRT) - acc.mean(CTRL)
    low, high = mixture_ci(delta_hat, estimate.V, cfg.tau, cfg.alpha)

    direction: Direction = "none"
    if cfg.delta0 < low:
        direction = "increase"
    elif cfg.delta0 > high:
        direction = "decrease"

    match cfg.sidedness:
        case "two_sided":
            significant = direction != "none"
        case "lower_is_regression":
            significant = direction == "decrease"
        case "higher_is_regression":
            significant = direction == "increase"

    return SequentialOutcome(
        delta_hat=delta_hat,
        V=estimate.V,
        ci_low=low,
        ci_high=high,
        significant=significant,
        direction=direction,
        n_ctrl=estimate.n_ctrl,
        n_trt=estimate.n_trt,
    )


################################################################################
# Stopping size, sample size and power
################################################################################


def expected_stopping_n(
    delta: float, v_ctrl: float, v_trt: float, alpha: float, tau: float
) -> float:
    """Approximate average per-group sample size at which the test stops."""
    if delta == 0:
        raise InvalidQueryError("delta must be non-zero")
    if tau <= 0:
        raise InvalidQueryError(f"tau must be > 0, got {tau}")
    if not 0.0 < alpha < 1.0:
        raise InvalidQueryError(f"alpha must be in (0, 1), got {alpha}")
    d2 = delta * delta
    # log[-2 tau e^{d2/tau} log(alpha) / (d2 alpha^2)], expanded
    log_term = (
        math.log(-2.0 * math.log(alpha))
        + math.log(tau)
        + d2 / tau
        - math.log(d2)
        - 2.0 * math.log(alpha)
    )
    return (v_ctrl + v_trt) / d2 * (log_term - 1.0)


def _stopping_scale(delta: float, v_ctrl: float, v_trt: float, alpha: float) -> float:
    log_alpha = math.log(alpha)
    return (v_ctrl + v_trt) / (delta * delta) * (
        math.log(-2.0 * log_alpha) - 2.0 * log_alpha
    )


def required_sample_size(q: PowerQuery) -> float:
    """Per-group sample size giving power 1 - beta against ``q.delta``."""
    q.validate()
    n = (POWER_FIT_INTERCEPT - POWER_FIT_SLOPE * math.log(q.beta)) * _stopping_scale(
        q.delta, q.v_ctrl, q.v_trt, q.alpha
    )
    if n <= POWER_FIT_MIN_N:
        logger.warning(
            f"Sample size {n:.1f} <= {POWER_FIT_MIN_N}: power fit not trusted here"
        )
    return n


def estimate_power(
    n: float, delta: float, v_ctrl: float, v_trt: float, alpha: float
) -> float:
    """Power reached after n observations per group, clamped to [0, 1)."""
    if n <= 0:
        raise InvalidQueryError(f"n must be > 0, got {n}")
    if delta == 0:
        raise InvalidQueryError("delta must be non-zero")
    scale = _stopping_scale(delta, v_ctrl, v_trt, alpha)
    if scale <= 0:
        return 0.0
    beta = math.exp((POWER_FIT_INTERCEPT - n / scale) / POWER_FIT_SLOPE)
    if beta >= 1.0:
        return 0.0
    return min(max(1.0 - beta, 0.0), math.nextafter(1.0, 0.0))


def with_alpha(cfg: SequentialTestConfig, alpha: float) -> SequentialTestConfig:
    """Copy of ``cfg`` at a different significance level."""
    return replace(cfg, alpha=alpha)
