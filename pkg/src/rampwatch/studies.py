"""Monte Carlo studies of the sequential test itself.

``power_fit_study`` checks the sample-size formula against simulated stopping
times; ``tau_policy_study`` compares the two horizon-based mixture variances on
Bernoulli streams.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .stats import (
    POWER_FIT_MIN_N,
    PowerQuery,
    SequentialTestConfig,
    TauPolicy,
    mixture_half_widths,
    required_sample_size,
    resolve_tau,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerFitCell:
    delta: float
    beta: float
    n: float
    expected_power: float
    empirical_power: float
    trusted: bool


@dataclass(frozen=True)
class TauPolicyCell:
    p: float
    policy: TauPolicy
    horizon_n: int
    tau: float
    false_positive_rate: float
    power: float


def _cell_rngs(seed: int, cells: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(cells)]


################################################################################
# Power formula fit
################################################################################


def power_fit_study(
    deltas: tuple[float, ...] = (0.03, 0.05, 0.1),
    betas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5),
    v: float = 0.21,
    alpha: float = 0.05,
    draws: int = 500,
    seed: int = 0,
    chunk: int = 50,
) -> list[PowerFitCell]:
    """Empirical stopping probability by n = required_sample_size, per (delta, beta).

    Each draw is a stream of per-pair differences with known variance 2v,
    checked after every pair with tau = delta^2.
    """
    cells = [(d, b) for d in deltas for b in betas]
    results: list[PowerFitCell] = []
    for (delta, beta), rng in zip(cells, _cell_rngs(seed, len(cells)), strict=True):
        n = required_sample_size(PowerQuery(delta, alpha, beta, v, v))
        n_int = math.ceil(n)
        k = np.arange(1, n_int + 1)
        bounds = mixture_half_widths(2.0 * v / k, delta * delta, alpha)

        stopped = 0
        for offset in range(0, draws, chunk):
            m = min(chunk, draws - offset)
            pairs = rng.normal(delta, math.sqrt(2.0 * v), size=(m, n_int))
            means = np.cumsum(pairs, axis=1) / k
            stopped += int((np.abs(means) > bounds).any(axis=1).sum())

        cell = PowerFitCell(
            delta=delta,
            beta=beta,
            n=n,
            expected_power=1.0 - beta,
            empirical_power=stopped / draws,
            trusted=n > POWER_FIT_MIN_N,
        )
        logger.info(
            f"power fit delta={delta} beta={beta}: n={n:.0f} "
            f"expected={cell.expected_power:.3f} empirical={cell.empirical_power:.3f}"
        )
        results.append(cell)
    return results


################################################################################
# Tau policy comparison
################################################################################


def _positive_rate(
    rng: np.random.Generator,
    p_ctrl: float,
    p_trt: float,
    horizon: int,
    checks: int,
    reps: int,
    tau: float,
    alpha: float,
) -> float:
    checkpoints = np.unique(np.ceil(np.linspace(horizon / checks, horizon, checks)))
    checkpoints = checkpoints[checkpoints >= 2]
    segments = np.diff(np.concatenate([[0.0], checkpoints])).astype(np.int64)
    s_ctrl = np.cumsum(rng.binomial(segments, p_ctrl, size=(reps, segments.size)), axis=1)
    s_trt = np.cumsum(rng.binomial(segments, p_trt, size=(reps, segments.size)), axis=1)

    n = checkpoints
    var_ctrl = (s_ctrl - s_ctrl**2 / n) / (n - 1)
    var_trt = (s_trt - s_trt**2 / n) / (n - 1)
    V = (var_ctrl + var_trt) / n  # noqa: N806
    valid = V > 0
    bounds = mixture_half_widths(np.where(valid, V, 1.0), tau, alpha)
    diff = (s_trt - s_ctrl) / n
    return float((valid & (np.abs(diff) > bounds)).any(axis=1).mean())


def tau_policy_study(
    p_grid: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9),
    rel_diff: float = 0.05,
    alpha: float = 0.05,
    beta: float = 0.1,
    checks: int = 200,
    reps: int = 200,
    seed: int = 0,
) -> list[TauPolicyCell]:
    """False-positive rate and power of each tau policy per baseline rate p.

    The horizon is the fixed-horizon size detecting a ``rel_diff`` relative
    lift; both policies see the same streams.
    """
    results: list[TauPolicyCell] = []
    for p, cell_seed in zip(
        p_grid, np.random.SeedSequence(seed).spawn(len(p_grid)), strict=True
    ):
        v = p * (1.0 - p)
        p_trt = min(p * (1.0 + rel_diff), 1.0)
        horizon = math.ceil(
            required_sample_size(PowerQuery(p_trt - p, alpha, beta, v, v))
        )
        policy: TauPolicy
        for policy in ("mde_scaled", "power_scaled"):
            cfg = SequentialTestConfig(alpha=alpha, tau_policy=policy, horizon_n=horizon)
            tau = resolve_tau(cfg, v, v, beta=beta)
            rng = np.random.default_rng(cell_seed)
            fpr = _positive_rate(rng, p, p, horizon, checks, reps, tau, alpha)
            power = _positive_rate(rng, p, p_trt, horizon, checks, reps, tau, alpha)
            logger.info(
                f"tau study p={p} {policy}: tau={tau:.3g} fpr={fpr:.3f} power={power:.3f}"
            )
            results.append(
                TauPolicyCell(
                    p=p,
                    policy=policy,
                    horizon_n=horizon,
                    tau=tau,
                    false_positive_rate=fpr,
                    power=power,
                )
            )
    return results
