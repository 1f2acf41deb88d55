"""rampwatch - staged feature rollouts with always-valid sequential monitoring."""

__version__ = "0.3.0"

from .accumulator import (
    DataQualityError,
    ObservationEvent,
    PartitionedAccumulator,
    StatsError,
    ingest,
)
from .collector import Collector
from .config import Config, Scenario, Task, load_plan
from .controller import (
    Decision,
    MetricSpec,
    PowerGate,
    RolloutError,
    RolloutPlan,
    RolloutState,
    RolloutStateError,
    assign,
    start,
    step,
    step_batch,
)
from .executor import ExecutionError, Executor
from .rampup import (
    PowerBasedConfig,
    RiskBasedConfig,
    TimeBasedConfig,
    clamp_percentage,
    n_to_pct,
    posterior_update,
    power_based_next,
    risk_based_max_n,
    time_based_next,
)
from .sim import (
    EffectModel,
    EvaluationReport,
    PopulationModel,
    ReplicationResult,
    run_experiment,
    run_replication,
)
from .snapshot import SnapshotError
from .stats import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidQueryError,
    PowerQuery,
    SequentialOutcome,
    SequentialTestConfig,
    VarianceEstimate,
    estimate_power,
    jackknife_variance,
    mixture_ci,
    naive_variance,
    required_sample_size,
    select_tau,
    sequential_check,
)

__all__ = [
    # Accumulator
    "ObservationEvent",
    "PartitionedAccumulator",
    "ingest",
    # Stats
    "StatsError",
    "DataQualityError",
    "InsufficientDataError",
    "InvalidConfigError",
    "InvalidQueryError",
    "PowerQuery",
    "SequentialOutcome",
    "SequentialTestConfig",
    "VarianceEstimate",
    "estimate_power",
    "jackknife_variance",
    "mixture_ci",
    "naive_variance",
    "required_sample_size",
    "select_tau",
    "sequential_check",
    # Ramp-up
    "PowerBasedConfig",
    "RiskBasedConfig",
    "TimeBasedConfig",
    "clamp_percentage",
    "n_to_pct",
    "posterior_update",
    "power_based_next",
    "risk_based_max_n",
    "time_based_next",
    # Controller
    "Decision",
    "MetricSpec",
    "PowerGate",
    "RolloutError",
    "RolloutPlan",
    "RolloutState",
    "RolloutStateError",
    "assign",
    "start",
    "step",
    "step_batch",
    "SnapshotError",
    # Simulation
    "EffectModel",
    "EvaluationReport",
    "PopulationModel",
    "ReplicationResult",
    "run_experiment",
    "run_replication",
    # Runs
    "Config",
    "Scenario",
    "Task",
    "load_plan",
    "Executor",
    "ExecutionError",
    "Collector",
]
