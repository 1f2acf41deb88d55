"""Streaming partition-level aggregation of metric observations."""

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Literal, Self

import numpy as np

Group = Literal["ctrl", "trt"]

GROUPS: tuple[Group, Group] = ("ctrl", "trt")
CTRL, TRT = 0, 1

DEFAULT_PARTITIONS = 10

_HASH_SPACE = float(2**64)


class StatsError(Exception):
    """Base exception for statistical primitives."""

    pass


class DataQualityError(StatsError, ValueError):
    """Raised when an observation cannot be ingested as-is."""

    pass


################################################################################
# Hashing
################################################################################


@lru_cache(maxsize=1 << 17)
def stable_hash(salt: str, unit_id: str) -> int:
    """Deterministic 64-bit hash of ``salt`` and ``unit_id``.

    blake2b with an 8-byte digest; the unit separator keeps ("ab", "c") and
    ("a", "bc") apart.
    """
    digest = hashlib.blake2b(f"{salt}\x1f{unit_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def unit_bucket(salt: str, unit_id: str) -> float:
    """Map a unit to [0, 1)."""
    return stable_hash(salt, unit_id) / _HASH_SPACE


def partition_of(salt: str, unit_id: str, partitions: int) -> int:
    """Partition id in ``0..partitions-1``."""
    return stable_hash(salt, unit_id) % partitions


def group_index(group: str) -> int:
    """Row index of a group name."""
    match group:
        case "ctrl" | "control":
            return CTRL
        case "trt" | "treatment":
            return TRT
        case _:
            raise DataQualityError(f"Unknown group: {group!r}")


################################################################################
# Domain types
################################################################################


@dataclass(frozen=True)
class ObservationEvent:
    """A single metric observation for one experiment unit."""

    timestamp: int  # hour bucket since rollout start
    unit_id: str
    group: Group
    value: float
    metric: str = ""

    def validate(self) -> None:
        """Raise DataQualityError if the event violates its invariants."""
        if not math.isfinite(self.value):
            raise DataQualityError(
                f"Non-finite value {self.value!r} for unit {self.unit_id!r}"
            )
        if self.timestamp < 0:
            raise DataQualityError(f"Negative timestamp: {self.timestamp}")
        group_index(self.group)


@dataclass(eq=False)
class PartitionedAccumulator:
    """Per-group, per-partition running sums, sums of squares and counts.

    Rows are groups (ctrl, trt), columns are partitions. The accumulator is
    cumulative over the whole rollout; raw events are never stored.
    """

    partitions: int = DEFAULT_PARTITIONS
    sums: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    sumsq: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    counts: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        shape = (2, self.partitions)
        if self.sums is None:
            self.sums = np.zeros(shape, dtype=np.float64)
        if self.sumsq is None:
            self.sumsq = np.zeros(shape, dtype=np.float64)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=np.int64)
        for name in ("sums", "sumsq", "counts"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PartitionedAccumulator):
            return NotImplemented
        return (
            self.partitions == other.partitions
            and np.array_equal(self.sums, other.sums)
            and np.array_equal(self.sumsq, other.sumsq)
            and np.array_equal(self.counts, other.counts)
        )

    def add(self, group: int, partition: int, value: float) -> None:
        """Add one observation in place."""
        self.sums[group, partition] += value
        self.sumsq[group, partition] += value * value
        self.counts[group, partition] += 1

    def add_batch(
        self, groups: np.ndarray, partitions: np.ndarray, values: np.ndarray
    ) -> None:
        """Add many pre-partitioned observations in place."""
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return
        if not np.all(np.isfinite(values)):
            raise DataQualityError("Batch contains non-finite values")
        size = 2 * self.partitions
        cells = np.asarray(groups, dtype=np.int64) * self.partitions + np.asarray(
            partitions, dtype=np.int64
        )
        shape = self.sums.shape
        self.sums += np.bincount(cells, weights=values, minlength=size).reshape(shape)
        self.sumsq += np.bincount(
            cells, weights=values * values, minlength=size
        ).reshape(shape)
        self.counts += np.bincount(cells, minlength=size).reshape(shape)

    def merge(self, other: "PartitionedAccumulator") -> Self:
        """Fold another accumulator with the same partitioning into this one."""
        if other.partitions != self.partitions:
            raise ValueError("Cannot merge accumulators with different partitions")
        self.sums += other.sums
        self.sumsq += other.sumsq
        self.counts += other.counts
        return self

    def copy(self) -> "PartitionedAccumulator":
        return PartitionedAccumulator(
            partitions=self.partitions,
            sums=self.sums.copy(),
            sumsq=self.sumsq.copy(),
            counts=self.counts.copy(),
        )

    def count(self, group: int) -> int:
        return int(self.counts[group].sum())

    def total(self, group: int) -> float:
        return float(self.sums[group].sum())

    def total_sq(self, group: int) -> float:
        return float(self.sumsq[group].sum())

    def mean(self, group: int) -> float:
        n = self.count(group)
        return self.total(group) / n if n else math.nan

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready tables, one list per group."""
        return {
            "partitions": self.partitions,
            "sums": self.sums.tolist(),
            "sumsq": self.sumsq.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PartitionedAccumulator":
        return cls(
            partitions=int(data["partitions"]),
            sums=np.asarray(data["sums"], dtype=np.float64),
            sumsq=np.asarray(data["sumsq"], dtype=np.float64),
            counts=np.asarray(data["counts"], dtype=np.int64),
        )


def ingest(
    acc: PartitionedAccumulator, event: ObservationEvent, partition_salt: str
) -> PartitionedAccumulator:
    """Return a copy of ``acc`` with ``event`` added to its (group, partition) cell."""
    event.validate()
    updated = acc.copy()
    updated.add(
        group_index(event.group),
        partition_of(partition_salt, event.unit_id, acc.partitions),
        event.value,
    )
    return updated
