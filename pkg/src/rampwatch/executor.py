"""Replication execution for rampwatch simulate."""

import asyncio
import logging
from concurrent.futures import Executor as PoolExecutor
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import Config, Scenario, Task
from .sim import ReplicationResult, run_replication

logger = logging.getLogger(__name__)


class ExecutionError(Exception):
    """Raised when one or more replications failed."""

    pass


def run_task(scenario: Scenario, task: Task) -> ReplicationResult:
    """Run one replication. Module level so worker processes can pickle it."""
    return run_replication(
        scenario.plan.for_replication(task.replication),
        scenario.population,
        scenario.effect,
        task.seed,
    )


@dataclass
class Executor:
    """Executes replications with bounded parallelism.

    Results come back in task order regardless of completion order.
    """

    config: Config
    tasks: list[Task]

    _slots: asyncio.Queue[int] = field(
        default_factory=asyncio.Queue, init=False, repr=False
    )
    _shutdown: asyncio.Event = field(
        default_factory=asyncio.Event, init=False, repr=False
    )

    async def run(self) -> list[ReplicationResult]:
        """Execute all tasks."""
        results: list[ReplicationResult | None] = [None] * len(self.tasks)
        pool = (
            ProcessPoolExecutor(max_workers=self.config.parallel)
            if self.config.parallel > 1
            else None
        )
        try:
            for slot in range(self.config.parallel):
                await self._slots.put(slot)
            await self._execute_tasks(pool, results)
        except asyncio.CancelledError:
            print("\nInterrupted! Cleaning up...")
            raise
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)

        failed = [task for task, result in zip(self.tasks, results, strict=True) if result is None]
        if failed:
            raise ExecutionError(f"{len(failed)} replications failed, first: {failed[0]}")
        print("Done.")
        return [r for r in results if r is not None]

    async def _execute_tasks(
        self, pool: PoolExecutor | None, results: list[ReplicationResult | None]
    ) -> None:
        """Execute tasks with a slot pool."""
        total = len(self.tasks)
        width = len(str(total))
        scenarios = {s.name: s for s in self.config.scenarios}
        loop = asyncio.get_running_loop()
        count = 0

        async def run_one(index: int, task: Task) -> None:
            nonlocal count
            if self._shutdown.is_set():
                return
            slot = await self._slots.get()
            try:
                result = await loop.run_in_executor(
                    pool, run_task, scenarios[task.scenario], task
                )
                results[index] = result
                count += 1
                print(f"[{count:0{width}d}/{total}] COMPLETED | {result.outcome:16} | {task}")
            except Exception:
                logger.exception(f"Replication failed: {task}")
                count += 1
                print(f"[{count:0{width}d}/{total}] ERROR     | {'':16} | {task}")
            finally:
                await self._slots.put(slot)

        pending = [
            asyncio.create_task(run_one(i, t)) for i, t in enumerate(self.tasks)
        ]
        try:
            await asyncio.gather(*pending, return_exceptions=True)
        except asyncio.CancelledError:
            self._shutdown.set()
            for t in pending:
                t.cancel()
            await asyncio.gather(*pending, return_exceptions=True)
            raise
