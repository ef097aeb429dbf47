"""Two-level bounded-parallel execution of (combo, datapoint) tasks.

An outer pool bounds how many combinations run at once; each combination
gets an inner pool bounding its concurrent datapoints. Global in-flight work
is therefore at most the product of the two limits.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence


@dataclass(frozen=True)
class ConcurrencyBudget:
    max_combos_in_flight: int = 1
    max_datapoints_per_combo: int = 1

    def __post_init__(self):
        if self.max_combos_in_flight < 1 or self.max_datapoints_per_combo < 1:
            raise ValueError("concurrency limits must be >= 1")

    @property
    def ceiling(self) -> int:
        return self.max_combos_in_flight * self.max_datapoints_per_combo

    @property
    def sequential(self) -> bool:
        return self.ceiling == 1


SEQUENTIAL = ConcurrencyBudget(1, 1)


@dataclass
class InFlightMonitor:
    """Counts in-flight tasks and remembers the peaks."""

    current: int = 0
    peak: int = 0
    peak_per_combo: int = 0
    started: int = 0
    _per_combo: dict = field(default_factory=lambda: defaultdict(int))
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def enter(self, combo: int) -> None:
        with self._lock:
            self.current += 1
            self.started += 1
            self.peak = max(self.peak, self.current)
            self._per_combo[combo] += 1
            self.peak_per_combo = max(self.peak_per_combo, self._per_combo[combo])

    def exit(self, combo: int) -> None:
        with self._lock:
            self.current -= 1
            self._per_combo[combo] -= 1


def run_parallel(
    tasks: Sequence[tuple[int, int]],
    budget: ConcurrencyBudget,
    evaluate: Callable[[int, int], object],
    monitor: InFlightMonitor | None = None,
) -> list:
    """Run every task once; return results in task order.

    A task that raises contributes its exception object in place of a result,
    so one failure never stops the rest.
    """
    monitor = monitor if monitor is not None else InFlightMonitor()
    results: list = [None] * len(tasks)

    def run_one(pos: int) -> None:
        combo, dp = tasks[pos]
        monitor.enter(combo)
        try:
            results[pos] = evaluate(combo, dp)
        except Exception as exc:  # collected, not fatal
            results[pos] = exc
        finally:
            monitor.exit(combo)

    if budget.sequential or len(tasks) <= 1:
        for pos in range(len(tasks)):
            run_one(pos)
        return results

    groups: dict[int, list[int]] = defaultdict(list)
    for pos, (combo, _) in enumerate(tasks):
        groups[combo].append(pos)

    def run_group(positions: list[int]) -> None:
        if budget.max_datapoints_per_combo == 1 or len(positions) == 1:
            for pos in positions:
                run_one(pos)
            return
        with ThreadPoolExecutor(budget.max_datapoints_per_combo) as inner:
            list(inner.map(run_one, positions))

    if budget.max_combos_in_flight == 1 or len(groups) == 1:
        for positions in groups.values():
            run_group(positions)
    else:
        with ThreadPoolExecutor(budget.max_combos_in_flight) as outer:
            list(outer.map(run_group, groups.values()))
    return results
