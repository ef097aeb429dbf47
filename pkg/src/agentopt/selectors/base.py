"""Shared selector machinery: configuration, the result object and the
bookkeeping every search strategy goes through."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np

from agentopt.core import (
    AgentOptError,
    CombinationStats,
    Observation,
    PipelineSpace,
    ScoreMatrix,
    UtilityWeights,
    utility,
)
from agentopt.evalsub.executor import SEQUENTIAL, ConcurrencyBudget, InFlightMonitor, run_parallel
from agentopt.report import ParetoPoint, pareto_frontier

logger = logging.getLogger(__name__)


class BudgetExceedsSpace(AgentOptError):
    pass


@dataclass(frozen=True)
class SelectorConfig:
    exploration_weight_a: float = 0.5
    batch_size_B: int = 5
    budget_fraction_beta: float = 0.2
    epsilon: float = 0.05
    threshold_tau: float = 0.5
    delta: float = 0.05
    rank_r: int = 1
    ensemble_E: int = 8
    warmup_w: float = 0.2
    uncertainty_eta: float = 1.0
    restarts_R: int = 3
    initial_design_m: int | None = None
    total_budget_combos: int | None = None
    shortlist_k: int = 1
    seed: int = 0
    elimination_schedule: tuple[int, ...] | None = None
    dropout_p: float = 0.1
    als_iters: int = 100
    surrogate_gamma: float = 1.0
    surrogate_noise: float = 1e-4

    def __post_init__(self):
        if self.elimination_schedule is not None:
            object.__setattr__(self, "elimination_schedule", tuple(int(b) for b in self.elimination_schedule))
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise AgentOptError(f"{f.name} must be finite")
        checks = [
            (self.exploration_weight_a > 0, "exploration_weight_a must be > 0"),
            (self.batch_size_B >= 1, "batch_size_B must be >= 1"),
            (0 < self.budget_fraction_beta <= 1, "budget_fraction_beta must lie in (0, 1]"),
            (self.epsilon >= 0, "epsilon must be >= 0"),
            (0 < self.delta < 1, "delta must lie in (0, 1)"),
            (self.rank_r >= 1, "rank_r must be >= 1"),
            (self.ensemble_E >= 1, "ensemble_E must be >= 1"),
            (0 <= self.warmup_w < 1, "warmup_w must lie in [0, 1)"),
            (self.uncertainty_eta >= 0, "uncertainty_eta must be >= 0"),
            (self.restarts_R >= 1, "restarts_R must be >= 1"),
            (self.initial_design_m is None or self.initial_design_m >= 1, "initial_design_m must be >= 1"),
            (self.total_budget_combos is None or self.total_budget_combos >= 1, "total_budget_combos must be >= 1"),
            (self.shortlist_k >= 1, "shortlist_k must be >= 1"),
            (0 <= self.dropout_p < 1, "dropout_p must lie in [0, 1)"),
            (self.als_iters >= 1, "als_iters must be >= 1"),
            (self.surrogate_gamma > 0, "surrogate_gamma must be > 0"),
            (self.surrogate_noise >= 0, "surrogate_noise must be >= 0"),
            (
                self.elimination_schedule is None
                or (len(self.elimination_schedule) > 0 and min(self.elimination_schedule) >= 1),
                "elimination_schedule must be a non-empty list of positive batch sizes",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise AgentOptError(msg)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["elimination_schedule"] is not None:
            d["elimination_schedule"] = list(d["elimination_schedule"])
        return d


def observation_budget(beta: float, n_combos: int, n_datapoints: int) -> int:
    """``ceil(beta * |C| * |D|)`` without float round-off at the boundary."""
    return math.ceil(Fraction(str(beta)) * n_combos * n_datapoints)


def elimination_batches(n_datapoints: int, schedule: Sequence[int] | None) -> list[int]:
    """Batch sizes per round; the default doubles from 8, capped at what is left."""
    out = []
    remaining = n_datapoints
    if schedule is None:
        b = 8
        while remaining > 0:
            out.append(min(b, remaining))
            remaining -= out[-1]
            b *= 2
        return out
    for b in schedule:
        if remaining <= 0:
            break
        out.append(min(b, remaining))
        remaining -= out[-1]
    return out


def rng_for(seed: int, *counters: int) -> np.random.Generator:
    """Counter-based generator: the stream depends only on the arguments."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *counters])


@dataclass
class SelectionReport:
    selector_name: str
    space: PipelineSpace
    n_datapoints: int
    stats: dict[int, CombinationStats]
    ranked: list[int]
    best: int | None
    total_evaluations: int
    failed_evaluations: int
    cache_served: int
    total_cost_usd: Decimal
    pareto_set: list[int]
    config: dict
    seed: int
    extras: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def best_assignment(self) -> dict[str, str] | None:
        if self.best is None:
            return None
        return dict(self.space.combination(self.best).assignment)

    def utility(self, combo: int, weights: UtilityWeights) -> float:
        st = self.stats[combo]
        return utility(st.mean_score, st.total_cost_usd, st.mean_latency_s, weights)

    def to_dict(self) -> dict:
        return {
            "selector": self.selector_name,
            "space": self.space.to_dict(),
            "n_datapoints": self.n_datapoints,
            "best": self.best,
            "ranked": list(self.ranked),
            "total_evaluations": self.total_evaluations,
            "failed_evaluations": self.failed_evaluations,
            "cache_served": self.cache_served,
            "total_cost_usd": str(self.total_cost_usd),
            "pareto_set": list(self.pareto_set),
            "seed": self.seed,
            "config": self.config,
            "extras": self.extras,
            "warnings": list(self.warnings),
            "stats": [
                {
                    "combo_index": s.combo_index,
                    "n": s.n,
                    "mean_score": s.mean_score,
                    "mean_latency_s": s.mean_latency_s,
                    "total_cost_usd": str(s.total_cost_usd),
                    "lcb": s.lcb,
                    "ucb": s.ucb,
                }
                for s in (self.stats[i] for i in sorted(self.stats))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionReport":
        space = PipelineSpace(d["space"]["roles"], d["space"]["candidates"])
        stats = {
            s["combo_index"]: CombinationStats(
                s["combo_index"], s["n"], s["mean_score"], s["mean_latency_s"],
                Decimal(s["total_cost_usd"]), s["lcb"], s["ucb"],
            )
            for s in d["stats"]
        }
        return cls(
            d["selector"], space, d["n_datapoints"], stats, list(d["ranked"]), d["best"],
            d["total_evaluations"], d["failed_evaluations"], d["cache_served"],
            Decimal(d["total_cost_usd"]), list(d["pareto_set"]), d["config"], d["seed"],
            d.get("extras", {}), list(d.get("warnings", [])),
        )


def rank_key(st: CombinationStats):
    return (-st.mean_score, st.total_cost_usd, st.combo_index)


class Run:
    """One selector invocation: owns the score matrix and all accounting."""

    def __init__(
        self,
        name: str,
        space: PipelineSpace,
        dataset,
        evaluator,
        config: SelectorConfig,
        concurrency: ConcurrencyBudget | None = None,
    ):
        self.name = name
        self.space = space
        self.n_datapoints = dataset if isinstance(dataset, int) else len(dataset)
        if self.n_datapoints < 1:
            raise AgentOptError("dataset must hold at least one datapoint")
        self.evaluator = evaluator
        self.config = config
        concurrency = concurrency or SEQUENTIAL
        if getattr(evaluator, "serial", False):
            concurrency = SEQUENTIAL
        self.concurrency = concurrency
        self.matrix = ScoreMatrix(len(space), self.n_datapoints)
        self.failed = 0
        self.warnings: list[str] = []
        self.monitor = InFlightMonitor()
        self._combos: dict[int, object] = {}

    @property
    def n_combos(self) -> int:
        return self.matrix.n_combos

    def combo(self, index: int):
        c = self._combos.get(index)
        if c is None:
            c = self._combos[index] = self.space.combination(index)
        return c

    def warn(self, msg: str) -> None:
        logger.warning("%s: %s", self.name, msg)
        self.warnings.append(msg)

    def evaluate(self, cells: Sequence[tuple[int, int]]) -> int:
        """Attempt every cell once; results are recorded in task order."""
        cells = list(cells)
        if not cells:
            return 0
        results = run_parallel(
            cells,
            self.concurrency,
            lambda c, d: self.evaluator.evaluate(self.combo(c), d),
            self.monitor,
        )
        for (c, d), res in zip(cells, results):
            if isinstance(res, Observation):
                self.matrix.record(c, d, res)
            else:
                self.failed += 1
                if len(self.warnings) < 100:
                    self.warn(f"evaluation of cell ({c}, {d}) failed: {res}")
        return len(cells)

    def evaluate_rows(self, combos: Sequence[int]) -> int:
        return self.evaluate(
            [(c, int(d)) for c in combos for d in self.matrix.unobserved(c)]
        )

    def stats(self, combo: int) -> CombinationStats:
        return self.matrix.stats(combo, self.config.delta)

    def mean(self, combo: int) -> float:
        st = self.stats(combo)
        return st.mean_score if st.n else -math.inf

    def counts_and_means(self) -> tuple[np.ndarray, np.ndarray]:
        counts = self.matrix.mask.sum(axis=1)
        sums = np.where(self.matrix.mask, self.matrix.scores, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / counts
        return counts, means

    def argmax_mean(self, candidates: Sequence[int] | None = None) -> int | None:
        pool = range(self.n_combos) if candidates is None else candidates
        observed = [self.stats(j) for j in pool]
        observed = [s for s in observed if s.n > 0]
        if not observed:
            return None
        return min(observed, key=rank_key).combo_index

    def report(self, best: int | None = None, extras: dict | None = None) -> SelectionReport:
        stats = {}
        for j in range(self.n_combos):
            st = self.stats(j)
            if st.n > 0:
                stats[j] = st
        ranked = [st.combo_index for st in sorted(stats.values(), key=rank_key)]
        if best is None:
            best = ranked[0] if ranked else None
        elif best in stats and ranked[0] != best:
            ranked.remove(best)
            ranked.insert(0, best)
        points = [
            ParetoPoint(j, st.mean_score, st.total_cost_usd, st.mean_latency_s) for j, st in stats.items()
        ]
        front = [p.combo_index for p in pareto_frontier(points)]
        cells = self.matrix.cells()
        return SelectionReport(
            selector_name=self.name,
            space=self.space,
            n_datapoints=self.n_datapoints,
            stats=stats,
            ranked=ranked,
            best=best,
            total_evaluations=self.matrix.n_observed + self.failed,
            failed_evaluations=self.failed,
            cache_served=sum(1 for _, _, o in cells if o.from_cache),
            total_cost_usd=self.matrix.total_cost(),
            pareto_set=front,
            config=self.config.to_dict(),
            seed=self.config.seed,
            extras=extras or {},
            warnings=list(self.warnings),
        )
