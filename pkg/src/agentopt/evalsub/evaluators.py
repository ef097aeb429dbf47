"""Evaluator bindings: replay, synthetic Bernoulli, and a caching wrapper.

An evaluator is any object with ``evaluate(combo, datapoint) -> Observation``
and a boolean ``serial`` attribute. Evaluators that know the ground truth
also expose ``true_means()``.
"""

from __future__ import annotations

import csv
import json
import os
import threading
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from agentopt.core import AgentOptError, Combination, Observation, to_usd
from agentopt.evalsub.cache import Execution, ResponseCache, canonical_json

REPLAY_HEADER = (
    "combo_index",
    "datapoint_index",
    "score",
    "cost_usd",
    "latency_s",
    "input_tokens",
    "output_tokens",
)


class EvaluationFailed(AgentOptError):
    """One evaluation attempt failed; it counts against the budget but
    records no cell."""


class IncompleteMatrix(AgentOptError):
    pass


class DuplicateCell(AgentOptError):
    pass


class Evaluator(Protocol):
    serial: bool

    def evaluate(self, combo: Combination, datapoint: int) -> Observation: ...


@dataclass(frozen=True)
class DatapointId:
    index: int
    label: str | None = None


# --------------------------------------------------------------------------
# replay


class ReplayEvaluator:
    """Serves cells of a fully populated ground-truth matrix."""

    serial = False

    def __init__(self, cells: Sequence[Sequence[Observation]]):
        self.cells = [list(row) for row in cells]
        if not self.cells or not self.cells[0]:
            raise AgentOptError("replay matrix is empty")
        width = len(self.cells[0])
        if any(len(row) != width for row in self.cells):
            raise IncompleteMatrix("replay rows have unequal lengths")
        self.n_combos = len(self.cells)
        self.n_datapoints = width

    @classmethod
    def from_arrays(cls, scores, costs=None, latencies=None, input_tokens=None, output_tokens=None):
        scores = np.asarray(scores, dtype=float)
        shape = scores.shape

        # scalars, per-combo vectors and full matrices all broadcast
        def full(x, default):
            arr = np.asarray(default if x is None else x, dtype=object)
            if arr.ndim == 1:
                arr = arr[:, None]
            return np.broadcast_to(arr, shape)

        costs = full(costs, 0)
        latencies = full(latencies, 0.0)
        itok = full(input_tokens, 0)
        otok = full(output_tokens, 0)
        rows = [
            [
                Observation(
                    float(scores[i, j]),
                    to_usd(costs[i, j]),
                    float(latencies[i, j]),
                    int(itok[i, j]),
                    int(otok[i, j]),
                )
                for j in range(shape[1])
            ]
            for i in range(shape[0])
        ]
        return cls(rows)

    @classmethod
    def from_csv(cls, path, n_combos: int | None = None, n_datapoints: int | None = None):
        return cls(load_replay_csv(path, n_combos, n_datapoints))

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        if not 0 <= datapoint < self.n_datapoints:
            raise AgentOptError(f"datapoint {datapoint} outside [0, {self.n_datapoints})")
        return self.cells[combo.index][datapoint]

    def score_array(self) -> np.ndarray:
        return np.array([[o.score for o in row] for row in self.cells])

    def true_means(self) -> np.ndarray:
        return self.score_array().mean(axis=1)


def load_replay_csv(path, n_combos: int | None = None, n_datapoints: int | None = None) -> list[list[Observation]]:
    """Read and validate a replay matrix file; every cell must appear once."""
    cells: dict[tuple[int, int], Observation] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != REPLAY_HEADER:
            raise AgentOptError(f"replay file {path} must start with header {','.join(REPLAY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(REPLAY_HEADER):
                raise AgentOptError(f"{path}:{lineno}: expected {len(REPLAY_HEADER)} fields")
            c, d = int(row[0]), int(row[1])
            if (c, d) in cells:
                raise DuplicateCell(f"{path}:{lineno}: duplicate cell ({c}, {d})")
            cells[(c, d)] = Observation(
                float(row[2]), to_usd(row[3].strip()), float(row[4]), int(row[5]), int(row[6])
            )
    if not cells:
        raise IncompleteMatrix(f"{path} holds no cells")
    nc = n_combos if n_combos is not None else max(c for c, _ in cells) + 1
    nd = n_datapoints if n_datapoints is not None else max(d for _, d in cells) + 1
    if len(cells) != nc * nd:
        raise IncompleteMatrix(f"{path} has {len(cells)} cells, expected {nc} x {nd} = {nc * nd}")
    try:
        return [[cells[(c, d)] for d in range(nd)] for c in range(nc)]
    except KeyError as exc:
        raise IncompleteMatrix(f"{path} is missing cell {exc.args[0]}") from None


def write_replay_csv(path, cells: Sequence[Sequence[Observation]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_HEADER)
        for c, row in enumerate(cells):
            for d, o in enumerate(row):
                w.writerow([c, d, repr(o.score), str(o.cost_usd), repr(o.latency_s), o.input_tokens, o.output_tokens])


# --------------------------------------------------------------------------
# synthetic


class SyntheticBernoulliEvaluator:
    """Bernoulli scores from per-combo or per-cell success probabilities.

    The whole uniform draw matrix comes from one seeded generator at
    construction, so a cell's outcome does not depend on evaluation order.
    """

    serial = False

    def __init__(
        self,
        probabilities,
        n_datapoints: int | None = None,
        *,
        seed: int = 0,
        cost_per_eval=None,
        latency_per_eval=None,
    ):
        p = np.asarray(probabilities, dtype=float)
        if p.ndim == 1:
            if n_datapoints is None:
                raise AgentOptError("per-combo probabilities need n_datapoints")
            p = np.repeat(p[:, None], n_datapoints, axis=1)
        elif p.ndim != 2:
            raise AgentOptError("probabilities must be a vector or a matrix")
        if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise AgentOptError("success probabilities must lie in [0, 1]")
        self.probabilities = p
        self.n_combos, self.n_datapoints = p.shape
        self.seed = seed
        draws = np.random.default_rng(seed).random(p.shape)
        self._scores = (draws < p).astype(float)
        self._costs = _per_combo(cost_per_eval, self.n_combos, Decimal(0), to_usd)
        self._latency = _per_combo(latency_per_eval, self.n_combos, 0.0, float)

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        if not 0 <= datapoint < self.n_datapoints:
            raise AgentOptError(f"datapoint {datapoint} outside [0, {self.n_datapoints})")
        i = combo.index
        return Observation(self._scores[i, datapoint], self._costs[i], self._latency[i])

    def score_array(self) -> np.ndarray:
        return self._scores.copy()

    def true_means(self) -> np.ndarray:
        return self.probabilities.mean(axis=1)


def _per_combo(value, n: int, default, conv) -> list:
    if value is None:
        return [default] * n
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) != n:
            raise AgentOptError(f"expected {n} per-combo values, got {len(value)}")
        return [conv(v) for v in value]
    return [conv(value)] * n


def exact_count_probabilities(accuracies: Sequence[float], n_datapoints: int, seed: int) -> np.ndarray:
    """0/1 per-cell matrix whose row ``j`` holds exactly
    ``round(accuracies[j] * n_datapoints)`` ones at seeded random positions."""
    rng = np.random.default_rng(seed)
    out = np.zeros((len(accuracies), n_datapoints))
    for j, acc in enumerate(accuracies):
        k = int(round(acc * n_datapoints))
        out[j, rng.permutation(n_datapoints)[:k]] = 1.0
    return out


# --------------------------------------------------------------------------
# cache-backed wrapper


class CachedEvaluator:
    """Routes every evaluation through a :class:`ResponseCache`.

    The payload is the canonical ``{"combo": assignment, "datapoint": k}``
    request, so repeats across runs are served from the cache with their
    original latency.
    """

    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache
        self.serial = getattr(inner, "serial", False)

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        payload = canonical_json({"combo": dict(combo.assignment), "datapoint": datapoint})

        def execute() -> Execution:
            obs = self.inner.evaluate(combo, datapoint)
            return Execution(
                canonical_json(obs.to_dict()), obs.latency_s, obs.input_tokens, obs.output_tokens
            )

        res = self.cache.lookup_or_execute(payload, execute)
        obs = Observation.from_dict(json.loads(res.response_bytes))
        return Observation(
            obs.score, obs.cost_usd, res.latency_s, obs.input_tokens, obs.output_tokens, res.from_cache
        )

    def true_means(self):
        return self.inner.true_means()


class MeteredEvaluator:
    """Counts calls reaching the wrapped evaluator (test and demo helper)."""

    def __init__(self, inner):
        self.inner = inner
        self.serial = getattr(inner, "serial", False)
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        with self._lock:
            self.calls += 1
        return self.inner.evaluate(combo, datapoint)

    def true_means(self):
        return self.inner.true_means()


def evaluate(binding, combo: Combination, datapoint) -> Observation:
    """One arm pull: evaluate ``combo`` on ``datapoint`` with ``binding``."""
    idx = datapoint.index if isinstance(datapoint, DatapointId) else int(datapoint)
    return binding.evaluate(combo, idx)
