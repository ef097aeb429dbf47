"""Domain types shared by every other module: combinations, observations,
the score matrix, prices and the scalar utility."""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_USD = Decimal(0)


class AgentOptError(Exception):
    """Base class for all library errors."""


class EmptyRoleSet(AgentOptError):
    pass


class EmptyCandidateList(AgentOptError):
    def __init__(self, role: str):
        super().__init__(f"role {role!r} has no candidate models")
        self.role = role


class DuplicateCandidate(AgentOptError):
    def __init__(self, role: str, model: str):
        super().__init__(f"model {model!r} listed twice for role {role!r}")
        self.role = role
        self.model = model


class NonFiniteInput(AgentOptError):
    pass


class UnknownModel(AgentOptError):
    def __init__(self, model: str):
        super().__init__(f"no price entry for model {model!r}")
        self.model = model


class IndexOutOfRange(AgentOptError):
    pass


class CellAlreadyObserved(AgentOptError):
    pass


def to_usd(value) -> Decimal:
    """Coerce a number or numeric string to an exact ``Decimal``.

    Floats go through ``repr`` so 0.01 stays 0.01 rather than its binary
    expansion.
    """
    if isinstance(value, Decimal):
        out = value
    elif isinstance(value, bool):
        raise TypeError("boolean is not a currency amount")
    elif isinstance(value, (int, str)):
        out = Decimal(value)
    else:
        out = Decimal(repr(float(value)))
    if not out.is_finite():
        raise NonFiniteInput(f"non-finite currency amount {value!r}")
    return out


# --------------------------------------------------------------------------
# pipeline space


@dataclass(frozen=True)
class Combination:
    index: int
    assignment: Mapping[str, str]

    def models(self) -> tuple[str, ...]:
        return tuple(self.assignment.values())


class PipelineSpace:
    """Cartesian product of per-role candidate lists.

    Combinations are enumerated lexicographically: the last role varies
    fastest, candidate order is the order given.
    """

    def __init__(self, roles: Sequence[str], candidates: Mapping[str, Sequence[str]]):
        roles = tuple(roles)
        if not roles:
            raise EmptyRoleSet("a pipeline needs at least one role")
        if len(set(roles)) != len(roles):
            raise AgentOptError(f"duplicate role names in {roles!r}")
        for role in roles:
            if not role:
                raise AgentOptError("role names must be non-empty")
        cands: dict[str, tuple[str, ...]] = {}
        for role in roles:
            models = tuple(candidates.get(role, ()))
            if not models:
                raise EmptyCandidateList(role)
            seen = set()
            for m in models:
                if not m:
                    raise AgentOptError(f"empty model name for role {role!r}")
                if m in seen:
                    raise DuplicateCandidate(role, m)
                seen.add(m)
            cands[role] = models
        extra = set(candidates) - set(roles)
        if extra:
            raise AgentOptError(f"candidates given for unknown roles {sorted(extra)}")
        self.roles = roles
        self.candidates = cands
        self._sizes = tuple(len(cands[r]) for r in roles)
        self._model_pos = {r: {m: i for i, m in enumerate(cands[r])} for r in roles}

    @property
    def sizes(self) -> tuple[int, ...]:
        return self._sizes

    def __len__(self) -> int:
        return math.prod(self._sizes)

    @property
    def n_combos(self) -> int:
        return len(self)

    def digits(self, index: int) -> tuple[int, ...]:
        """Per-role candidate positions of combination ``index``."""
        if not 0 <= index < len(self):
            raise IndexOutOfRange(f"combination index {index} outside [0, {len(self)})")
        out = []
        for size in reversed(self._sizes):
            index, d = divmod(index, size)
            out.append(d)
        return tuple(reversed(out))

    def index_of_digits(self, digits: Sequence[int]) -> int:
        idx = 0
        for d, size in zip(digits, self._sizes, strict=True):
            if not 0 <= d < size:
                raise IndexOutOfRange(f"candidate position {d} outside [0, {size})")
            idx = idx * size + d
        return idx

    def combination(self, index: int) -> Combination:
        digits = self.digits(index)
        return Combination(
            index, {r: self.candidates[r][d] for r, d in zip(self.roles, digits)}
        )

    def index_of(self, assignment: Mapping[str, str]) -> int:
        if set(assignment) != set(self.roles):
            raise AgentOptError(
                f"assignment roles {sorted(assignment)} do not match {list(self.roles)}"
            )
        digits = []
        for r in self.roles:
            try:
                digits.append(self._model_pos[r][assignment[r]])
            except KeyError:
                raise UnknownModel(assignment[r]) from None
        return self.index_of_digits(digits)

    def combinations(self) -> Iterable[Combination]:
        for i in range(len(self)):
            yield self.combination(i)

    def models(self) -> set[str]:
        return {m for ms in self.candidates.values() for m in ms}

    def neighbors(self, index: int) -> list[int]:
        """Combinations differing from ``index`` in exactly one role, ascending."""
        digits = list(self.digits(index))
        out = []
        for pos, size in enumerate(self._sizes):
            for d in range(size):
                if d == digits[pos]:
                    continue
                nd = digits.copy()
                nd[pos] = d
                out.append(self.index_of_digits(nd))
        return sorted(out)

    def hamming(self, i: int, j: int) -> int:
        return sum(a != b for a, b in zip(self.digits(i), self.digits(j)))

    def digit_matrix(self) -> np.ndarray:
        """``(|C|, n_roles)`` integer array of candidate positions."""
        grids = itertools.product(*(range(s) for s in self._sizes))
        return np.array(list(grids), dtype=np.int64).reshape(len(self), len(self.roles))

    def to_dict(self) -> dict:
        return {"roles": list(self.roles), "candidates": {r: list(c) for r, c in self.candidates.items()}}

    def __eq__(self, other) -> bool:
        return isinstance(other, PipelineSpace) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"PipelineSpace(roles={list(self.roles)}, sizes={list(self._sizes)})"


def build_space(roles: Sequence[str], candidates: Mapping[str, Sequence[str]]) -> PipelineSpace:
    return PipelineSpace(roles, candidates)


# --------------------------------------------------------------------------
# prices and utility


@dataclass(frozen=True)
class ModelPrice:
    input_usd_per_million_tokens: Decimal
    output_usd_per_million_tokens: Decimal

    def __post_init__(self):
        for name in ("input_usd_per_million_tokens", "output_usd_per_million_tokens"):
            v = to_usd(getattr(self, name))
            if v < 0:
                raise AgentOptError(f"{name} must be non-negative, got {v}")
            object.__setattr__(self, name, v)


class PriceTable(dict):
    """``model -> ModelPrice`` with validation helpers."""

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "PriceTable":
        table = cls()
        for model, entry in raw.items():
            if isinstance(entry, ModelPrice):
                table[model] = entry
            elif isinstance(entry, Mapping):
                table[model] = ModelPrice(entry["input"], entry["output"])
            else:
                p_in, p_out = entry
                table[model] = ModelPrice(p_in, p_out)
        return table

    def check_covers(self, space: PipelineSpace) -> None:
        for role in space.roles:
            for m in space.candidates[role]:
                if m not in self:
                    raise UnknownModel(m)

    def to_dict(self) -> dict:
        return {
            m: {"input": str(p.input_usd_per_million_tokens), "output": str(p.output_usd_per_million_tokens)}
            for m, p in self.items()
        }


def call_cost(input_tokens: int, output_tokens: int, model: str, prices: Mapping[str, ModelPrice]) -> Decimal:
    try:
        p = prices[model]
    except KeyError:
        raise UnknownModel(model) from None
    if input_tokens < 0 or output_tokens < 0:
        raise AgentOptError("token counts must be non-negative")
    total = input_tokens * p.input_usd_per_million_tokens + output_tokens * p.output_usd_per_million_tokens
    return total / Decimal(10**6)


@dataclass(frozen=True)
class UtilityWeights:
    lambda_cost: float = 0.0
    lambda_latency: float = 0.0

    def __post_init__(self):
        for name in ("lambda_cost", "lambda_latency"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise AgentOptError(f"{name} must be finite and >= 0, got {v}")


def utility(perf: float, cost_usd, latency_s: float, weights: UtilityWeights) -> float:
    """``perf - lambda_cost * cost - lambda_latency * latency``."""
    cost = float(cost_usd)
    for v in (perf, cost, latency_s):
        if not math.isfinite(v):
            raise NonFiniteInput(f"non-finite utility input {v!r}")
    return perf - weights.lambda_cost * cost - weights.lambda_latency * latency_s


# --------------------------------------------------------------------------
# observations


class ScoreClamp:
    """Clamps scores into [0, 1], counting every adjustment."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def __call__(self, score: float) -> float:
        score = float(score)
        if not math.isfinite(score):
            raise NonFiniteInput(f"non-finite score {score!r}")
        if 0.0 <= score <= 1.0:
            return score
        with self._lock:
            self.count += 1
        return min(1.0, max(0.0, score))


@dataclass(frozen=True)
class Observation:
    score: float
    cost_usd: Decimal = ZERO_USD
    latency_s: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    from_cache: bool = False

    def __post_init__(self):
        score = float(self.score)
        if not (0.0 <= score <= 1.0):
            raise AgentOptError(f"score must lie in [0, 1], got {score}")
        object.__setattr__(self, "score", score)
        cost = to_usd(self.cost_usd)
        if cost < 0:
            raise AgentOptError(f"cost must be >= 0, got {cost}")
        object.__setattr__(self, "cost_usd", cost)
        lat = float(self.latency_s)
        if not math.isfinite(lat) or lat < 0:
            raise AgentOptError(f"latency must be finite and >= 0, got {lat}")
        object.__setattr__(self, "latency_s", lat)
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise AgentOptError("token counts must be >= 0")

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "cost_usd": str(self.cost_usd),
            "latency_s": self.latency_s,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "from_cache": self.from_cache,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(
            score=d["score"],
            cost_usd=to_usd(d.get("cost_usd", 0)),
            latency_s=d.get("latency_s", 0.0),
            input_tokens=int(d.get("input_tokens", 0)),
            output_tokens=int(d.get("output_tokens", 0)),
            from_cache=bool(d.get("from_cache", False)),
        )


# --------------------------------------------------------------------------
# score matrix and confidence bounds


def half_width(n: int, delta: float, n_arms: int) -> float:
    """Anytime Hoeffding radius for [0, 1] scores, union-bounded over arms
    and sample counts: ``sqrt(ln(4 K n^2 / delta) / (2 n))``."""
    if n <= 0:
        return math.inf
    if not 0 < delta < 1:
        raise AgentOptError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(math.log(4 * n_arms * n * n / delta) / (2 * n))


@dataclass(frozen=True)
class CombinationStats:
    combo_index: int
    n: int
    mean_score: float
    mean_latency_s: float
    total_cost_usd: Decimal
    lcb: float
    ucb: float

    @property
    def observed(self) -> bool:
        return self.n > 0


class ScoreMatrix:
    """Partially observed ``|C| x |D|`` grid of observations.

    Writers to distinct cells may run concurrently; each write updates the
    cell and the observed counter under one lock.
    """

    def __init__(self, n_combos: int, n_datapoints: int):
        if n_combos < 1 or n_datapoints < 1:
            raise AgentOptError("score matrix needs at least one row and one column")
        self.n_combos = n_combos
        self.n_datapoints = n_datapoints
        self.scores = np.full((n_combos, n_datapoints), np.nan)
        self.mask = np.zeros((n_combos, n_datapoints), dtype=bool)
        self._cells: dict[tuple[int, int], Observation] = {}
        self._stats_memo: dict[tuple[int, float], CombinationStats] = {}
        self._lock = threading.Lock()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_combos, self.n_datapoints)

    @property
    def n_observed(self) -> int:
        return len(self._cells)

    def _check(self, combo: int, datapoint: int) -> None:
        if not (0 <= combo < self.n_combos and 0 <= datapoint < self.n_datapoints):
            raise IndexOutOfRange(f"cell ({combo}, {datapoint}) outside {self.shape}")

    def record(self, combo: int, datapoint: int, obs: Observation) -> None:
        self._check(combo, datapoint)
        with self._lock:
            if (combo, datapoint) in self._cells:
                raise CellAlreadyObserved(f"cell ({combo}, {datapoint}) already observed")
            self._cells[(combo, datapoint)] = obs
            self.scores[combo, datapoint] = obs.score
            self.mask[combo, datapoint] = True
            for key in [k for k in self._stats_memo if k[0] == combo]:
                del self._stats_memo[key]

    def get(self, combo: int, datapoint: int) -> Observation | None:
        self._check(combo, datapoint)
        return self._cells.get((combo, datapoint))

    def is_observed(self, combo: int, datapoint: int) -> bool:
        return bool(self.mask[combo, datapoint])

    def row_count(self, combo: int) -> int:
        return int(self.mask[combo].sum())

    def row_full(self, combo: int) -> bool:
        return self.row_count(combo) == self.n_datapoints

    def unobserved(self, combo: int) -> np.ndarray:
        return np.flatnonzero(~self.mask[combo])

    def row_observations(self, combo: int) -> list[Observation]:
        return [self._cells[(combo, int(j))] for j in np.flatnonzero(self.mask[combo])]

    def cells(self) -> list[tuple[int, int, Observation]]:
        return sorted((c, d, o) for (c, d), o in self._cells.items())

    def total_cost(self) -> Decimal:
        return sum((o.cost_usd for o in self._cells.values()), ZERO_USD)

    def stats(self, combo: int, delta: float = 0.05) -> CombinationStats:
        if not 0 <= combo < self.n_combos:
            raise IndexOutOfRange(f"combination index {combo} outside [0, {self.n_combos})")
        key = (combo, delta)
        with self._lock:
            memo = self._stats_memo.get(key)
            if memo is not None:
                return memo
            obs = self.row_observations(combo)
        n = len(obs)
        if n == 0:
            out = CombinationStats(combo, 0, math.nan, math.nan, ZERO_USD, 0.0, 1.0)
        else:
            mean = math.fsum(o.score for o in obs) / n
            lat = math.fsum(o.latency_s for o in obs) / n
            cost = sum((o.cost_usd for o in obs), ZERO_USD)
            hw = half_width(n, delta, self.n_combos)
            out = CombinationStats(combo, n, mean, lat, cost, max(0.0, mean - hw), min(1.0, mean + hw))
        with self._lock:
            # a concurrent write to this row may have landed meanwhile
            if self.row_count(combo) == n:
                self._stats_memo[key] = out
        return out


def record(matrix: ScoreMatrix, combo: int, datapoint: int, obs: Observation) -> None:
    matrix.record(combo, datapoint, obs)


def stats(matrix: ScoreMatrix, combo: int, delta: float = 0.05) -> CombinationStats:
    return matrix.stats(combo, delta)


__all__ = [
    "AgentOptError",
    "CellAlreadyObserved",
    "Combination",
    "CombinationStats",
    "DuplicateCandidate",
    "EmptyCandidateList",
    "EmptyRoleSet",
    "IndexOutOfRange",
    "ModelPrice",
    "NonFiniteInput",
    "Observation",
    "PipelineSpace",
    "PriceTable",
    "ScoreClamp",
    "ScoreMatrix",
    "UnknownModel",
    "UtilityWeights",
    "build_space",
    "call_cost",
    "half_width",
    "record",
    "stats",
    "to_usd",
    "utility",
]
