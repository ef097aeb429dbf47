import math
import threading
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentopt.core import (
    CellAlreadyObserved,
    DuplicateCandidate,
    EmptyCandidateList,
    EmptyRoleSet,
    IndexOutOfRange,
    NonFiniteInput,
    Observation,
    PipelineSpace,
    PriceTable,
    ScoreClamp,
    ScoreMatrix,
    UnknownModel,
    UtilityWeights,
    build_space,
    call_cost,
    half_width,
    record,
    stats,
    to_usd,
    utility,
)
from agentopt.fixtures import MODEL_PRICES

# 40-digit Decimal evaluation of sqrt(ln(4*9*64/0.05)/16)
HALF_WIDTH_N8_K9 = 0.8192273148892258


def nine(prefix="m"):
    return [f"{prefix}{i}" for i in range(9)]


class TestSpace:
    def test_cardinalities(self):
        assert len(build_space(["planner", "solver"], {"planner": nine(), "solver": nine()})) == 81
        assert len(build_space(["answerer"], {"answerer": nine()})) == 9

    def test_errors(self):
        with pytest.raises(EmptyRoleSet):
            build_space([], {})
        with pytest.raises(EmptyCandidateList) as e:
            build_space(["critic"], {"critic": []})
        assert e.value.role == "critic"
        with pytest.raises(DuplicateCandidate) as e:
            build_space(["critic"], {"critic": ["A", "A"]})
        assert (e.value.role, e.value.model) == ("critic", "A")

    def test_lexicographic_last_role_fastest(self):
        sp = PipelineSpace(["p", "s"], {"p": ["a", "b"], "s": ["x", "y", "z"]})
        got = [tuple(c.assignment.values()) for c in sp.combinations()]
        assert got == [("a", "x"), ("a", "y"), ("a", "z"), ("b", "x"), ("b", "y"), ("b", "z")]
        assert sp.index_of({"p": "b", "s": "y"}) == 4

    def test_unknown_assignment(self):
        sp = PipelineSpace(["p"], {"p": ["a"]})
        with pytest.raises(UnknownModel):
            sp.index_of({"p": "nope"})
        with pytest.raises(IndexOutOfRange):
            sp.combination(1)

    def test_neighbors_and_hamming(self):
        sp = PipelineSpace(["p", "s"], {"p": ["a", "b"], "s": ["x", "y", "z"]})
        assert sp.neighbors(0) == [1, 2, 3]
        assert all(sp.hamming(0, j) == 1 for j in sp.neighbors(0))
        assert sp.digit_matrix().shape == (6, 2)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=4))
    def test_enumeration_bijection(self, sizes):
        roles = [f"r{i}" for i in range(len(sizes))]
        sp = PipelineSpace(roles, {r: [f"{r}-{k}" for k in range(n)] for r, n in zip(roles, sizes)})
        assert len(sp) == math.prod(sizes)
        seen = set()
        for k in range(len(sp)):
            c = sp.combination(k)
            assert set(c.assignment) == set(roles)
            assert sp.index_of(c.assignment) == k
            seen.add(tuple(c.assignment.values()))
        assert len(seen) == len(sp)


class TestMoney:
    def test_call_cost_examples(self):
        assert call_cost(0, 0, "Claude Opus 4.6", MODEL_PRICES) == Decimal(0)
        assert call_cost(10**6, 10**6, "Claude Opus 4.6", MODEL_PRICES) == Decimal("30.00")
        assert call_cost(10**6, 10**6, "Ministral 3 8B", MODEL_PRICES) == Decimal("0.30")

    def test_sub_micro_prices_stay_exact(self):
        # 0.07 USD per million tokens is 7e-8 USD per token
        assert call_cost(1, 0, "gpt-oss-20b", MODEL_PRICES) == Decimal("0.00000007")

    def test_unknown_model(self):
        with pytest.raises(UnknownModel):
            call_cost(1, 1, "mystery", MODEL_PRICES)

    def test_price_table_forms(self):
        t = PriceTable.from_mapping({"a": {"input": 1, "output": "2.5"}, "b": (0.1, 0.2)})
        assert t["b"].input_usd_per_million_tokens == Decimal("0.1")
        assert PriceTable.from_mapping(t.to_dict()) == t
        with pytest.raises(UnknownModel):
            t.check_covers(PipelineSpace(["r"], {"r": ["a", "c"]}))

    def test_to_usd(self):
        assert to_usd(0.01) == Decimal("0.01")
        with pytest.raises(NonFiniteInput):
            to_usd(float("nan"))


class TestUtility:
    def test_examples(self):
        assert utility(0.7, 123.0, 9.0, UtilityWeights()) == 0.7
        assert utility(0.8, 2.0, 5.0, UtilityWeights(0.1, 0.02)) == pytest.approx(0.5, abs=1e-12)
        assert utility(1.0, 0.0, 0.0, UtilityWeights(3.0, 4.0)) == 1.0

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            utility(float("inf"), 0, 0, UtilityWeights())

    @given(
        st.floats(0, 1),
        st.floats(0, 1e4),
        st.floats(0, 1e4),
        st.floats(0, 10),
        st.floats(0, 10),
    )
    def test_linearity(self, p, c, lat, lc, ll):
        w = UtilityWeights(lc, ll)
        diff = utility(p, c, lat, w) - utility(p, 0, 0, w)
        assert diff == pytest.approx(-lc * c - ll * lat, rel=1e-9, abs=1e-9)


class TestObservation:
    def test_validation(self):
        with pytest.raises(Exception):
            Observation(1.5)
        with pytest.raises(Exception):
            Observation(0.5, -1)
        assert Observation(0.5, 0.25).cost_usd == Decimal("0.25")

    def test_round_trip(self):
        o = Observation(0.25, Decimal("0.0001"), 1.5, 3, 4, True)
        assert Observation.from_dict(o.to_dict()) == o

    def test_clamp_counts(self):
        clamp = ScoreClamp()
        assert [clamp(x) for x in (-0.5, 0.5, 2.0)] == [0.0, 0.5, 1.0]
        assert clamp.count == 2


class TestScoreMatrix:
    def test_record_and_read_back(self):
        m = ScoreMatrix(2, 3)
        o = Observation(0.5, "0.01", 1.0)
        record(m, 0, 1, o)
        assert m.get(0, 1) == o
        assert m.n_observed == 1
        with pytest.raises(CellAlreadyObserved):
            m.record(0, 1, o)
        with pytest.raises(IndexOutOfRange):
            m.record(2, 0, o)

    def test_full_row_count(self):
        m = ScoreMatrix(1, 5)
        for d in range(5):
            m.record(0, d, Observation(1.0))
        assert stats(m, 0).n == 5
        assert m.row_full(0)

    def test_means(self):
        m = ScoreMatrix(2, 4)
        for d in range(4):
            m.record(0, d, Observation(1.0))
        m.record(1, 0, Observation(1.0))
        m.record(1, 1, Observation(0.0))
        assert m.stats(0).mean_score == 1.0
        assert m.stats(1).mean_score == 0.5

    def test_empty_row_flagged(self):
        s = ScoreMatrix(3, 3).stats(1)
        assert s.n == 0 and math.isnan(s.mean_score) and (s.lcb, s.ucb) == (0.0, 1.0)
        with pytest.raises(IndexOutOfRange):
            ScoreMatrix(3, 3).stats(3)

    def test_half_width_value(self):
        assert half_width(8, 0.05, 9) == pytest.approx(HALF_WIDTH_N8_K9, abs=1e-12)

    def test_stats_refresh_after_write(self):
        m = ScoreMatrix(1, 3)
        m.record(0, 0, Observation(1.0))
        assert m.stats(0).mean_score == 1.0
        m.record(0, 1, Observation(0.0))
        assert m.stats(0).mean_score == 0.5

    def test_concurrent_writers(self):
        m = ScoreMatrix(8, 50)

        def fill(row):
            for d in range(50):
                m.record(row, d, Observation(0.5, "0.001"))
                m.stats(row)

        threads = [threading.Thread(target=fill, args=(r,)) for r in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert m.n_observed == 400
        assert all(m.stats(r).n == 50 for r in range(8))
        assert m.total_cost() == Decimal("0.400")

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 10**6)), min_size=1, max_size=40))
    def test_mean_bounds_and_cost_additivity(self, cells):
        m = ScoreMatrix(1, len(cells))
        for d, (score, micro) in enumerate(cells):
            m.record(0, d, Observation(score, Decimal(micro) / 10**6))
        s = m.stats(0)
        assert s.lcb <= s.mean_score <= s.ucb
        assert s.mean_score == math.fsum(c[0] for c in cells) / len(cells)
        assert s.total_cost_usd == sum((Decimal(c[1]) / 10**6 for c in cells), Decimal(0))


def test_ci_coverage():
    rng = np.random.default_rng(0)
    delta, covered, trials = 0.05, 0, 1000
    for _ in range(trials):
        p = rng.uniform()
        n = int(rng.integers(1, 60))
        m = ScoreMatrix(9, n)
        for d, x in enumerate(rng.random(n) < p):
            m.record(0, d, Observation(float(x)))
        s = m.stats(0, delta)
        covered += s.lcb <= p <= s.ucb
    assert covered >= (1 - delta) * trials
