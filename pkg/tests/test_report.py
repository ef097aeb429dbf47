from decimal import Decimal

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from agentopt.core import PipelineSpace
from agentopt.evalsub import ReplayEvaluator
from agentopt.report import (
    OBJECTIVES_2D,
    MissingReference,
    NoBestCombination,
    ParetoPoint,
    RunTotals,
    csv_header,
    dominates,
    export_config_yaml,
    export_csv,
    format_percent,
    merged_frontier,
    pareto_frontier,
    read_report_csv,
    render_config_yaml,
    render_csv,
    savings,
)
from agentopt.selectors import SelectionReport, SelectorConfig, brute_force, matrix_ucb_e

SPACE = PipelineSpace(["planner", "solver"], {"planner": ["a", "b"], "solver": ["x", "y", "z"]})


def pt(i, score, cost, lat):
    return ParetoPoint(i, score, Decimal(str(cost)), lat)


def replay_report(seed=0, fn=brute_force, **cfg):
    rng = np.random.default_rng(seed)
    ev = ReplayEvaluator.from_arrays(
        (rng.random((6, 10)) < 0.5).astype(float), costs=rng.integers(1, 9, (6, 10)) / 1000, latencies=rng.random((6, 10))
    )
    return fn(SPACE, 10, ev, SelectorConfig(seed=seed, **cfg))


class TestPareto:
    def test_example(self):
        pts = [pt(0, 0.7, 1, 1.0), pt(1, 0.8, 2, 1.0), pt(2, 0.6, 3, 1.0)]
        assert [p.combo_index for p in pareto_frontier(pts)] == [1, 0]

    def test_identical_points_kept(self):
        pts = [pt(0, 0.5, 1, 1.0), pt(1, 0.5, 1, 1.0)]
        assert len(pareto_frontier(pts)) == 2

    def test_latency_projection(self):
        pts = [pt(0, 0.5, 1, 1.0), pt(1, 0.5, 1, 2.0)]
        assert [p.combo_index for p in pareto_frontier(pts)] == [0]
        assert len(pareto_frontier(pts, OBJECTIVES_2D)) == 2
        slow_cheap = [pt(0, 0.5, 1, 9.0), pt(1, 0.5, 2, 1.0)]
        assert [p.combo_index for p in pareto_frontier(slow_cheap, OBJECTIVES_2D)] == [0]

    def test_empty(self):
        assert pareto_frontier([]) == []

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)), min_size=0, max_size=25
        ),
        st.sampled_from(["score-cost-latency", "score-cost"]),
    )
    def test_minimal_and_complete(self, raw, project):
        pts = [pt(i, s / 4, c, float(l)) for i, (s, c, l) in enumerate(raw)]
        front = pareto_frontier(pts, project)
        ids = {p.combo_index for p in front}
        for p in pts:
            dominated = any(dominates(q, p, project) for q in pts)
            assert (p.combo_index in ids) == (not dominated)


class TestSavings:
    def test_evaluation_counts(self):
        s = savings(RunTotals(357), RunTotals(1782))
        assert s.savings_fraction == pytest.approx(0.79966, abs=1e-5)

    def test_selector_is_brute_force(self):
        rep = replay_report()
        assert savings(rep, rep).savings_fraction == 0.0

    def test_dollars(self):
        s = savings(RunTotals(10, Decimal("1.79")), RunTotals(20, Decimal("4.71")))
        assert round(s.savings_fraction, 4) == 0.6200
        assert s.percent == "62.0%"

    def test_grid_fallback(self):
        rep = replay_report(fn=matrix_ucb_e, budget_fraction_beta=0.5)
        s = savings(rep, RunTotals(grid_size=60))
        assert s.savings_fraction == pytest.approx(0.5)

    def test_missing_reference(self):
        with pytest.raises(MissingReference):
            savings(RunTotals(3), None)
        with pytest.raises(MissingReference):
            savings(RunTotals(3), RunTotals())

    def test_format(self):
        assert format_percent(0.61996) == "62.0%"


class TestExports:
    def test_csv_layout(self):
        rep = replay_report()
        lines = render_csv(rep).splitlines()
        assert lines[0].split(",") == csv_header(["planner", "solver"])
        assert len(lines) == 7
        first = lines[1].split(",")
        assert first[0] == "1" and int(first[1]) == rep.best
        assert all(len(f.split(".")[1]) == 6 for f in (first[4], first[6], first[7]))

    def test_reexport_byte_identical(self, tmp_path):
        rep = replay_report(3)
        export_csv(rep, tmp_path / "a.csv")
        again = SelectionReport.from_dict(rep.to_dict())
        export_csv(again, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_empty_report(self):
        rep = SelectionReport("x", SPACE, 10, {}, [], None, 0, 0, 0, Decimal(0), [], {}, 0)
        assert render_csv(rep) == ",".join(csv_header(SPACE.roles)) + "\n"
        with pytest.raises(NoBestCombination):
            render_config_yaml(rep)

    def test_yaml_role_order(self, tmp_path):
        rep = replay_report(1)
        export_config_yaml(rep, tmp_path / "best.yaml")
        text = (tmp_path / "best.yaml").read_text()
        doc = yaml.safe_load(text)
        assert list(doc["roles"]) == ["planner", "solver"]
        assert doc["roles"] == rep.best_assignment()
        assert text.index("planner") < text.index("solver")

    def test_csv_read_back(self, tmp_path):
        rep = replay_report(2)
        export_csv(rep, tmp_path / "r.csv")
        roles, rows = read_report_csv(tmp_path / "r.csv")
        assert roles == ["planner", "solver"]
        assert [r.combo_index for r in rows] == rep.ranked
        assert sum(r.total_cost_usd for r in rows) == rep.total_cost_usd

    def test_merged_frontier_drops_shared_dominated(self, tmp_path):
        a = replay_report(4)
        export_csv(a, tmp_path / "a.csv")
        export_csv(a, tmp_path / "b.csv")
        roles, rows = merged_frontier([tmp_path / "a.csv", tmp_path / "b.csv"])
        assert sorted(r.combo_index for r in rows) == sorted(a.pareto_set)
