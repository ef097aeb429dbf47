"""Ranking, Pareto frontiers, savings accounting and file exports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from agentopt.core import AgentOptError, to_usd

SIX_PLACES = Decimal("0.000001")
OBJECTIVES_3D = "score-cost-latency"
OBJECTIVES_2D = "score-cost"


class NoBestCombination(AgentOptError):
    pass


class MissingReference(AgentOptError):
    pass


@dataclass(frozen=True)
class ParetoPoint:
    combo_index: int
    mean_score: float
    total_cost_usd: Decimal
    mean_latency_s: float
    label: object = None

    def __post_init__(self):
        object.__setattr__(self, "total_cost_usd", to_usd(self.total_cost_usd))
        if not (math.isfinite(self.mean_score) and math.isfinite(self.mean_latency_s)):
            raise AgentOptError("pareto points need finite values")


def dominates(p: ParetoPoint, q: ParetoPoint, project: str = OBJECTIVES_3D) -> bool:
    """Higher score, lower cost and (unless projected away) lower latency."""
    ge = (
        p.mean_score >= q.mean_score
        and p.total_cost_usd <= q.total_cost_usd
        and (project == OBJECTIVES_2D or p.mean_latency_s <= q.mean_latency_s)
    )
    if not ge:
        return False
    strict = p.mean_score > q.mean_score or p.total_cost_usd < q.total_cost_usd
    if project != OBJECTIVES_2D:
        strict = strict or p.mean_latency_s < q.mean_latency_s
    return strict


def _order_key(p: ParetoPoint, project: str):
    lat = 0.0 if project == OBJECTIVES_2D else p.mean_latency_s
    return (-p.mean_score, p.total_cost_usd, lat)


def pareto_frontier(points: Iterable[ParetoPoint], project: str = OBJECTIVES_3D) -> list[ParetoPoint]:
    """Points not strictly dominated by any other, best score first.

    Sorting by (score desc, cost asc, latency asc) puts every dominator ahead
    of the points it dominates, and a dominated point always has a
    non-dominated dominator, so comparing against the frontier built so far
    is enough.
    """
    if project not in (OBJECTIVES_3D, OBJECTIVES_2D):
        raise AgentOptError(f"unknown projection {project!r}")
    ordered = sorted(points, key=lambda p: (_order_key(p, project), p.mean_latency_s, p.combo_index))
    front: list[ParetoPoint] = []
    for p in ordered:
        if not any(dominates(f, p, project) for f in front):
            front.append(p)
    return front


@dataclass(frozen=True)
class RunTotals:
    evaluations: int | None = None
    total_cost_usd: Decimal | None = None
    grid_size: int | None = None


@dataclass(frozen=True)
class SavingsSummary:
    selector_evaluations: int | None
    brute_force_evaluations: int | None
    savings_fraction: float
    selector_cost_usd: Decimal | None = None
    brute_force_cost_usd: Decimal | None = None

    @property
    def percent(self) -> str:
        return format_percent(self.savings_fraction)


def format_percent(fraction: float) -> str:
    return f"{100.0 * fraction:.1f}%"


def _totals(obj) -> RunTotals:
    if isinstance(obj, RunTotals):
        return obj
    return RunTotals(obj.total_evaluations, obj.total_cost_usd, obj.space.n_combos * obj.n_datapoints)


def savings(report, brute_force_reference) -> SavingsSummary:
    """Fraction of brute-force spend avoided.

    Uses dollar cost when the reference cost is known, otherwise evaluation
    counts against the full grid.
    """
    if brute_force_reference is None:
        raise MissingReference("savings need a brute-force reference")
    sel = _totals(report)
    ref = _totals(brute_force_reference)
    ref_evals = ref.evaluations if ref.evaluations is not None else ref.grid_size
    if ref_evals is None and sel.grid_size is not None:
        ref_evals = sel.grid_size
    if ref.total_cost_usd is not None and ref.total_cost_usd > 0 and sel.total_cost_usd is not None:
        frac = 1.0 - float(to_usd(sel.total_cost_usd) / to_usd(ref.total_cost_usd))
    elif ref_evals and sel.evaluations is not None:
        frac = 1.0 - sel.evaluations / ref_evals
    else:
        raise MissingReference("reference has neither a cost nor an evaluation count")
    return SavingsSummary(sel.evaluations, ref_evals, min(frac, 1.0), sel.total_cost_usd, ref.total_cost_usd)


# --------------------------------------------------------------------------
# exports


def _fmt6(x) -> str:
    if isinstance(x, Decimal):
        return str(x.quantize(SIX_PLACES, rounding=ROUND_HALF_EVEN))
    return f"{x:.6f}"


def csv_header(roles: Sequence[str]) -> list[str]:
    return ["rank", "combo_index", *roles, "mean_score", "n_evals", "mean_latency_s", "total_cost_usd", "on_pareto"]


def render_csv(report) -> str:
    space = report.space
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(space.roles))
    on_front = set(report.pareto_set)
    for rank, idx in enumerate(report.ranked, start=1):
        st = report.stats[idx]
        assignment = space.combination(idx).assignment
        w.writerow(
            [
                rank,
                idx,
                *(assignment[r] for r in space.roles),
                _fmt6(st.mean_score),
                st.n,
                _fmt6(st.mean_latency_s),
                _fmt6(st.total_cost_usd),
                "true" if idx in on_front else "false",
            ]
        )
    return buf.getvalue()


def export_csv(report, path) -> None:
    Path(path).write_bytes(render_csv(report).encode("utf-8"))


def render_config_yaml(report) -> str:
    if report.best is None:
        raise NoBestCombination("report has no evaluated combination")
    assignment = report.space.combination(report.best).assignment
    doc = {
        "roles": {r: assignment[r] for r in report.space.roles},
        "selector": report.selector_name,
        "seed": report.seed,
        "mean_score": round(float(report.stats[report.best].mean_score), 6),
    }
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


def export_config_yaml(report, path) -> None:
    Path(path).write_bytes(render_config_yaml(report).encode("utf-8"))


@dataclass(frozen=True)
class ReportRow:
    source: str
    combo_index: int
    assignment: dict
    mean_score: float
    n_evals: int
    mean_latency_s: float
    total_cost_usd: Decimal


def read_report_csv(path) -> tuple[list[str], list[ReportRow]]:
    """Parse a file written by :func:`export_csv`; returns roles and rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["rank", "combo_index"] or header[-5:] != csv_header([])[2:]:
            raise AgentOptError(f"{path} is not a selection report CSV")
        roles = header[2:-5]
        rows = []
        for rec in reader:
            if not rec:
                continue
            k = len(roles)
            rows.append(
                ReportRow(
                    str(path),
                    int(rec[1]),
                    dict(zip(roles, rec[2 : 2 + k])),
                    float(rec[2 + k]),
                    int(rec[3 + k]),
                    float(rec[4 + k]),
                    Decimal(rec[5 + k]),
                )
            )
    return roles, rows


def merged_frontier(paths: Sequence, project: str = OBJECTIVES_3D) -> tuple[list[str], list[ReportRow]]:
    """Frontier over the union of several reports' rows."""
    roles: list[str] | None = None
    rows: list[ReportRow] = []
    for p in paths:
        r, rs = read_report_csv(p)
        if roles is None:
            roles = r
        elif r != roles:
            raise AgentOptError(f"{p} has roles {r}, expected {roles}")
        rows.extend(rs)
    points = [
        ParetoPoint(row.combo_index, row.mean_score, row.total_cost_usd, row.mean_latency_s, label=i)
        for i, row in enumerate(rows)
    ]
    front = pareto_frontier(points, project)
    seen = set()
    out = []
    for p in front:
        row = rows[p.label]
        key = (tuple(row.assignment.values()), row.mean_score, row.total_cost_usd, row.mean_latency_s)
        if key not in seen:
            seen.add(key)
            out.append(row)
    return roles or [], out


def render_frontier_csv(roles: Sequence[str], rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*roles, "mean_score", "total_cost_usd", "mean_latency_s", "source"])
    for row in rows:
        w.writerow(
            [*(row.assignment[r] for r in roles), _fmt6(row.mean_score), _fmt6(row.total_cost_usd),
             _fmt6(row.mean_latency_s), row.source]
        )
    return buf.getvalue()
