"""Two-role pipeline on a synthetic planner x solver grid.

Success probability is the product of a planner quality and a solver
quality, so the true score matrix is rank one. The script runs plain UCB-E
and the low-rank variant at the same budget, then prints the merged
score/cost/latency frontier of the brute-force run.

    python3 scripts/two_role_frontier.py --seeds 20 --beta 0.2
"""

from __future__ import annotations

import argparse

import numpy as np

from agentopt.core import PipelineSpace
from agentopt.evalsub import SyntheticBernoulliEvaluator
from agentopt.report import ParetoPoint, pareto_frontier
from agentopt.selectors import SelectorConfig, select

PLANNERS = {"planner-xl": 0.95, "planner-l": 0.9, "planner-m": 0.8, "planner-s": 0.65}
SOLVERS = {"solver-xl": 0.9, "solver-l": 0.85, "solver-m": 0.7, "solver-s": 0.55, "solver-xs": 0.4}
PRICE = {"planner-xl": 0.02, "planner-l": 0.01, "planner-m": 0.004, "planner-s": 0.001,
         "solver-xl": 0.015, "solver-l": 0.006, "solver-m": 0.003, "solver-s": 0.001, "solver-xs": 0.0005}
LATENCY = {"planner-xl": 6.0, "planner-l": 4.0, "planner-m": 2.0, "planner-s": 1.0,
           "solver-xl": 5.0, "solver-l": 3.0, "solver-m": 1.5, "solver-s": 0.8, "solver-xs": 0.5}


def build(n_datapoints: int, seed: int):
    space = PipelineSpace(["planner", "solver"], {"planner": list(PLANNERS), "solver": list(SOLVERS)})
    rows = [space.combination(j).assignment for j in range(len(space))]
    probs = [PLANNERS[a["planner"]] * SOLVERS[a["solver"]] for a in rows]
    costs = [f"{PRICE[a['planner']] + PRICE[a['solver']]:.4f}" for a in rows]
    lats = [LATENCY[a["planner"]] + LATENCY[a["solver"]] for a in rows]
    ev = SyntheticBernoulliEvaluator(probs, n_datapoints, seed=seed, cost_per_eval=costs, latency_per_eval=lats)
    return space, ev


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--datapoints", type=int, default=100)
    ap.add_argument("--beta", type=float, default=0.2)
    args = ap.parse_args()

    for name in ("ucb-e", "ucb-e-lrf"):
        acc, found, evals = [], [], []
        for s in range(args.seeds):
            space, ev = build(args.datapoints, s)
            truth = ev.true_means()
            rep = select(name, space, args.datapoints, ev, SelectorConfig(seed=s, budget_fraction_beta=args.beta))
            acc.append(truth[rep.best])
            found.append(bool(np.isclose(truth[rep.best], truth.max())))
            evals.append(rep.total_evaluations)
        print(f"{name:<10} evals {np.mean(evals):7.1f}  true acc {np.mean(acc):.4f}  found {np.mean(found):.2f}")

    space, ev = build(args.datapoints, 0)
    rep = select("brute-force", space, args.datapoints, ev, SelectorConfig())
    pts = [ParetoPoint(j, st.mean_score, st.total_cost_usd, st.mean_latency_s) for j, st in rep.stats.items()]
    print("\nbrute-force frontier (score, total cost, mean latency):")
    for p in pareto_frontier(pts):
        a = space.combination(p.combo_index).assignment
        print(f"  {a['planner']:<11} {a['solver']:<10} {p.mean_score:.3f}  ${p.total_cost_usd}  {p.mean_latency_s:.1f}s")


if __name__ == "__main__":
    main()
