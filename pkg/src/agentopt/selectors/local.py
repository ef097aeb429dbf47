"""Strategies that evaluate whole combinations on the full dataset and
exploit structure in the combination space: hill climbing and Bayesian
optimisation."""

from __future__ import annotations

import math

import numpy as np

from agentopt.core import AgentOptError
from agentopt.evalsub.executor import ConcurrencyBudget
from agentopt.selectors.base import BudgetExceedsSpace, Run, SelectionReport, SelectorConfig, rng_for
from agentopt.surrogates import expected_improvement_from, surrogate_fit

HILL_TAG = 21
BO_TAG = 22


def hill_climbing(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    config = config or SelectorConfig()
    run = Run("hill-climbing", space, dataset, evaluator, config, concurrency)
    done: set[int] = set()

    def ensure(combos) -> None:
        todo = [j for j in combos if j not in done]
        if todo:
            run.evaluate_rows(todo)
            done.update(todo)

    best = None
    paths = []
    for r in range(config.restarts_R):
        current = int(rng_for(config.seed, HILL_TAG, r).integers(run.n_combos))
        ensure([current])
        path = [current]
        while True:
            nbrs = space.neighbors(current)
            if not nbrs:
                break
            ensure(nbrs)
            # strict maximum, ties to the lowest index
            top = max(nbrs, key=lambda j: (run.mean(j), -j))
            if run.mean(top) > run.mean(current):
                current = top
                path.append(current)
            else:
                break
        paths.append(path)
        if best is None or run.mean(current) > run.mean(best):
            best = current
    if best is not None and run.stats(best).n == 0:
        best = None
    return run.report(best, extras={"paths": paths, "evaluated_combos": sorted(done)})


def default_bo_budget(n_combos: int) -> int:
    return max(1, math.ceil(n_combos / 2))


def bayesian_opt(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    """Seeded initial design, then one combination at a time chosen by
    Expected Improvement under a Hamming-kernel GP, scanned exhaustively."""
    config = config or SelectorConfig()
    run = Run("bayes-opt", space, dataset, evaluator, config, concurrency)
    n = run.n_combos
    budget = config.total_budget_combos or default_bo_budget(n)
    if budget > n:
        raise BudgetExceedsSpace(f"budget of {budget} combinations exceeds the {n} available")
    m = min(config.initial_design_m or min(n, 5), budget)
    rng = rng_for(config.seed, BO_TAG)
    order = [int(j) for j in rng.choice(n, m, replace=False)]
    run.evaluate_rows(order)
    digits = space.digit_matrix()
    fallbacks = 0
    while len(order) < budget:
        remaining = np.setdiff1d(np.arange(n), order)
        history = [(digits[j], run.mean(j)) for j in order if run.stats(j).n > 0]
        try:
            if not history:
                raise AgentOptError("no successful evaluations to fit on")
            model = surrogate_fit(history, config.surrogate_gamma, config.surrogate_noise)
            mean, var = model.predict(digits[remaining])
            incumbent = max(y for _, y in history)
            ei = expected_improvement_from(mean, np.sqrt(var), incumbent)
            nxt = int(remaining[int(np.argmax(ei))])
        except AgentOptError as exc:
            run.warn(f"surrogate fit failed ({exc}); picking at random")
            fallbacks += 1
            nxt = int(rng.choice(remaining))
        order.append(nxt)
        run.evaluate_rows([nxt])
    best = run.argmax_mean(order)
    return run.report(best, extras={"order": order, "initial_design": m, "fallbacks": fallbacks})
