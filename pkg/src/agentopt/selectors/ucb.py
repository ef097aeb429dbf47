"""Matrix UCB-E and its low-rank-guided variant.

Both treat the combination x datapoint grid as the search object, spend a
fixed fraction of it, and return the best empirical mean among observed rows.
"""

from __future__ import annotations

import math

import numpy as np

from agentopt.core import AgentOptError, CombinationStats
from agentopt.evalsub.executor import ConcurrencyBudget
from agentopt.selectors.base import Run, SelectionReport, SelectorConfig, observation_budget, rng_for
from agentopt.surrogates import ensemble_stats, fit_ensemble

UCB_TAG = 11
WARMUP_TAG = 12
ENSEMBLE_TAG = 13


def ucb_index(stats: CombinationStats, a: float, fully_observed: bool) -> float:
    if fully_observed:
        return -math.inf
    if stats.n == 0:
        return math.inf
    return stats.mean_score + math.sqrt(a / stats.n)


def _row_ucbs(run: Run, a: float) -> np.ndarray:
    counts, means = run.counts_and_means()
    with np.errstate(divide="ignore", invalid="ignore"):
        ucb = means + np.sqrt(a / counts)
    ucb[counts == 0] = np.inf
    ucb[counts == run.n_datapoints] = -np.inf
    return ucb


def _ucb_steps(run: Run, budget: int, n_obs: int, step: int) -> tuple[int, int]:
    cfg = run.config
    while n_obs < budget:
        ucb = _row_ucbs(run, cfg.exploration_weight_a)
        j = int(np.argmax(ucb))  # first maximum, so ties go to the lowest index
        if ucb[j] == -np.inf:
            break
        unobserved = run.matrix.unobserved(j)
        k = min(cfg.batch_size_B, budget - n_obs, len(unobserved))
        picks = np.sort(rng_for(cfg.seed, UCB_TAG, j, step).choice(unobserved, k, replace=False))
        n_obs += run.evaluate([(j, int(d)) for d in picks])
        step += 1
    return n_obs, step


def matrix_ucb_e(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    config = config or SelectorConfig()
    run = Run("ucb-e", space, dataset, evaluator, config, concurrency)
    budget = observation_budget(config.budget_fraction_beta, run.n_combos, run.n_datapoints)
    n_obs, steps = _ucb_steps(run, budget, 0, 0)
    return run.report(extras={"budget": budget, "attempted": n_obs, "steps": steps})


def matrix_ucb_e_lrf(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    """Random warmup, then rows chosen by the mean of per-cell optimistic
    predictions from a dropout ALS ensemble, sampling the row's most
    uncertain unobserved cells."""
    config = config or SelectorConfig()
    run = Run("ucb-e-lrf", space, dataset, evaluator, config, concurrency)
    budget = observation_budget(config.budget_fraction_beta, run.n_combos, run.n_datapoints)
    grid = run.n_combos * run.n_datapoints
    n_obs = 0
    step = 0
    guided = 0
    fell_back = False
    while n_obs < budget:
        mask = run.matrix.mask
        if n_obs / grid < config.warmup_w:
            free = np.flatnonzero(~mask.ravel())
            if len(free) == 0:
                break
            k = min(config.batch_size_B, budget - n_obs, len(free))
            picks = np.sort(rng_for(config.seed, WARMUP_TAG, step).choice(free, k, replace=False))
            n_obs += run.evaluate([divmod(int(f), run.n_datapoints) for f in picks])
            step += 1
            continue
        try:
            members = fit_ensemble(
                run.matrix,
                config.rank_r,
                config.ensemble_E,
                config.dropout_p,
                seed=int(rng_for(config.seed, ENSEMBLE_TAG, step).integers(2**63)),
                iters=config.als_iters,
            )
            ens = ensemble_stats(members)
        except AgentOptError as exc:
            run.warn(f"surrogate fit failed ({exc}); continuing with plain UCB-E")
            fell_back = True
            n_obs, step = _ucb_steps(run, budget, n_obs, step)
            break
        cell_ucb = np.where(mask, run.matrix.scores, ens.mu_hat + config.uncertainty_eta * ens.sigma_hat)
        row_ucb = cell_ucb.mean(axis=1)
        # a full row has nothing left to sample
        row_ucb[mask.all(axis=1)] = -np.inf
        j = int(np.argmax(row_ucb))
        if row_ucb[j] == -np.inf:
            break
        unobserved = run.matrix.unobserved(j)
        k = min(config.batch_size_B, budget - n_obs, len(unobserved))
        order = np.lexsort((unobserved, -ens.sigma_hat[j, unobserved]))
        picks = np.sort(unobserved[order[:k]])
        n_obs += run.evaluate([(j, int(d)) for d in picks])
        step += 1
        guided += 1
    return run.report(
        extras={"budget": budget, "attempted": n_obs, "steps": step, "guided_steps": guided, "fell_back": fell_back}
    )
