"""Confidence-interval driven bandit strategies: arm elimination,
epsilon-LUCB and threshold successive elimination."""

from __future__ import annotations

from agentopt.evalsub.executor import ConcurrencyBudget
from agentopt.selectors.base import Run, SelectionReport, SelectorConfig, elimination_batches, rank_key


def arm_elimination(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    config = config or SelectorConfig()
    run = Run("arm-elimination", space, dataset, evaluator, config, concurrency)
    active = list(range(run.n_combos))
    start = 0
    rounds = []
    for b in elimination_batches(run.n_datapoints, config.elimination_schedule):
        batch = range(start, start + b)
        start += b
        run.evaluate([(j, d) for j in active for d in batch])
        stats = {j: run.stats(j) for j in active}
        best_lcb = max(s.lcb for s in stats.values())
        survivors = [j for j in active if stats[j].ucb >= best_lcb]
        rounds.append({"batch": b, "eliminated": [j for j in active if j not in survivors]})
        active = survivors
        if len(active) == 1:
            break
    best = run.argmax_mean(active)
    return run.report(best, extras={"survivors": active, "rounds": rounds})


def epsilon_lucb(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    config = config or SelectorConfig()
    run = Run("epsilon-lucb", space, dataset, evaluator, config, concurrency)
    n_d = run.n_datapoints
    B = config.batch_size_B
    cap = run.n_combos * n_d
    nxt = [0] * run.n_combos
    attempted = 0

    def pull(arms) -> int:
        cells = []
        for j in arms:
            stop = min(nxt[j] + B, n_d)
            cells.extend((j, d) for d in range(nxt[j], stop))
            nxt[j] = stop
        return run.evaluate(cells)

    attempted += pull(range(run.n_combos))
    rounds = 0
    stop_reason = "single-arm"
    leader = run.argmax_mean()
    while run.n_combos > 1:
        stats = [run.stats(j) for j in range(run.n_combos)]
        observed = [s for s in stats if s.n > 0]
        leader = min(observed, key=rank_key).combo_index if observed else 0
        challenger = max(
            (j for j in range(run.n_combos) if j != leader), key=lambda j: (stats[j].ucb, -j)
        )
        if stats[leader].lcb >= stats[challenger].ucb - config.epsilon:
            stop_reason = "separated"
            break
        if nxt[leader] >= n_d or nxt[challenger] >= n_d:
            stop_reason = "data-exhausted"
            break
        if attempted >= cap:
            stop_reason = "budget"
            break
        attempted += pull((leader, challenger))
        rounds += 1
    return run.report(leader, extras={"rounds": rounds, "stop_reason": stop_reason})


ABOVE, BELOW, UNCERTAIN = "above", "below", "uncertain"


def threshold_se(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None):
    """Classify every combination against ``threshold_tau``.

    Returns ``(above, report)``; ``above`` is the set of combinations judged
    above the threshold.
    """
    config = config or SelectorConfig()
    tau = config.threshold_tau
    run = Run("threshold-se", space, dataset, evaluator, config, concurrency)
    status = {j: UNCERTAIN for j in range(run.n_combos)}
    start = 0
    rounds = 0
    for b in elimination_batches(run.n_datapoints, config.elimination_schedule):
        pending = [j for j, s in status.items() if s == UNCERTAIN]
        if not pending:
            break
        rounds += 1
        batch = range(start, start + b)
        start += b
        run.evaluate([(j, d) for j in pending for d in batch])
        for j in pending:
            st = run.stats(j)
            if st.n and st.lcb > tau:
                status[j] = ABOVE
            elif st.n and st.ucb < tau:
                status[j] = BELOW
    unresolved = sorted(j for j, s in status.items() if s == UNCERTAIN)
    for j in unresolved:
        st = run.stats(j)
        status[j] = ABOVE if st.n and st.mean_score > tau else BELOW
    above = sorted(j for j, s in status.items() if s == ABOVE)
    below = sorted(j for j, s in status.items() if s == BELOW)
    report = run.report(
        extras={"above": above, "below": below, "resolved_at_exhaustion": unresolved, "tau": tau, "rounds": rounds}
    )
    return set(above), report


def threshold_se_report(space, dataset, evaluator, config=None, concurrency=None) -> SelectionReport:
    return threshold_se(space, dataset, evaluator, config, concurrency)[1]
