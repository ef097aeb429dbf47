"""Full-dataset baselines: brute force, random subsets, LM-proposed shortlists."""

from __future__ import annotations

import json
import math
from decimal import Decimal
from typing import Callable, Mapping

from agentopt.core import AgentOptError, PipelineSpace, UnknownModel
from agentopt.evalsub.executor import ConcurrencyBudget
from agentopt.selectors.base import BudgetExceedsSpace, Run, SelectionReport, SelectorConfig, rng_for

RANDOM_TAG = 1
LM_FALLBACK_TAG = 2


class ProposerUnavailable(AgentOptError):
    pass


class MalformedProposal(AgentOptError):
    pass


def brute_force(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    run = Run("brute-force", space, dataset, evaluator, config or SelectorConfig(), concurrency)
    run.evaluate_rows(range(run.n_combos))
    return run.report()


def default_random_budget(n_combos: int) -> int:
    return max(1, math.ceil(n_combos / 3))


def random_search(space, dataset, evaluator, config=None, concurrency: ConcurrencyBudget | None = None) -> SelectionReport:
    config = config or SelectorConfig()
    run = Run("random", space, dataset, evaluator, config, concurrency)
    k = config.total_budget_combos or default_random_budget(run.n_combos)
    if k > run.n_combos:
        raise BudgetExceedsSpace(f"budget of {k} combinations exceeds the {run.n_combos} available")
    chosen = sorted(int(j) for j in rng_for(config.seed, RANDOM_TAG).choice(run.n_combos, k, replace=False))
    run.evaluate_rows(chosen)
    return run.report(extras={"chosen": chosen})


# --------------------------------------------------------------------------
# LM proposal


PROMPT_TEMPLATE = """You are choosing language models for the roles of a multi-stage agent pipeline.

Roles, in order: {roles}

Candidate models per role:
{candidates}

Prices in USD per million tokens (input / output):
{prices}

Propose the {k} most promising assignments, best first.
Answer with a JSON array only. Each element must be an object mapping every
role name to exactly one of that role's candidate models, for example:
{example}
"""


def build_proposal_prompt(space: PipelineSpace, prices: Mapping | None, k: int) -> str:
    cand = "\n".join(f"- {r}: {', '.join(space.candidates[r])}" for r in space.roles)
    lines = []
    for m in sorted(space.models()):
        p = (prices or {}).get(m)
        if p is None:
            lines.append(f"- {m}: unknown")
        else:
            lines.append(f"- {m}: {p.input_usd_per_million_tokens} / {p.output_usd_per_million_tokens}")
    example = json.dumps([dict(space.combination(0).assignment)])
    return PROMPT_TEMPLATE.format(
        roles=", ".join(space.roles), candidates=cand, prices="\n".join(lines), k=k, example=example
    )


def parse_proposals(reply, space: PipelineSpace) -> tuple[list[int], list[str]]:
    """Valid combination indices in proposal order, plus warnings for the
    entries that were dropped."""
    warnings = []
    if isinstance(reply, (str, bytes)):
        try:
            items = json.loads(reply)
        except ValueError:
            return [], [f"proposal reply is not JSON: {str(reply)[:120]!r}"]
    else:
        items = reply
    if not isinstance(items, list):
        return [], ["proposal reply is not a JSON array"]
    out: list[int] = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            warnings.append(f"proposal {i} is not an object")
            continue
        if set(item) != set(space.roles):
            warnings.append(f"proposal {i} has roles {sorted(item)}, expected {list(space.roles)}")
            continue
        try:
            idx = space.index_of({r: str(item[r]) for r in space.roles})
        except UnknownModel as exc:
            warnings.append(f"proposal {i}: {exc}")
            continue
        if idx not in out:
            out.append(idx)
    return out, warnings


def lm_proposal(
    space,
    dataset,
    evaluator,
    config=None,
    proposer: Callable[[str], object] | None = None,
    prices: Mapping | None = None,
    concurrency: ConcurrencyBudget | None = None,
) -> SelectionReport:
    """Evaluate the proposer's top ``shortlist_k`` assignments on the full
    dataset; falls back to one seeded-random combination."""
    config = config or SelectorConfig()
    run = Run("lm-proposal", space, dataset, evaluator, config, concurrency)
    prompt = build_proposal_prompt(space, prices, config.shortlist_k)
    proposals: list[int] = []
    if proposer is None:
        run.warn("no proposer configured")
    else:
        try:
            reply = proposer(prompt)
        except Exception as exc:
            run.warn(f"proposer unavailable: {exc}")
        else:
            proposals, problems = parse_proposals(reply, space)
            for msg in problems:
                run.warn(msg)
    shortlist = proposals[: config.shortlist_k]
    fallback = not shortlist
    if fallback:
        run.warn("no valid proposals; evaluating one random combination")
        shortlist = [int(rng_for(config.seed, LM_FALLBACK_TAG).integers(run.n_combos))]
    run.evaluate_rows(shortlist)
    return run.report(extras={"shortlist": shortlist, "fallback": fallback})
