"""Search strategies over model combinations.

Every selector has the signature
``select(space, dataset, evaluator, config=None, concurrency=None)`` and
returns a :class:`SelectionReport`; ``dataset`` is a datapoint count or a
sequence of datapoints.
"""

from agentopt.selectors.base import (
    BudgetExceedsSpace,
    Run,
    SelectionReport,
    SelectorConfig,
    elimination_batches,
    observation_budget,
    rank_key,
)
from agentopt.selectors.elimination import arm_elimination, epsilon_lucb, threshold_se, threshold_se_report
from agentopt.selectors.exhaustive import (
    MalformedProposal,
    ProposerUnavailable,
    brute_force,
    build_proposal_prompt,
    lm_proposal,
    parse_proposals,
    random_search,
)
from agentopt.selectors.local import bayesian_opt, hill_climbing
from agentopt.selectors.ucb import matrix_ucb_e, matrix_ucb_e_lrf, ucb_index

SELECTORS = {
    "brute-force": brute_force,
    "random": random_search,
    "ucb-e": matrix_ucb_e,
    "ucb-e-lrf": matrix_ucb_e_lrf,
    "arm-elimination": arm_elimination,
    "epsilon-lucb": epsilon_lucb,
    "threshold-se": threshold_se_report,
    "hill-climbing": hill_climbing,
    "bayes-opt": bayesian_opt,
    "lm-proposal": lm_proposal,
}


def select(name: str, space, dataset, evaluator, config=None, concurrency=None, **kwargs) -> SelectionReport:
    try:
        fn = SELECTORS[name]
    except KeyError:
        raise ValueError(f"unknown selector {name!r}; choose from {sorted(SELECTORS)}") from None
    return fn(space, dataset, evaluator, config, concurrency=concurrency, **kwargs)
