"""Published benchmark numbers used to build synthetic fixtures.

Prices are on-demand USD per million input/output tokens. The GPQA Diamond
table lists brute-force accuracy, mean latency and total cost per model
over 198 questions.
"""

from __future__ import annotations

from decimal import Decimal

from agentopt.core import PipelineSpace, PriceTable
from agentopt.evalsub.evaluators import SyntheticBernoulliEvaluator, exact_count_probabilities

MODEL_PRICES = PriceTable.from_mapping(
    {
        "Claude Opus 4.6": ("5.00", "25.00"),
        "Claude Haiku 4.5": ("1.00", "5.00"),
        "Claude 3 Haiku": ("0.25", "1.25"),
        "gpt-oss-120b": ("0.15", "0.60"),
        "gpt-oss-20b": ("0.07", "0.30"),
        "Kimi K2.5": ("0.60", "3.00"),
        "Qwen3 Next 80B A3B": ("0.15", "1.20"),
        "Qwen3 32B": ("0.15", "0.60"),
        "Ministral 3 8B": ("0.15", "0.15"),
    }
)

GPQA_N_DATAPOINTS = 198

# (model, accuracy, mean latency s, brute-force cost USD), brute-force rank order
GPQA_BRUTE_FORCE = (
    ("Claude Opus 4.6", 0.7475, 9.16, "2.47"),
    ("Kimi K2.5", 0.7273, 16.41, "1.13"),
    ("gpt-oss-120b", 0.6818, 6.46, "0.19"),
    ("Claude Haiku 4.5", 0.5960, 3.70, "0.52"),
    ("Qwen3 Next 80B A3B", 0.5101, 10.33, "0.13"),
    ("gpt-oss-20b", 0.5000, 6.21, "0.13"),
    ("Qwen3 32B", 0.4697, 1.54, "0.07"),
    ("Ministral 3 8B", 0.3687, 0.25, "0.007"),
    ("Claude 3 Haiku", 0.3485, 1.79, "0.056"),
)

GPQA_ACCURACIES = tuple(row[1] for row in GPQA_BRUTE_FORCE)

# Mean evaluation counts over 50 seeds from the GPQA selector comparison
GPQA_MEAN_EVALS = {
    "brute-force": 1782,
    ("ucb-e", 0.5): 891,
    ("ucb-e", 0.3): 535,
    ("ucb-e", 0.2): 357,
    ("ucb-e", 0.1): 179,
    "lm-proposal": 198,
    "random": 594,
    "bayes-opt": 990,
}

# Brute-force reference cost and the UCB-E (beta 0.2) run cost on GPQA
GPQA_BRUTE_FORCE_COST = Decimal("4.71")
GPQA_UCB_E_02_COST = Decimal("1.79")


def gpqa_space() -> PipelineSpace:
    return PipelineSpace(["answerer"], {"answerer": [row[0] for row in GPQA_BRUTE_FORCE]})


def gpqa_synthetic(seed: int, n_datapoints: int = GPQA_N_DATAPOINTS) -> SyntheticBernoulliEvaluator:
    """Per-cell 0/1 fixture whose rows reproduce the published accuracies
    exactly, with correct answers at seeded positions and per-call cost and
    latency taken from the brute-force table."""
    probs = exact_count_probabilities(GPQA_ACCURACIES, n_datapoints, seed)
    costs = [Decimal(row[3]) / GPQA_N_DATAPOINTS for row in GPQA_BRUTE_FORCE]
    latencies = [row[2] for row in GPQA_BRUTE_FORCE]
    return SyntheticBernoulliEvaluator(probs, seed=seed, cost_per_eval=costs, latency_per_eval=latencies)
