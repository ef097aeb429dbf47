"""Sample-efficient search for model-to-role assignments in agent pipelines."""

from agentopt.core import (
    Combination,
    CombinationStats,
    Observation,
    PipelineSpace,
    PriceTable,
    ScoreMatrix,
    UtilityWeights,
    build_space,
    call_cost,
    utility,
)
from agentopt.selectors import SELECTORS, SelectionReport, SelectorConfig, select

__version__ = "0.1.0"
