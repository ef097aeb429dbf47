"""Evaluation substrate: evaluators, the response cache and the executor."""

from agentopt.evalsub.cache import (
    CACHE_PATH_ENV,
    CacheEntry,
    CacheIo,
    CacheResult,
    Execution,
    ResponseCache,
    cache_lookup_or_execute,
    canonical_json,
    canonicalize,
    payload_key,
)
from agentopt.evalsub.evaluators import (
    REPLAY_HEADER,
    CachedEvaluator,
    DatapointId,
    DuplicateCell,
    EvaluationFailed,
    Evaluator,
    IncompleteMatrix,
    MeteredEvaluator,
    ReplayEvaluator,
    SyntheticBernoulliEvaluator,
    evaluate,
    exact_count_probabilities,
    load_replay_csv,
    write_replay_csv,
)
from agentopt.evalsub.executor import SEQUENTIAL, ConcurrencyBudget, InFlightMonitor, run_parallel
from agentopt.evalsub.external import (
    ChildExited,
    EvalTimeout,
    ExternalProcessEvaluator,
    ProtocolViolation,
    ProxyBackedEvaluator,
    external_agent_round_trip,
    parse_reply,
)
