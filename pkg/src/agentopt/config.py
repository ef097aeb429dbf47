"""Run configuration: a strictly validated YAML document.

Example::

    space:
      roles: [answerer]
      candidates: {answerer: [model-a, model-b]}
    prices: {model-a: {input: 1.0, output: 5.0}, model-b: {input: 0.1, output: 0.4}}
    evaluator: {kind: replay, path: replay.csv}
    selector: {name: ucb-e, budget_fraction_beta: 0.2}
    seed_base: 0
    n_seeds: 50

Unknown keys anywhere are rejected. Relative file paths resolve against the
config file's directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from agentopt.core import AgentOptError, PipelineSpace, PriceTable, UnknownModel, UtilityWeights
from agentopt.evalsub.executor import ConcurrencyBudget
from agentopt.selectors import SELECTORS, SelectorConfig

EVALUATOR_KINDS = ("replay", "synthetic-bernoulli", "external-process", "proxy-backed")
DEFAULT_N_SEEDS = 50


class ConfigError(AgentOptError):
    pass


def _strict(section: str, raw, allowed) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{section} must be a mapping")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(map(str, unknown)))}")
    return dict(raw)


@dataclass
class EvaluatorConfig:
    kind: str
    path: str | None = None
    probabilities: list | None = None
    accuracies: list | None = None
    n_datapoints: int | None = None
    cost_per_eval: Any = None
    latency_per_eval: Any = None
    seed: int = 0
    argv: list[str] | None = None
    timeout_s: float = 300.0
    control_url: str | None = None
    cache: bool = False
    cache_path: str | None = None

    def __post_init__(self):
        if self.kind not in EVALUATOR_KINDS:
            raise ConfigError(f"evaluator.kind must be one of {', '.join(EVALUATOR_KINDS)}, got {self.kind!r}")
        if self.kind == "replay" and not self.path:
            raise ConfigError("replay evaluator needs evaluator.path")
        if self.kind == "synthetic-bernoulli":
            if (self.probabilities is None) == (self.accuracies is None):
                raise ConfigError("synthetic evaluator needs exactly one of probabilities or accuracies")
            if self.n_datapoints is None and (self.accuracies is not None or _is_vector(self.probabilities)):
                raise ConfigError("synthetic evaluator needs evaluator.n_datapoints")
        if self.kind in ("external-process", "proxy-backed"):
            if not self.argv:
                raise ConfigError(f"{self.kind} evaluator needs evaluator.argv")
            if self.n_datapoints is None:
                raise ConfigError(f"{self.kind} evaluator needs evaluator.n_datapoints")
        if self.kind == "proxy-backed" and not self.control_url:
            raise ConfigError("proxy-backed evaluator needs evaluator.control_url")


def _is_vector(x) -> bool:
    return x is not None and len(x) > 0 and not isinstance(x[0], (list, tuple))


@dataclass
class RunConfig:
    space: PipelineSpace
    prices: PriceTable
    evaluator: EvaluatorConfig
    selector_name: str
    selector: SelectorConfig
    utility: UtilityWeights = field(default_factory=UtilityWeights)
    concurrency: ConcurrencyBudget = field(default_factory=ConcurrencyBudget)
    output_dir: str = "out"
    seeds: list[int] = field(default_factory=lambda: list(range(DEFAULT_N_SEEDS)))
    proposer: dict | None = None
    reference_best: list[int] | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def to_dict(self) -> dict:
        sel = {"name": self.selector_name}
        defaults = SelectorConfig().to_dict()
        for k, v in self.selector.to_dict().items():
            if k != "seed" and v != defaults[k]:
                sel[k] = v
        if self.proposer is not None:
            sel["proposer"] = self.proposer
        ev = {
            f.name: getattr(self.evaluator, f.name)
            for f in dataclasses.fields(EvaluatorConfig)
            if f.name == "kind" or getattr(self.evaluator, f.name) != f.default
        }
        doc = {
            "space": self.space.to_dict(),
            "prices": self.prices.to_dict(),
            "evaluator": ev,
            "selector": sel,
            "utility": dataclasses.asdict(self.utility),
            "concurrency": dataclasses.asdict(self.concurrency),
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
        }
        if self.reference_best is not None:
            doc["reference_best"] = list(self.reference_best)
        return doc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)


TOP_KEYS = (
    "space", "prices", "prices_file", "evaluator", "selector", "utility", "concurrency",
    "output_dir", "seeds", "seed_base", "n_seeds", "reference_best",
)
SELECTOR_KEYS = ("name", "proposer", *(f.name for f in dataclasses.fields(SelectorConfig) if f.name != "seed"))


def parse_config(raw: Mapping, base_dir: Path | str = ".") -> RunConfig:
    base_dir = Path(base_dir)
    top = _strict("config", raw, TOP_KEYS)

    space_raw = _strict("space", top.get("space"), ("roles", "candidates"))
    if "roles" not in space_raw or "candidates" not in space_raw:
        raise ConfigError("space needs roles and candidates")
    space = PipelineSpace(space_raw["roles"], space_raw["candidates"])

    if "prices" in top and "prices_file" in top:
        raise ConfigError("give prices or prices_file, not both")
    if "prices_file" in top:
        path = Path(top["prices_file"])
        path = path if path.is_absolute() else base_dir / path
        try:
            prices_raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read price file {path}: {exc}") from None
    else:
        prices_raw = top.get("prices")
    if not isinstance(prices_raw, Mapping):
        raise ConfigError("prices must map model names to {input, output}")
    try:
        prices = PriceTable.from_mapping(
            {m: _strict(f"prices.{m}", v, ("input", "output")) if isinstance(v, Mapping) else v
             for m, v in prices_raw.items()}
        )
    except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
        raise ConfigError(f"bad price entry: {exc}") from None
    try:
        prices.check_covers(space)
    except UnknownModel as exc:
        raise ConfigError(f"missing price for model {exc.model!r}") from None

    ev_raw = _strict("evaluator", top.get("evaluator"), [f.name for f in dataclasses.fields(EvaluatorConfig)])
    if "kind" not in ev_raw:
        raise ConfigError("evaluator.kind is required")
    try:
        evaluator = EvaluatorConfig(**ev_raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    sel_raw = _strict("selector", top.get("selector"), SELECTOR_KEYS)
    name = sel_raw.pop("name", None)
    if name not in SELECTORS:
        raise ConfigError(f"selector.name must be one of {', '.join(SELECTORS)}, got {name!r}")
    proposer = sel_raw.pop("proposer", None)
    if proposer is not None:
        _strict("selector.proposer", proposer, ("kind", "proposals", "argv", "timeout_s"))
        if proposer.get("kind") not in ("static", "command"):
            raise ConfigError("selector.proposer.kind must be static or command")
    try:
        selector = SelectorConfig(**sel_raw)
        utility = UtilityWeights(**_strict("utility", top.get("utility"), ("lambda_cost", "lambda_latency")))
        concurrency = ConcurrencyBudget(
            **_strict("concurrency", top.get("concurrency"), ("max_combos_in_flight", "max_datapoints_per_combo"))
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    given = {k for k in ("seeds", "seed_base", "n_seeds") if top.get(k) is not None}
    if "seeds" in given and given != {"seeds"}:
        raise ConfigError("give seeds or seed_base/n_seeds, not both")
    if "seeds" in given:
        seeds = [int(s) for s in top["seeds"]]
    else:
        base = int(top.get("seed_base") or 0)
        n = top.get("n_seeds")
        seeds = list(range(base, base + int(DEFAULT_N_SEEDS if n is None else n)))
    if not seeds:
        raise ConfigError("at least one seed is required")

    ref = top.get("reference_best")
    if ref is not None:
        ref = [int(ref)] if isinstance(ref, int) else [int(r) for r in ref]

    return RunConfig(
        space=space,
        prices=prices,
        evaluator=evaluator,
        selector_name=name,
        selector=selector,
        utility=utility,
        concurrency=concurrency,
        output_dir=str(top.get("output_dir", "out")),
        seeds=seeds,
        proposer=proposer,
        reference_best=ref,
        base_dir=base_dir,
    )


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML."""
    raw = dict(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            child = node.get(p)
            child = dict(child) if isinstance(child, Mapping) else {}
            node[p] = child
            node = child
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a mapping")
    return parse_config(apply_overrides(raw, overrides), path.parent)
