"""Command-line entry point.

Subcommands: ``select``, ``replay-import``, ``proxy``, ``pareto``, ``export``.
Exit codes: 0 success, 2 configuration or input error, 3 evaluator
failure, 4 proxy bind or upstream URL error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import subprocess
import sys
from decimal import Decimal
from pathlib import Path

import numpy as np
import yaml

from agentopt.config import ConfigError, RunConfig, load_config
from agentopt.core import AgentOptError, PriceTable
from agentopt.evalsub.cache import ResponseCache
from agentopt.evalsub.evaluators import (
    CachedEvaluator,
    ReplayEvaluator,
    SyntheticBernoulliEvaluator,
    exact_count_probabilities,
    load_replay_csv,
    write_replay_csv,
)
from agentopt.evalsub.external import ExternalProcessEvaluator, ProxyBackedEvaluator
from agentopt.report import (
    OBJECTIVES_2D,
    OBJECTIVES_3D,
    export_config_yaml,
    export_csv,
    merged_frontier,
    render_frontier_csv,
)
from agentopt.selectors import SELECTORS, SelectionReport, select

EXIT_OK, EXIT_CONFIG, EXIT_EVALUATOR, EXIT_PROXY = 0, 2, 3, 4

log = logging.getLogger("agentopt")


def _err(msg: str) -> None:
    print(f"agentopt: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# evaluator construction


class _Evaluators:
    """Builds the evaluator for each seed; long-lived children are shared."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        ev = cfg.evaluator
        self._shared = None
        self._cache = None
        if ev.cache or ev.cache_path:
            self._cache = ResponseCache(cfg.resolve(ev.cache_path))
        if ev.kind == "replay":
            n_d = ev.n_datapoints
            self._shared = ReplayEvaluator.from_csv(cfg.resolve(ev.path), len(cfg.space), n_d)
        elif ev.kind == "external-process":
            self._shared = ExternalProcessEvaluator(ev.argv, timeout_s=ev.timeout_s, cwd=cfg.base_dir)
        elif ev.kind == "proxy-backed":
            child = ExternalProcessEvaluator(ev.argv, timeout_s=ev.timeout_s, cwd=cfg.base_dir)
            self._shared = ProxyBackedEvaluator(child, ev.control_url)
        if self._shared is not None and getattr(self._shared, "n_combos", len(cfg.space)) != len(cfg.space):
            raise ConfigError(
                f"replay matrix has {self._shared.n_combos} rows but the space has {len(cfg.space)} combinations"
            )

    @property
    def n_datapoints(self) -> int:
        ev = self.cfg.evaluator
        if self._shared is not None and hasattr(self._shared, "n_datapoints"):
            return self._shared.n_datapoints
        if ev.n_datapoints is not None:
            return ev.n_datapoints
        return len(ev.probabilities[0])

    def for_seed(self, seed: int):
        ev = self.cfg.evaluator
        if self._shared is not None:
            inner = self._shared
        else:
            fixture_seed = ev.seed + seed
            if ev.accuracies is not None:
                probs = exact_count_probabilities(ev.accuracies, ev.n_datapoints, fixture_seed)
            else:
                probs = ev.probabilities
            inner = SyntheticBernoulliEvaluator(
                probs, ev.n_datapoints, seed=fixture_seed,
                cost_per_eval=ev.cost_per_eval, latency_per_eval=ev.latency_per_eval,
            )
            if inner.n_combos != len(self.cfg.space):
                raise ConfigError(
                    f"synthetic fixture has {inner.n_combos} combinations, the space has {len(self.cfg.space)}"
                )
        return CachedEvaluator(inner, self._cache) if self._cache is not None else inner

    def close(self) -> None:
        if hasattr(self._shared, "close"):
            self._shared.close()
        if self._cache is not None:
            self._cache.close()


def _proposer(cfg: RunConfig):
    spec = cfg.proposer
    if spec is None:
        return None
    if spec["kind"] == "static":
        proposals = spec.get("proposals", [])
        return lambda prompt: json.dumps(proposals)

    def run_command(prompt: str) -> str:
        done = subprocess.run(
            spec["argv"], input=prompt, capture_output=True, text=True,
            timeout=spec.get("timeout_s", 300), cwd=cfg.base_dir, check=True,
        )
        return done.stdout

    return run_command


# --------------------------------------------------------------------------
# select


AGGREGATE_HEADER = (
    "selector", "n_seeds", "mean_true_accuracy", "mean_empirical_score",
    "mean_evals", "mean_cost_usd", "find_rate",
)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def run_select(cfg: RunConfig, out_dir: Path) -> list[SelectionReport]:
    evaluators = _Evaluators(cfg)
    try:
        n_d = evaluators.n_datapoints
        kwargs = {}
        if cfg.selector_name == "lm-proposal":
            kwargs = {"proposer": _proposer(cfg), "prices": cfg.prices}
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
        reports = []
        truth_rows = []
        for seed in cfg.seeds:
            evaluator = evaluators.for_seed(seed)
            selector_cfg = _with_seed(cfg.selector, seed)
            report = select(cfg.selector_name, cfg.space, n_d, evaluator, selector_cfg, cfg.concurrency, **kwargs)
            if report.total_evaluations and report.failed_evaluations == report.total_evaluations:
                raise EvaluatorFailure(f"every evaluation failed for seed {seed}: {report.warnings[:1]}")
            truth = evaluator.true_means() if hasattr(evaluator, "true_means") else None
            truth_rows.append(truth)
            seed_dir = out_dir / f"seed-{seed}"
            seed_dir.mkdir(exist_ok=True)
            export_csv(report, seed_dir / "report.csv")
            if report.best is not None:
                export_config_yaml(report, seed_dir / "best.yaml")
            (seed_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
            reports.append(report)
        (out_dir / "aggregate.csv").write_text(_aggregate(cfg, reports, truth_rows), encoding="utf-8")
        return reports
    finally:
        evaluators.close()


class EvaluatorFailure(AgentOptError):
    pass


def _with_seed(selector_cfg, seed: int):
    import dataclasses

    return dataclasses.replace(selector_cfg, seed=seed)


def _aggregate(cfg: RunConfig, reports, truth_rows) -> str:
    true_acc, emp, found = [], [], []
    for rep, truth in zip(reports, truth_rows):
        if rep.best is None:
            continue
        emp.append(rep.stats[rep.best].mean_score)
        if truth is not None:
            true_acc.append(float(truth[rep.best]))
        if cfg.reference_best is not None:
            found.append(rep.best in cfg.reference_best)
        elif truth is not None:
            found.append(bool(np.isclose(truth[rep.best], np.max(truth))))
    n = len(reports)
    row = [
        cfg.selector_name,
        n,
        _fmt(sum(true_acc) / len(true_acc)) if true_acc else "",
        _fmt(sum(emp) / len(emp)) if emp else "",
        _fmt(sum(r.total_evaluations for r in reports) / n),
        _fmt(float(sum((r.total_cost_usd for r in reports), Decimal(0)) / n)),
        _fmt(sum(found) / len(found)) if found else "",
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    w.writerow(row)
    return buf.getvalue()


def cmd_select(args) -> int:
    if not args.config:
        _err("select needs --config")
        return EXIT_CONFIG
    try:
        overrides = list(args.set or [])
        if args.seed_base is not None or args.seeds is not None:
            overrides += _seed_overrides(args.seed_base, args.seeds)
        cfg = load_config(args.config, overrides)
    except (AgentOptError, ValueError) as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else cfg.resolve(cfg.output_dir)
    try:
        reports = run_select(cfg, out_dir)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (AgentOptError, OSError) as exc:
        _err(f"evaluator failure: {exc}")
        return EXIT_EVALUATOR
    print((out_dir / "aggregate.csv").read_text(), end="")
    best = reports[-1].best_assignment()
    if best is not None:
        print("best (last seed):", json.dumps(best))
    return EXIT_OK


def _seed_overrides(seed_base, seeds) -> list[str]:
    if seeds is not None and "," in seeds:
        return [f"seeds=[{seeds}]", "seed_base=null", "n_seeds=null"]
    base = 0 if seed_base is None else seed_base
    n = 50 if seeds is None else int(seeds)
    return [f"seeds={list(range(base, base + n))}", "seed_base=null", "n_seeds=null"]


# --------------------------------------------------------------------------
# replay-import


def cmd_replay_import(args) -> int:
    try:
        cells = load_replay_csv(args.csv, args.combos, args.datapoints)
    except (AgentOptError, OSError, ValueError) as exc:
        _err(f"replay import failed: {exc}")
        return EXIT_CONFIG
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_replay_csv(out_dir / "replay.csv", cells)
    meta = {"n_combos": len(cells), "n_datapoints": len(cells[0]), "cells": len(cells) * len(cells[0])}
    (out_dir / "replay.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    print(f"imported {meta['cells']} cells ({meta['n_combos']} x {meta['n_datapoints']}) into {out_dir / 'replay.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# proxy


def cmd_proxy(args) -> int:
    from agentopt.proxy import (
        LISTEN_ENV,
        UPSTREAM_ENV,
        BadUpstream,
        ProxyServer,
        ProxyState,
        check_upstream,
        parse_listen,
    )

    space = None
    prices = PriceTable()
    cache_path = args.cache_path
    try:
        if args.config:
            cfg = load_config(args.config, args.set or [])
            space, prices = cfg.space, cfg.prices
            cache_path = cache_path or (str(cfg.resolve(cfg.evaluator.cache_path)) if cfg.evaluator.cache_path else None)
        if args.prices:
            prices = PriceTable.from_mapping(yaml.safe_load(Path(args.prices).read_text()))
    except (AgentOptError, OSError, ValueError, KeyError) as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    upstream = args.upstream or os.environ.get(UPSTREAM_ENV)
    listen = args.listen or os.environ.get(LISTEN_ENV) or "127.0.0.1:8787"
    if not upstream:
        _err("proxy needs --upstream or AGENTOPT_UPSTREAM")
        return EXIT_PROXY
    try:
        check_upstream(upstream)
        host, port = parse_listen(listen)
    except (BadUpstream, ValueError) as exc:
        _err(str(exc))
        return EXIT_PROXY
    cache = ResponseCache(cache_path) if (cache_path or not args.no_cache) else None
    try:
        state = ProxyState(upstream, prices, cache, space)
        server = ProxyServer(state, host, port)
    except OSError as exc:
        _err(f"cannot bind {listen}: {exc}")
        if cache is not None:
            cache.close()
        return EXIT_PROXY
    print(f"proxy listening on {server.url} -> {state.upstream}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
        if args.records_out:
            with open(args.records_out, "w", encoding="utf-8") as fh:
                for rec in state.drain_records():
                    fh.write(json.dumps(rec.to_dict()) + "\n")
        if cache is not None:
            cache.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# pareto and export


def cmd_pareto(args) -> int:
    project = OBJECTIVES_2D if args.project == OBJECTIVES_2D else OBJECTIVES_3D
    try:
        roles, rows = merged_frontier(args.reports, project)
    except (AgentOptError, OSError, ValueError, IndexError) as exc:
        _err(f"cannot read reports: {exc}")
        return EXIT_CONFIG
    sys.stdout.write(render_frontier_csv(roles, rows))
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        report = SelectionReport.from_dict(json.loads(Path(args.report).read_text()))
    except (OSError, ValueError, KeyError, AgentOptError) as exc:
        _err(f"cannot read report: {exc}")
        return EXIT_CONFIG
    out_dir = Path(args.out or Path(args.report).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_csv(report, out_dir / "report.csv")
    if report.best is not None:
        export_config_yaml(report, out_dir / "best.yaml")
    print(f"exported to {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration YAML")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed-base", type=int, help="first seed of a consecutive range")
    common.add_argument("--seeds", help="number of seeds, or a comma-separated seed list")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (dotted key)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="agentopt", description="Choose one model per pipeline role under an evaluation budget.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("select", parents=[common], help="run a selector once per seed")
    s.set_defaults(func=cmd_select)

    r = sub.add_parser("replay-import", parents=[common], help="validate and store a replay matrix")
    r.add_argument("csv")
    r.add_argument("--combos", type=int, required=True)
    r.add_argument("--datapoints", type=int, required=True)
    r.set_defaults(func=cmd_replay_import)

    x = sub.add_parser("proxy", parents=[common], help="run the metering proxy")
    x.add_argument("--listen", help="host:port (env AGENTOPT_LISTEN)")
    x.add_argument("--upstream", help="upstream base URL (env AGENTOPT_UPSTREAM)")
    x.add_argument("--prices", help="price table YAML")
    x.add_argument("--cache-path", help="persistent cache file (env AGENTOPT_CACHE_PATH)")
    x.add_argument("--no-cache", action="store_true")
    x.add_argument("--records-out", help="write call records as JSON lines on shutdown")
    x.set_defaults(func=cmd_proxy)

    f = sub.add_parser("pareto", parents=[common], help="merged Pareto frontier of report CSVs")
    f.add_argument("reports", nargs="+")
    f.add_argument("--project", choices=[OBJECTIVES_3D, OBJECTIVES_2D], default=OBJECTIVES_3D)
    f.set_defaults(func=cmd_pareto)

    e = sub.add_parser("export", parents=[common], help="re-export a saved report.json")
    e.add_argument("report")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
