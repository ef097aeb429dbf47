import random
import threading
import time
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentopt.core import Observation, PipelineSpace
from agentopt.evalsub import (
    CACHE_PATH_ENV,
    CachedEvaluator,
    ChildExited,
    ConcurrencyBudget,
    DatapointId,
    DuplicateCell,
    EvalTimeout,
    EvaluationFailed,
    Execution,
    ExternalProcessEvaluator,
    IncompleteMatrix,
    InFlightMonitor,
    ProtocolViolation,
    ReplayEvaluator,
    ResponseCache,
    SyntheticBernoulliEvaluator,
    cache_lookup_or_execute,
    canonicalize,
    evaluate,
    exact_count_probabilities,
    external_agent_round_trip,
    load_replay_csv,
    payload_key,
    run_parallel,
    write_replay_csv,
)

SPACE = PipelineSpace(["r"], {"r": [f"m{i}" for i in range(5)]})


def combo(i):
    return SPACE.combination(i)


# --------------------------------------------------------------------------
# evaluators


class TestReplay:
    def test_cell_identity(self):
        scores = np.zeros((5, 20))
        scores[3, 17] = 1.0
        costs = np.full((5, 20), "0.00", dtype=object)
        costs[3, 17] = "0.01"
        lat = np.zeros((5, 20))
        lat[3, 17] = 0.5
        ev = ReplayEvaluator.from_arrays(scores, costs, lat)
        assert evaluate(ev, combo(3), DatapointId(17)) == Observation(1.0, Decimal("0.01"), 0.5)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ev = ReplayEvaluator.from_arrays(rng.random((3, 4)), costs=[0.1, 0.2, 0.3], latencies=1.5)
        path = tmp_path / "m.csv"
        write_replay_csv(path, ev.cells)
        assert load_replay_csv(path, 3, 4) == ev.cells

    def test_incomplete_and_duplicate(self, tmp_path):
        ev = ReplayEvaluator.from_arrays(np.ones((2, 2)))
        path = tmp_path / "m.csv"
        write_replay_csv(path, ev.cells)
        lines = path.read_text().splitlines()
        (tmp_path / "missing.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(IncompleteMatrix):
            load_replay_csv(tmp_path / "missing.csv", 2, 2)
        (tmp_path / "dup.csv").write_text("\n".join(lines + [lines[1]]) + "\n")
        with pytest.raises(DuplicateCell):
            load_replay_csv(tmp_path / "dup.csv", 2, 2)


class TestSynthetic:
    def test_degenerate_probability(self):
        ev = SyntheticBernoulliEvaluator([1.0, 0.0, 0.5, 0.5, 0.5], 30, seed=1)
        assert all(ev.evaluate(combo(0), d).score == 1.0 for d in range(30))
        assert all(ev.evaluate(combo(1), d).score == 0.0 for d in range(30))

    def test_determinism(self):
        a = SyntheticBernoulliEvaluator([0.3] * 5, 50, seed=7)
        b = SyntheticBernoulliEvaluator([0.3] * 5, 50, seed=7)
        assert all(a.evaluate(combo(i), d) == b.evaluate(combo(i), d) == a.evaluate(combo(i), d)
                   for i in range(5) for d in range(50))

    def test_exact_counts(self):
        p = exact_count_probabilities([0.7475, 0.5], 198, seed=3)
        assert p.sum(axis=1).tolist() == [148, 99]

    def test_bad_probability(self):
        with pytest.raises(Exception):
            SyntheticBernoulliEvaluator([1.2], 3)


# --------------------------------------------------------------------------
# cache


def _exec(body=b"resp", latency=0.75):
    calls = []

    def run():
        calls.append(1)
        return Execution(body, latency, 3, 4)

    return run, calls


class TestCache:
    def test_second_call_is_free(self):
        cache = ResponseCache(use_env=False)
        run, calls = _exec()
        first = cache_lookup_or_execute(cache, b'{"a": 1, "b": 2}', run)
        second = cache.lookup_or_execute(b'{"b":2,"a":1}', run)
        assert len(calls) == 1
        assert (first.from_cache, second.from_cache) == (False, True)
        assert second.latency_s == first.latency_s == 0.75
        assert second.response_bytes == b"resp"

    def test_canonicalization(self):
        assert canonicalize(b'{ "b": 1, "a": [1, 2] }') == b'{"a":[1,2],"b":1}'
        assert canonicalize(b"\x00raw") == b"\x00raw"

    @settings(max_examples=200)
    @given(st.binary(min_size=1, max_size=64), st.data())
    def test_one_byte_changes_key(self, payload, data):
        pos = data.draw(st.integers(0, len(payload) - 1))
        flip = data.draw(st.integers(1, 255))
        other = bytearray(payload)
        other[pos] ^= flip
        assert payload_key(payload) != payload_key(bytes(other))

    def test_persistence_across_restart(self, tmp_path):
        path = tmp_path / "c.bin"
        with ResponseCache(path) as cache:
            run, _ = _exec(b"stored", 1.25)
            cache.lookup_or_execute(b"payload", run)
        run, calls = _exec(b"other", 9.0)
        with ResponseCache(path) as cache:
            res = cache.lookup_or_execute(b"payload", run)
        assert calls == [] and res.from_cache and res.response_bytes == b"stored" and res.latency_s == 1.25

    def test_truncated_tail_recovered(self, tmp_path):
        path = tmp_path / "c.bin"
        with ResponseCache(path) as cache:
            for i in range(3):
                cache.lookup_or_execute(f"p{i}".encode(), _exec()[0])
        path.write_bytes(path.read_bytes()[:-2])
        with ResponseCache(path) as cache:
            assert len(cache) == 2
            cache.lookup_or_execute(b"p2", _exec()[0])
        assert len(ResponseCache(path)) == 3

    def test_env_path(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CACHE_PATH_ENV, str(tmp_path / "env.bin"))
        with ResponseCache() as cache:
            cache.lookup_or_execute(b"x", _exec()[0])
        assert (tmp_path / "env.bin").stat().st_size > 0

    def test_io_failure_degrades(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cache = ResponseCache(blocker / "sub" / "c.bin")
        assert cache.io_warnings == 1
        run, calls = _exec()
        cache.lookup_or_execute(b"x", run)
        cache.lookup_or_execute(b"x", run)
        assert len(calls) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from([b"a", b"b", b"c", b"{}", b'{"k":1}', b'{ "k" : 1 }']), max_size=30))
    def test_executions_equal_distinct_payloads(self, payloads):
        cache = ResponseCache(use_env=False)
        for p in payloads:
            cache.lookup_or_execute(p, _exec()[0])
        assert cache.executions == len({canonicalize(p) for p in payloads})

    def test_cached_evaluator_latency(self):
        class Jitter:
            serial = False

            def evaluate(self, c, d):
                return Observation(0.5, "0.01", random.uniform(0, 5))

        cache = ResponseCache(use_env=False)
        ev = CachedEvaluator(Jitter(), cache)
        first = [ev.evaluate(combo(1), d) for d in range(10)]
        again = [ev.evaluate(combo(1), d) for d in range(10)]
        assert [o.latency_s for o in first] == [o.latency_s for o in again]
        assert all(o.from_cache for o in again) and not any(o.from_cache for o in first)


# --------------------------------------------------------------------------
# executor


class TestExecutor:
    def test_peak_bound(self):
        mon = InFlightMonitor()

        def slow(c, d):
            time.sleep(0.001)
            return (c, d)

        tasks = [(i % 7, i) for i in range(100)]
        out = run_parallel(tasks, ConcurrencyBudget(2, 3), slow, mon)
        assert out == tasks
        assert mon.peak <= 6 and mon.peak_per_combo <= 3 and mon.started == 100

    def test_sequential(self):
        order = []
        out = run_parallel([(1, 0), (0, 1), (1, 2)], ConcurrencyBudget(), lambda c, d: order.append(d) or d)
        assert out == [0, 1, 2] and order == [0, 1, 2]

    def test_failure_isolation(self):
        def maybe(c, d):
            if d == 42:
                raise EvaluationFailed("flaky")
            return d

        out = run_parallel([(d % 4, d) for d in range(100)], ConcurrencyBudget(3, 3), maybe)
        assert isinstance(out[42], EvaluationFailed)
        assert sum(not isinstance(x, Exception) for x in out) == 99

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            ConcurrencyBudget(0, 1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.lists(st.integers(0, 5), max_size=30))
    def test_ceiling_property(self, outer, inner, combos):
        mon = InFlightMonitor()
        tasks = [(c, i) for i, c in enumerate(combos)]
        run_parallel(tasks, ConcurrencyBudget(outer, inner), lambda c, d: time.sleep(0.0001), mon)
        assert mon.peak <= outer * inner and mon.peak_per_combo <= inner and mon.started == len(tasks)


# --------------------------------------------------------------------------
# external process


class TestExternal:
    def test_round_trip(self, agent_script):
        with ExternalProcessEvaluator(agent_script()) as ev:
            obs = ev.evaluate(combo(2), 5)
            assert obs.latency_s == 0.25 and obs.cost_usd == Decimal("0.001") and obs.input_tokens == 10
            assert ev.evaluate(combo(2), 5) == obs

    def test_short_field_names(self, tmp_path):
        import sys

        script = tmp_path / "short.py"
        script.write_text(
            "import sys\nfor line in sys.stdin:\n    print('{\"score\":1,\"cost\":0,\"latency\":0.1}', flush=True)\n"
        )
        with ExternalProcessEvaluator([sys.executable, str(script)]) as ev:
            assert external_agent_round_trip({"type": "eval", "combo": {}, "datapoint": 0}, ev) == Observation(1, 0, 0.1)

    def test_non_json(self, agent_script):
        with ExternalProcessEvaluator(agent_script("garbage")) as ev:
            with pytest.raises(ProtocolViolation):
                ev.evaluate(combo(0), 0)

    def test_clamping(self, agent_script):
        with ExternalProcessEvaluator(agent_script("wide")) as ev:
            scores = [ev.evaluate(combo(0), d).score for d in range(11)]
        assert all(0.0 <= s <= 1.0 for s in scores)
        assert ev.clamped > 0

    def test_error_reply(self, agent_script):
        with ExternalProcessEvaluator(agent_script("error")) as ev:
            with pytest.raises(EvaluationFailed):
                ev.evaluate(combo(0), 0)

    def test_child_exit_and_restart(self, agent_script):
        with ExternalProcessEvaluator(agent_script("die")) as ev:
            ev.evaluate(combo(0), 0)
            with pytest.raises(ChildExited):
                ev.evaluate(combo(0), 1)
            # a fresh child is started on the next request
            ev.evaluate(combo(0), 2)

    def test_timeout(self, agent_script):
        with ExternalProcessEvaluator(agent_script("hang"), timeout_s=0.3) as ev:
            with pytest.raises(EvalTimeout):
                ev.evaluate(combo(0), 0)

    def test_serial_concurrency(self, agent_script):
        ev = ExternalProcessEvaluator(agent_script())
        results = []

        def worker(d):
            results.append(ev.evaluate(combo(d % 5), d))

        threads = [threading.Thread(target=worker, args=(d,)) for d in range(10)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        ev.close()
        assert len(results) == 10
