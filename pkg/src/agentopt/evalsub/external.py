"""Agents running in a child process, spoken to over newline-delimited JSON.

Request::

    {"type": "eval", "combo": {"<role>": "<model>", ...}, "datapoint": <int>}

Reply::

    {"type": "result", "score": <float>, "cost_usd": <float>,
     "latency_s": <float>, "input_tokens": <int>, "output_tokens": <int>}

A child may answer ``{"type": "error", "detail": "..."}`` to report a failed
evaluation.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import time
import urllib.parse
import urllib.request
from decimal import Decimal
from typing import Mapping, Sequence

from agentopt.core import AgentOptError, Combination, Observation, ScoreClamp, to_usd
from agentopt.evalsub.evaluators import EvaluationFailed

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 300.0
_EOF = object()


class ProtocolViolation(AgentOptError):
    pass


class ChildExited(AgentOptError):
    pass


class EvalTimeout(AgentOptError):
    pass


def parse_reply(line: str, clamp: ScoreClamp) -> Observation:
    try:
        msg = json.loads(line)
    except ValueError:
        raise ProtocolViolation(f"reply is not JSON: {line[:200]!r}") from None
    if not isinstance(msg, dict):
        raise ProtocolViolation(f"reply is not a JSON object: {line[:200]!r}")
    kind = msg.get("type", "result")
    if kind == "error":
        raise EvaluationFailed(str(msg.get("detail", "child reported an error")))
    if kind != "result":
        raise ProtocolViolation(f"unexpected reply type {kind!r}")
    if "score" not in msg:
        raise ProtocolViolation("reply lacks a score")
    try:
        # "cost" and "latency" are accepted as short aliases
        cost = msg.get("cost_usd", msg.get("cost", 0))
        latency = msg.get("latency_s", msg.get("latency", 0.0))
        return Observation(
            clamp(msg["score"]),
            to_usd(cost),
            float(latency),
            int(msg.get("input_tokens", 0)),
            int(msg.get("output_tokens", 0)),
        )
    except (TypeError, ValueError, ArithmeticError, AgentOptError) as exc:
        raise ProtocolViolation(f"malformed reply fields: {exc}") from None


class ExternalProcessEvaluator:
    """Drives one long-lived child process; requests are serialised."""

    serial = True

    def __init__(self, argv: Sequence[str], *, timeout_s: float = DEFAULT_TIMEOUT_S, cwd=None, env=None):
        self.argv = list(argv)
        self.timeout_s = timeout_s
        self.cwd = cwd
        self.env = env
        self.clamp = ScoreClamp()
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._lock = threading.Lock()

    @property
    def clamped(self) -> int:
        return self.clamp.count

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
            cwd=self.cwd,
            env=self.env,
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        for line in proc.stdout:
            lines.put(line)
        lines.put(_EOF)

    def round_trip(self, request: Mapping) -> Observation:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._discard()
                raise ChildExited(f"child {self.argv[0]!r} closed its input") from None
            try:
                line = self._lines.get(timeout=self.timeout_s)
            except queue.Empty:
                self._discard()
                raise EvalTimeout(f"no reply within {self.timeout_s} s") from None
            if line is _EOF:
                self._discard()
                raise ChildExited(f"child {self.argv[0]!r} exited")
            return parse_reply(line, self.clamp)

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        return self.round_trip({"type": "eval", "combo": dict(combo.assignment), "datapoint": datapoint})

    def _discard(self) -> None:
        proc, self._proc = self._proc, None
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait()

    def close(self) -> None:
        with self._lock:
            proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
            proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_agent_round_trip(request: Mapping, child: ExternalProcessEvaluator) -> Observation:
    return child.round_trip(request)


class ProxyBackedEvaluator:
    """External-process agent whose model calls go through the metering proxy.

    The child receives ``data_id`` and ``combo_id`` in addition to the usual
    request fields and must send them as attribution headers. Cost, latency
    and tokens come from the proxy's call records; the score comes from the
    child's reply.
    """

    serial = True

    def __init__(self, child: ExternalProcessEvaluator, control_url: str, *, timeout_s: float = 30.0):
        self.child = child
        self.control_url = control_url.rstrip("/")
        self.timeout_s = timeout_s
        self._registered: set[str] = set()

    def _post(self, path: str, body: dict) -> None:
        req = urllib.request.Request(
            self.control_url + path,
            data=json.dumps(body).encode(),
            headers={"content-type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
            resp.read()

    def _records(self, since: str) -> list[dict]:
        url = self.control_url + "/agentopt/records?" + urllib.parse.urlencode({"since": since})
        with urllib.request.urlopen(url, timeout=self.timeout_s) as resp:
            return json.loads(resp.read())

    def evaluate(self, combo: Combination, datapoint: int) -> Observation:
        from agentopt.proxy import format_timestamp

        combo_id = f"combo-{combo.index}"
        data_id = str(datapoint)
        if combo_id not in self._registered:
            self._post("/agentopt/combos", {"combo_id": combo_id, "assignment": dict(combo.assignment)})
            self._registered.add(combo_id)
        since = format_timestamp(time.time())
        reply = self.child.round_trip(
            {"type": "eval", "combo": dict(combo.assignment), "datapoint": datapoint,
             "data_id": data_id, "combo_id": combo_id}
        )
        mine = [
            r for r in self._records(since)
            if r["data_id"] == data_id and r["combo_id"] == combo_id
        ]
        self._post("/agentopt/scores", {"data_id": data_id, "combo_id": combo_id, "score": reply.score})
        if not mine:
            return reply
        return Observation(
            reply.score,
            sum((Decimal(r["cost_usd"]) for r in mine), Decimal(0)),
            sum(r["latency_s"] for r in mine),
            sum(r["input_tokens"] for r in mine),
            sum(r["output_tokens"] for r in mine),
            all(r["from_cache"] for r in mine),
        )

    def close(self) -> None:
        self.child.close()
