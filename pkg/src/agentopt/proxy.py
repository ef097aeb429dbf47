"""Metering forward proxy for chat-completion style APIs.

Requests carrying the attribution headers ``x-agentopt-data-id``,
``x-agentopt-combo-id`` and ``x-agentopt-role`` have their ``model`` field
rewritten from the registered combination mapping. Every call is metered
(tokens, latency, cost) and served through the shared response cache.

Control API::

    POST /agentopt/combos   {"combo_id": ..., "assignment": {role: model}}
    POST /agentopt/scores   {"data_id": ..., "combo_id": ..., "score": ...}
    GET  /agentopt/records?since=<rfc3339>
"""

from __future__ import annotations

import http.client
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping
from urllib.parse import parse_qs, urlsplit

from agentopt.core import AgentOptError, Observation, PipelineSpace, UnknownModel, call_cost
from agentopt.evalsub.cache import Execution, ResponseCache

logger = logging.getLogger(__name__)

DATA_HEADER = "x-agentopt-data-id"
COMBO_HEADER = "x-agentopt-combo-id"
ROLE_HEADER = "x-agentopt-role"
UNATTRIBUTED = "unattributed"
UPSTREAM_ENV = "AGENTOPT_UPSTREAM"
LISTEN_ENV = "AGENTOPT_LISTEN"
CONTROL_PREFIX = "/agentopt/"
HOP_BY_HOP = {
    "connection", "keep-alive", "proxy-authenticate", "proxy-authorization", "te",
    "trailers", "transfer-encoding", "upgrade", "content-length", "host",
}


class UnknownRole(AgentOptError):
    pass


class UnknownComboId(AgentOptError):
    pass


class MalformedBody(AgentOptError):
    pass


class UnknownPair(AgentOptError):
    pass


class DuplicateScore(AgentOptError):
    pass


class ScoreOutOfRange(AgentOptError):
    pass


class BadUpstream(AgentOptError):
    pass


def format_timestamp(ts: float) -> str:
    us = int(ts * 1_000_000)
    dt = datetime.fromtimestamp(us // 1_000_000, timezone.utc).replace(microsecond=us % 1_000_000)
    return dt.isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_timestamp(text: str) -> int:
    """RFC 3339 text to integer microseconds since the epoch."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # older fromisoformat wants exactly 3 or 6 fraction digits; RFC 3339 allows any count
    text = re.sub(r"\.(\d+)", lambda m: "." + (m.group(1) + "000000")[:6], text, count=1)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


def check_upstream(url: str) -> str:
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise BadUpstream(f"upstream URL must be http(s)://host[:port][/base], got {url!r}")
    try:
        parts.port
    except ValueError as exc:
        raise BadUpstream(f"bad port in upstream URL {url!r}: {exc}") from None
    return url.rstrip("/")


@dataclass(frozen=True)
class CallRecord:
    data_id: str
    combo_id: str
    role: str
    original_model: str | None
    effective_model: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    cost_usd: Decimal
    from_cache: bool
    timestamp_us: int

    @property
    def attributed(self) -> bool:
        return self.combo_id != UNATTRIBUTED

    def to_dict(self) -> dict:
        return {
            "data_id": self.data_id,
            "combo_id": self.combo_id,
            "role": self.role,
            "original_model": self.original_model,
            "effective_model": self.effective_model,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency_s": self.latency_s,
            "cost_usd": str(self.cost_usd),
            "from_cache": self.from_cache,
            "timestamp": format_timestamp(self.timestamp_us / 1_000_000),
        }


@dataclass
class ProxyResponse:
    status: int
    headers: dict
    body: bytes


class _Passthrough(Exception):
    """Non-2xx upstream reply: relayed to the client but never cached."""

    def __init__(self, response: ProxyResponse, latency_s: float):
        self.response = response
        self.latency_s = latency_s


def _usage(body: bytes) -> tuple[int, int, bool]:
    try:
        doc = json.loads(body)
        usage = doc.get("usage") or {}
        tin = usage.get("prompt_tokens", usage.get("input_tokens"))
        tout = usage.get("completion_tokens", usage.get("output_tokens"))
        if tin is None or tout is None:
            return int(tin or 0), int(tout or 0), False
        return int(tin), int(tout), True
    except (ValueError, AttributeError, TypeError):
        return 0, 0, False


class ProxyState:
    """Transport-independent proxy logic; :class:`ProxyServer` puts it on a socket."""

    def __init__(
        self,
        upstream: str,
        prices: Mapping,
        cache: ResponseCache | None = None,
        space: PipelineSpace | None = None,
        *,
        timeout_s: float = 300.0,
    ):
        self.upstream = check_upstream(upstream)
        self.prices = prices
        self.cache = cache
        self.space = space
        self.timeout_s = timeout_s
        self._mappings: dict[str, dict[str, str]] = {}
        self._records: list[CallRecord] = []
        self._scores: dict[tuple[str, str], Observation] = {}
        self._lock = threading.Lock()
        self.usage_warnings = 0
        self.price_warnings = 0
        self.upstream_calls = 0

    # ---- mappings

    def register_mapping(self, combo_id: str, assignment: Mapping[str, str]) -> None:
        assignment = {str(r): str(m) for r, m in assignment.items()}
        if self.space is not None:
            roles = set(self.space.roles)
            missing = roles - set(assignment)
            extra = set(assignment) - roles
            if missing or extra:
                raise UnknownRole(f"mapping roles {sorted(assignment)} do not match {list(self.space.roles)}")
            for role, model in assignment.items():
                if model not in self.space.candidates[role]:
                    raise UnknownModel(model)
        for model in assignment.values():
            if model not in self.prices:
                raise UnknownModel(model)
        with self._lock:
            self._mappings[str(combo_id)] = assignment

    def mapping(self, combo_id: str) -> dict[str, str] | None:
        return self._mappings.get(combo_id)

    # ---- forwarding

    def _forward(self, method: str, path: str, headers: Mapping[str, str], body: bytes) -> ProxyResponse:
        target = urlsplit(self.upstream + path)
        conn_cls = http.client.HTTPSConnection if target.scheme == "https" else http.client.HTTPConnection
        conn = conn_cls(target.hostname, target.port, timeout=self.timeout_s)
        fwd = {k: v for k, v in headers.items() if k.lower() not in HOP_BY_HOP and not k.lower().startswith("x-agentopt-")}
        fwd["Content-Length"] = str(len(body))
        try:
            url = target.path or "/"
            if target.query:
                url += "?" + target.query
            conn.request(method, url, body=body, headers=fwd)
            resp = conn.getresponse()
            data = resp.read()  # streaming replies are buffered whole
            out_headers = {k: v for k, v in resp.getheaders() if k.lower() not in HOP_BY_HOP}
            return ProxyResponse(resp.status, out_headers, data)
        finally:
            conn.close()

    def handle_request(self, method: str, path: str, headers: Mapping[str, str], body: bytes) -> ProxyResponse:
        lower = {k.lower(): v for k, v in headers.items()}
        data_id = lower.get(DATA_HEADER)
        combo_id = lower.get(COMBO_HEADER)
        role = lower.get(ROLE_HEADER)
        attributed = bool(data_id and combo_id and role)
        original_model = None
        effective_model = None
        out_body = body
        parsed = None
        try:
            parsed = json.loads(body) if body else None
        except (ValueError, UnicodeDecodeError):
            parsed = None
        if attributed:
            if not isinstance(parsed, dict):
                raise MalformedBody("attributed requests need a JSON object body")
            mapping = self._mappings.get(combo_id)
            if mapping is None:
                raise UnknownComboId(f"combo id {combo_id!r} is not registered")
            if role not in mapping:
                raise UnknownRole(f"role {role!r} is not part of combo {combo_id!r}")
            original_model = parsed.get("model")
            effective_model = mapping[role]
            parsed["model"] = effective_model
            out_body = json.dumps(parsed, separators=(",", ":"), ensure_ascii=False).encode()
        else:
            data_id = combo_id = role = UNATTRIBUTED
            if isinstance(parsed, dict) and isinstance(parsed.get("model"), str):
                original_model = effective_model = parsed["model"]
        effective_model = effective_model or "unknown"

        def execute() -> Execution:
            start = time.perf_counter()
            resp = self._forward(method, path, headers, out_body)
            latency = time.perf_counter() - start
            with self._lock:
                self.upstream_calls += 1
            if not 200 <= resp.status < 300:
                raise _Passthrough(resp, latency)
            tin, tout, _ = _usage(resp.body)
            return Execution(resp.body, latency, tin, tout, resp.headers.get("Content-Type") or resp.headers.get("content-type"))

        payload = method.encode() + b" " + path.encode() + b"\n" + out_body
        try:
            if self.cache is not None and method.upper() in ("POST", "GET"):
                res = self.cache.lookup_or_execute(payload, execute)
                resp = ProxyResponse(200, {"Content-Type": res.content_type or "application/json"}, res.response_bytes)
                latency, from_cache = res.latency_s, res.from_cache
            else:
                ex = execute()
                resp = ProxyResponse(200, {"Content-Type": ex.content_type or "application/json"}, ex.response_bytes)
                latency, from_cache = ex.latency_s, False
        except _Passthrough as p:
            resp, latency, from_cache = p.response, p.latency_s, False
        tin, tout, ok = _usage(resp.body)
        if not ok:
            with self._lock:
                self.usage_warnings += 1
        try:
            cost = call_cost(tin, tout, effective_model, self.prices)
        except UnknownModel:
            cost = Decimal(0)
            with self._lock:
                self.price_warnings += 1
        rec = CallRecord(
            data_id, combo_id, role, original_model, effective_model, tin, tout, latency, cost, from_cache,
            int(time.time() * 1_000_000),
        )
        with self._lock:
            self._records.append(rec)
        resp.headers["x-agentopt-cache"] = "hit" if from_cache else "miss"
        return resp

    # ---- records and scores

    def drain_records(self, since=None) -> list[CallRecord]:
        """Records at or after ``since`` (epoch seconds, microseconds int via
        :func:`parse_timestamp`, or RFC 3339 text), oldest first."""
        if since is None:
            cutoff = 0
        elif isinstance(since, str):
            cutoff = parse_timestamp(since)
        elif isinstance(since, float):
            cutoff = int(since * 1_000_000)
        else:
            cutoff = int(since)
        with self._lock:
            recs = [r for r in self._records if r.timestamp_us >= cutoff]
        return sorted(recs, key=lambda r: r.timestamp_us)

    def submit_score(self, data_id: str, combo_id: str, score: float) -> Observation:
        score = float(score)
        if not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(f"score {score} outside [0, 1]")
        key = (str(data_id), str(combo_id))
        with self._lock:
            if key in self._scores:
                raise DuplicateScore(f"score already submitted for {key}")
            mine = [r for r in self._records if (r.data_id, r.combo_id) == key]
            if not mine:
                raise UnknownPair(f"no calls recorded for data {data_id!r} under combo {combo_id!r}")
            obs = Observation(
                score,
                sum((r.cost_usd for r in mine), Decimal(0)),
                sum(r.latency_s for r in mine),
                sum(r.input_tokens for r in mine),
                sum(r.output_tokens for r in mine),
                all(r.from_cache for r in mine),
            )
            self._scores[key] = obs
        return obs

    def observation(self, data_id: str, combo_id: str) -> Observation | None:
        return self._scores.get((str(data_id), str(combo_id)))

    # ---- control API

    def handle_control(self, method: str, path: str, body: bytes) -> ProxyResponse:
        parts = urlsplit(path)
        try:
            if method == "POST" and parts.path == "/agentopt/combos":
                doc = _json_object(body)
                self.register_mapping(str(doc["combo_id"]), doc["assignment"])
                return _json_response(200, {"ok": True})
            if method == "POST" and parts.path == "/agentopt/scores":
                doc = _json_object(body)
                obs = self.submit_score(str(doc["data_id"]), str(doc["combo_id"]), doc["score"])
                return _json_response(200, obs.to_dict())
            if method == "GET" and parts.path == "/agentopt/records":
                since = parse_qs(parts.query).get("since", [None])[0]
                return _json_response(200, [r.to_dict() for r in self.drain_records(since)])
        except (KeyError, TypeError, ValueError) as exc:
            return _json_response(400, {"error": f"bad request: {exc}"})
        except (UnknownPair,) as exc:
            return _json_response(404, {"error": str(exc)})
        except DuplicateScore as exc:
            return _json_response(409, {"error": str(exc)})
        except AgentOptError as exc:
            return _json_response(400, {"error": str(exc)})
        return _json_response(404, {"error": f"no control endpoint {method} {parts.path}"})

    def dispatch(self, method: str, path: str, headers: Mapping[str, str], body: bytes) -> ProxyResponse:
        if path.startswith(CONTROL_PREFIX):
            return self.handle_control(method, path, body)
        try:
            return self.handle_request(method, path, headers, body)
        except (MalformedBody, UnknownComboId, UnknownRole) as exc:
            return _json_response(400, {"error": str(exc)})
        except OSError as exc:
            return _json_response(502, {"error": f"upstream unreachable: {exc}", "upstream": self.upstream})

    def close(self) -> None:
        if self.cache is not None:
            self.cache.flush()


def _json_object(body: bytes) -> dict:
    doc = json.loads(body)
    if not isinstance(doc, dict):
        raise ValueError("expected a JSON object")
    return doc


def _json_response(status: int, doc) -> ProxyResponse:
    return ProxyResponse(status, {"Content-Type": "application/json"}, json.dumps(doc).encode())


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    state: ProxyState

    def _serve(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        resp = self.server.state.dispatch(self.command, self.path, dict(self.headers.items()), body)
        self.send_response(resp.status)
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(resp.body)))
        self.end_headers()
        self.wfile.write(resp.body)

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _serve

    def log_message(self, fmt, *args) -> None:
        logger.debug("%s - %s", self.address_string(), fmt % args)


class ProxyServer:
    """Threaded HTTP server around a :class:`ProxyState`."""

    def __init__(self, state: ProxyState, host: str = "127.0.0.1", port: int = 0):
        self.state = state
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.daemon_threads = True
        self.httpd.state = state
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "ProxyServer":
        if self._thread is not None:
            return self
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.state.close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1"), int(port)
