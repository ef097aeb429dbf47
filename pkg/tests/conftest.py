"""Shared fixtures: an echo upstream, stub agent scripts, small spaces."""

from __future__ import annotations

import json
import sys
import textwrap
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from agentopt.core import PipelineSpace, PriceTable


class EchoUpstream:
    """Chat-completion stand-in: echoes the model it received and reports
    token usage derived from the request size."""

    def __init__(self):
        self.seen: list[dict] = []
        self.lock = threading.Lock()
        upstream = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True

            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length") or 0))
                doc = json.loads(body or b"{}")
                with upstream.lock:
                    upstream.seen.append({"path": self.path, "body": doc, "headers": dict(self.headers.items())})
                if self.path.startswith("/fail"):
                    out = b'{"error": "boom"}'
                    self.send_response(500)
                else:
                    prompt = json.dumps(doc.get("messages", ""))
                    out = json.dumps(
                        {
                            "model": doc.get("model"),
                            "echo": doc.get("messages"),
                            "usage": {"prompt_tokens": len(prompt), "completion_tokens": 7 + len(prompt) % 5},
                        }
                    ).encode()
                    self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *a):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def echo_upstream():
    up = EchoUpstream()
    yield up
    up.close()


AGENT_SCRIPT = textwrap.dedent(
    """
    import json, sys
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    for n, line in enumerate(sys.stdin):
        req = json.loads(line)
        if mode == "die" and n >= 1:
            sys.exit(3)
        if mode == "hang":
            continue
        if mode == "garbage":
            print("not json", flush=True)
            continue
        if mode == "error":
            print(json.dumps({"type": "error", "detail": "stub failure"}), flush=True)
            continue
        combo = req["combo"]
        key = "|".join(f"{r}={m}" for r, m in sorted(combo.items()))
        score = (sum(map(ord, key)) + 3 * req["datapoint"]) % 11 / 10.0
        if mode == "wide":
            score = score * 2 - 0.5
        print(json.dumps({"type": "result", "score": score, "cost_usd": 0.001,
                          "latency_s": 0.25, "input_tokens": 10, "output_tokens": 2}), flush=True)
    """
)


@pytest.fixture
def agent_script(tmp_path):
    path = tmp_path / "agent.py"
    path.write_text(AGENT_SCRIPT)
    return lambda mode="ok": [sys.executable, str(path), mode]


@pytest.fixture
def two_role_space():
    return PipelineSpace(["planner", "solver"], {"planner": ["p1", "p2", "p3"], "solver": ["s1", "s2"]})


@pytest.fixture
def prices_for():
    def make(space: PipelineSpace, seed: int = 0) -> PriceTable:
        rng = np.random.default_rng(seed)
        return PriceTable.from_mapping(
            {m: (f"{rng.uniform(0.05, 5):.2f}", f"{rng.uniform(0.1, 20):.2f}") for m in sorted(space.models())}
        )

    return make


# one pass/fail line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
