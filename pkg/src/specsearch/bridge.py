"""Wire protocol for driving real generation/scoring backends.

The search loop stays unchanged: :class:`BridgeSuite` exposes the same four
methods as the statistical suite, but drafts and corrections become POSTs to
``/generate`` and scores become POSTs to ``/score``.  A scripted in-process
mock server backs the tests, including fault injection for the retry path.
"""

from __future__ import annotations

import json
import math
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .core import RngStream, Thought, ThoughtPath, ThoughtSource
from .generation import LatencyRates

__all__ = [
    "BridgeEndpoint",
    "TransportError",
    "MalformedResponseError",
    "ScoreRangeError",
    "remote_generate",
    "remote_evaluate",
    "RemoteThought",
    "BridgeSuite",
    "MockBridgeServer",
]

_BACKOFF_SECONDS = 0.05


class TransportError(RuntimeError):
    """Request failed after exhausting the retry budget."""


class MalformedResponseError(RuntimeError):
    """The backend answered with something outside the wire contract."""


class ScoreRangeError(MalformedResponseError):
    """Evaluator score outside [0, 1]."""


@dataclass(frozen=True)
class BridgeEndpoint:
    base_url: str
    role: str  # "large" | "small" | "evaluator"
    timeout: float = 5.0
    retry_limit: int = 2

    def __post_init__(self):
        if self.role not in ("large", "small", "evaluator"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")


def _post_json(endpoint: BridgeEndpoint, route: str, body: dict) -> dict:
    url = endpoint.base_url.rstrip("/") + route
    payload = json.dumps(body).encode("utf-8")
    last_error: Exception | None = None
    for attempt in range(endpoint.retry_limit + 1):
        try:
            request = urllib.request.Request(
                url, data=payload, headers={"Content-Type": "application/json"}
            )
            with urllib.request.urlopen(request, timeout=endpoint.timeout) as resp:
                raw = resp.read()
            break
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            last_error = exc
            if attempt < endpoint.retry_limit:
                time.sleep(_BACKOFF_SECONDS)
    else:
        raise TransportError(f"{url}: {last_error}")
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponseError(f"{url}: invalid JSON: {raw[:200]!r}") from exc


@dataclass(frozen=True)
class RemoteThought:
    text: str
    tokens: int


def remote_generate(
    endpoint: BridgeEndpoint, context: list[str], n: int
) -> list[RemoteThought]:
    """POST /generate and return exactly n (text, token count) thoughts."""
    if endpoint.role not in ("large", "small"):
        raise ValueError(f"generation endpoint must be large or small, got {endpoint.role}")
    if n < 0:
        raise ValueError("n must be >= 0")
    data = _post_json(endpoint, "/generate", {"context": list(context), "n": n})
    thoughts = data.get("thoughts")
    if not isinstance(thoughts, list):
        raise MalformedResponseError(f"missing 'thoughts' list in {str(data)[:200]}")
    if len(thoughts) != n:
        raise MalformedResponseError(
            f"expected {n} thoughts, got {len(thoughts)}: {str(data)[:200]}"
        )
    out = []
    for item in thoughts:
        if not isinstance(item, dict) or "text" not in item or "tokens" not in item:
            raise MalformedResponseError(f"bad thought entry: {str(item)[:200]}")
        tokens = item["tokens"]
        if not isinstance(tokens, int) or tokens < 1:
            raise MalformedResponseError(f"bad token count: {str(item)[:200]}")
        out.append(RemoteThought(text=str(item["text"]), tokens=tokens))
    return out


def remote_evaluate(endpoint: BridgeEndpoint, trajectory: list[str]) -> float:
    """POST /score and return the [0, 1] quality of the trajectory."""
    if endpoint.role != "evaluator":
        raise ValueError(f"scoring endpoint must have the evaluator role, got {endpoint.role}")
    data = _post_json(endpoint, "/score", {"trajectory": list(trajectory)})
    if "score" not in data:
        raise MalformedResponseError(f"missing 'score' in {str(data)[:200]}")
    score = data["score"]
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise MalformedResponseError(f"non-numeric score: {str(data)[:200]}")
    score = float(score)
    if not 0.0 <= score <= 1.0:
        raise ScoreRangeError(f"score {score} outside [0, 1]")
    return score


@dataclass
class BridgeSuite:
    """Adapts remote endpoints to the search loop's generator interface."""

    large_endpoint: BridgeEndpoint
    small_endpoint: BridgeEndpoint
    evaluator_endpoint: BridgeEndpoint
    rates: LatencyRates = field(default_factory=LatencyRates)

    @staticmethod
    def _context(path: ThoughtPath) -> list[str]:
        return [t.text or "" for t in path.thoughts]

    def _generate(
        self, endpoint: BridgeEndpoint, path: ThoughtPath, k: int, n: int, source: ThoughtSource
    ) -> list[Thought]:
        remote = remote_generate(endpoint, self._context(path), n)
        return [
            Thought(
                quality=math.nan,
                step=k,
                token_count=r.tokens,
                source=source,
                text=r.text,
            )
            for r in remote
        ]

    def draft(self, path: ThoughtPath, k: int, n: int, rng: RngStream) -> list[Thought]:
        return self._generate(self.small_endpoint, path, k, n, ThoughtSource.SMALL_ACCEPTED)

    def correct_one(self, path: ThoughtPath, k: int, rng: RngStream) -> Thought:
        return self._generate(self.large_endpoint, path, k, 1, ThoughtSource.CORRECTED)[0]

    def large_one(self, path: ThoughtPath, k: int, rng: RngStream) -> Thought:
        return self._generate(self.large_endpoint, path, k, 1, ThoughtSource.LARGE)[0]

    def score(self, thought: Thought, path: ThoughtPath, rng: RngStream) -> float:
        trajectory = self._context(path) + [thought.text or ""]
        return remote_evaluate(self.evaluator_endpoint, trajectory)


# ---------------------------------------------------------------------------
# Scripted mock server.
# ---------------------------------------------------------------------------


class _MockHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        server: "MockBridgeServer" = self.server  # type: ignore[assignment]
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            body = {}
        fault = server.pop_fault(self.path)
        if fault == "timeout":
            time.sleep(server.fault_sleep)
        elif fault == "malformed":
            self._respond(200, b"not json at all")
            return
        elif isinstance(fault, int):
            self._respond(fault, b"{}")
            return
        if self.path == "/generate":
            payload = server.generate_fn(body)
        elif self.path == "/score":
            payload = server.score_fn(body)
        else:
            self._respond(404, b"{}")
            return
        self._respond(200, json.dumps(payload).encode("utf-8"))

    def _respond(self, status: int, raw: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        try:
            self.wfile.write(raw)
        except (BrokenPipeError, ConnectionResetError):
            pass


def _default_generate(body: dict) -> dict:
    n = int(body.get("n", 0))
    depth = len(body.get("context", []))
    return {
        "thoughts": [
            {"text": f"step{depth}-thought{i}", "tokens": 50 + i} for i in range(n)
        ]
    }


def _default_score(body: dict) -> dict:
    trajectory = body.get("trajectory", [])
    # Deterministic pseudo-score from the trajectory contents.
    h = sum(len(s) + 31 * i for i, s in enumerate(trajectory)) % 97
    return {"score": round(0.2 + 0.6 * (h / 96.0), 6)}


class MockBridgeServer(ThreadingHTTPServer):
    """In-process scripted backend for bridge tests.

    ``generate_fn`` / ``score_fn`` map request bodies to response payloads;
    ``inject_fault`` queues one-shot faults per route ("timeout",
    "malformed", or an HTTP status code).
    """

    def __init__(self, generate_fn=None, score_fn=None, fault_sleep: float = 1.0):
        super().__init__(("127.0.0.1", 0), _MockHandler)
        self.generate_fn = generate_fn or _default_generate
        self.score_fn = score_fn or _default_score
        self.fault_sleep = fault_sleep
        self._faults: dict[str, list] = {}
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def inject_fault(self, route: str, fault) -> None:
        with self._lock:
            self._faults.setdefault(route, []).append(fault)

    def pop_fault(self, route: str):
        with self._lock:
            queue = self._faults.get(route)
            if queue:
                return queue.pop(0)
        return None

    def start(self) -> "MockBridgeServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def __enter__(self) -> "MockBridgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
