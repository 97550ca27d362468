"""Next-token probability sources.

Every source maps a context (prompt tokens followed by generated tokens) to a
full conditional distribution, deterministically. ``TableMarkov`` is an
offline n-gram model with backoff; ``RemoteSource`` speaks a small JSON wire
protocol to an external model server. Sender and receiver must run the same
model build: ``model_id`` and ``version`` travel in the session metadata and
are checked on decode.
"""

from __future__ import annotations

import hashlib
import http.server
import json
import math
import socket
import socketserver
import struct
import threading
import urllib.error
import urllib.request
from collections import Counter, defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Hashable, Protocol, Sequence

import numpy as np

from .errors import SourceUnavailable
from .prob import TokenDistribution, build_distribution, distribution_from_vector
from .tokenizers import Tokenizer

Context = tuple[int, ...]


@dataclass(frozen=True)
class VocabMeta:
    vocab_size: int
    token_text: dict[int, str]

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocabulary needs at least two tokens")
        if set(self.token_text) != set(range(self.vocab_size)):
            raise ValueError("token_text must cover every index in [0, vocab_size)")


class ProbabilitySource(Protocol):
    model_id: str
    version: str
    vocab_size: int

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution: ...

    def context_key(self, ctx: Sequence[int]) -> Hashable:
        """Hashable key that fully determines the next distribution."""
        ...


def next_distribution(source: ProbabilitySource, ctx: Sequence[int]) -> TokenDistribution:
    if len(ctx) == 0:
        raise ValueError("context must hold at least one token")
    return source.next_distribution(ctx)


class UniformSource:
    """Every context yields the uniform distribution over the vocabulary."""

    version = "1"

    def __init__(self, vocab_size: int):
        if vocab_size < 2:
            raise ValueError("vocabulary needs at least two tokens")
        self.vocab_size = vocab_size
        self.model_id = f"uniform:{vocab_size}"
        self._dist = distribution_from_vector(np.full(vocab_size, 1.0 / vocab_size))

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution:
        return self._dist

    def context_key(self, ctx: Sequence[int]) -> Hashable:
        return ()


class TableMarkov:
    """Order-k n-gram model with add-beta smoothing over observed successors.

    Training sequences are read cyclically so that every context seen in
    training has at least one successor. Unseen contexts back off to the
    longest seen suffix, down to the unigram table.
    """

    version = "1"

    def __init__(self, tables: list[dict[Context, Counter]], order: int, vocab_size: int, beta: float = 0.01):
        self.tables = tables
        self.order = order
        self.vocab_size = vocab_size
        self.beta = beta
        self.model_id = f"markov:{self.table_digest()[:16]}:{order}"
        self._cache: dict[Context, TokenDistribution] = {}

    @classmethod
    def fit(cls, sequences: Sequence[Sequence[int]], order: int, vocab_size: int, beta: float = 0.01) -> "TableMarkov":
        if order < 0:
            raise ValueError("order must be non-negative")
        tables: list[dict[Context, Counter]] = [defaultdict(Counter) for _ in range(order + 1)]
        for seq in sequences:
            seq = list(seq)
            n = len(seq)
            if n == 0:
                continue
            # prepend the tail so the first tokens get wrapped-around contexts
            ring = [seq[(j - order) % n] for j in range(order)] + seq
            for i in range(n):
                nxt = seq[i]
                for L in range(order + 1):
                    tables[L][tuple(ring[i + order - L : i + order])][nxt] += 1
        return cls([dict(t) for t in tables], order, vocab_size, beta)

    @classmethod
    def from_corpus(cls, text: str, tokenizer: Tokenizer, order: int = 2, beta: float = 0.01) -> "TableMarkov":
        return cls.fit([tokenizer.training_segmentation(text)], order, tokenizer.vocab_size, beta)

    def _lookup(self, ctx: Sequence[int]) -> Context:
        for L in range(min(self.order, len(ctx)), -1, -1):
            key = tuple(ctx[len(ctx) - L :]) if L else ()
            if key in self.tables[L]:
                return key
        raise SourceUnavailable("model has no unigram table")

    def context_key(self, ctx: Sequence[int]) -> Hashable:
        return self._lookup(ctx)

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution:
        key = self._lookup(ctx)
        dist = self._cache.get(key)
        if dist is None:
            counts = self.tables[len(key)][key]
            toks = sorted(counts)
            weights = np.array([counts[t] + self.beta for t in toks], dtype=np.float64)
            dist = build_distribution(zip(toks, (weights / weights.sum()).tolist()), self.vocab_size)
            self._cache[key] = dist
        return dist

    def dense(self, ctx: Sequence[int]) -> np.ndarray:
        """Full-vocabulary probability vector (what a model server returns)."""
        d = self.next_distribution(ctx) if len(ctx) else self.next_distribution(())
        out = np.zeros(self.vocab_size)
        out[d.indices] = d.probs
        return out

    def table_digest(self) -> str:
        h = hashlib.sha256(f"order={self.order};beta={self.beta!r};V={self.vocab_size}".encode())
        for L, table in enumerate(self.tables):
            for key in sorted(table):
                items = sorted(table[key].items())
                h.update(f"{L}|{key}|{items}\n".encode())
        return h.hexdigest()


BUNDLED_CORPORA = {"grammar": "grammar.txt", "harbor": "harbor.txt"}


def bundled_corpus(name: str = "grammar") -> str:
    """``grammar``: template-grammar text where every word recurs often;
    ``harbor``: a short piece of prose, sparser but more readable."""
    fname = BUNDLED_CORPORA[name]
    return resources.files("odstega").joinpath("data", fname).read_text(encoding="utf-8")


def load_corpus(spec: str, encoding: str = "utf-8") -> str:
    """A bundled corpus name (``grammar``, ``harbor``) or a path to a plain-text file."""
    if spec in BUNDLED_CORPORA:
        return bundled_corpus(spec)
    return Path(spec).read_text(encoding=encoding)


# wire protocol: request {"context": [int], "top": "full"},
# response {"probs": [float] * vocab_size, "model_id": str, "version": str};
# a server may send "logprobs" (natural log) instead of "probs"


def _send_frame(sock: socket.socket, obj: dict) -> None:
    payload = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("stream closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def _recv_frame(sock: socket.socket) -> dict:
    (n,) = struct.unpack(">I", _recv_exact(sock, 4))
    return json.loads(_recv_exact(sock, n).decode("utf-8"))


class RemoteSource:
    """Client for an external model server.

    ``endpoint`` is ``tcp://host:port`` (length-prefixed JSON frames over one
    persistent connection) or an ``http://`` URL (one JSON POST per request).
    Requests are serialized per client. Transport errors raise
    SourceUnavailable; the client never retries on its own.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        first = self._request([])
        self.model_id = str(first["model_id"])
        self.version = str(first["version"])
        self.vocab_size = len(first["probs"])

    def _request(self, ctx: Sequence[int]) -> dict:
        req = {"context": [int(t) for t in ctx], "top": "full"}
        with self._lock:
            try:
                if self.endpoint.startswith("tcp://"):
                    if self._sock is None:
                        host, port = self.endpoint[len("tcp://") :].rsplit(":", 1)
                        self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
                    _send_frame(self._sock, req)
                    resp = _recv_frame(self._sock)
                elif self.endpoint.startswith(("http://", "https://")):
                    data = json.dumps(req).encode("utf-8")
                    r = urllib.request.Request(self.endpoint, data=data, headers={"Content-Type": "application/json"})
                    with urllib.request.urlopen(r, timeout=self.timeout) as f:
                        resp = json.loads(f.read().decode("utf-8"))
                else:
                    raise SourceUnavailable(f"unsupported endpoint scheme: {self.endpoint}")
            except (OSError, ConnectionError, ValueError, urllib.error.URLError) as exc:
                self.close_locked()
                raise SourceUnavailable(f"request to {self.endpoint} failed: {exc}") from exc
        if isinstance(resp, dict) and "probs" not in resp and "logprobs" in resp:
            # natural-log probabilities are accepted in place of probabilities
            try:
                resp["probs"] = np.exp(np.asarray(resp.pop("logprobs"), dtype=np.float64)).tolist()
            except (TypeError, ValueError) as exc:
                raise SourceUnavailable(f"malformed logprobs from {self.endpoint}: {exc}") from exc
        if not isinstance(resp, dict) or "probs" not in resp:
            raise SourceUnavailable(f"malformed response from {self.endpoint}")
        return resp

    def close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self.close_locked()

    def context_key(self, ctx: Sequence[int]) -> Hashable:
        return tuple(ctx)

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution:
        resp = self._request(ctx)
        if resp.get("model_id") != self.model_id or resp.get("version") != self.version:
            raise SourceUnavailable("model server changed identity mid-session")
        probs = np.asarray(resp["probs"], dtype=np.float64)
        if probs.shape != (self.vocab_size,) or not np.all(np.isfinite(probs)):
            raise SourceUnavailable("model server returned a malformed probability vector")
        if abs(math.fsum(probs.tolist()) - 1.0) > 1e-6:
            raise SourceUnavailable("model server returned probabilities that do not sum to one")
        return distribution_from_vector(probs)


def _answer(source: TableMarkov | UniformSource, req: dict) -> dict:
    ctx = req.get("context", [])
    if isinstance(source, TableMarkov):
        probs = source.dense(ctx)
    else:
        d = source.next_distribution(ctx)
        probs = np.zeros(source.vocab_size)
        probs[d.indices] = d.probs
    return {"probs": probs.tolist(), "model_id": source.model_id, "version": source.version}


class StreamServer(socketserver.ThreadingTCPServer):
    """Reference server for the length-prefixed stream transport."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, source, address: tuple[str, int] = ("127.0.0.1", 0)):
        self.source = source

        class Handler(socketserver.BaseRequestHandler):
            def handle(inner) -> None:
                while True:
                    try:
                        req = _recv_frame(inner.request)
                    except (ConnectionError, OSError, struct.error):
                        return
                    _send_frame(inner.request, _answer(source, req))

        super().__init__(address, Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


class HTTPModelServer(http.server.ThreadingHTTPServer):
    """Reference server for the HTTP transport."""

    daemon_threads = True

    def __init__(self, source, address: tuple[str, int] = ("127.0.0.1", 0)):
        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(inner) -> None:
                n = int(inner.headers.get("Content-Length", 0))
                body = json.dumps(_answer(source, json.loads(inner.rfile.read(n)))).encode("utf-8")
                inner.send_response(200)
                inner.send_header("Content-Type", "application/json")
                inner.send_header("Content-Length", str(len(body)))
                inner.end_headers()
                inner.wfile.write(body)

            def log_message(inner, *args) -> None:
                pass

        super().__init__(address, Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/"
