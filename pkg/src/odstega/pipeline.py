"""End-to-end encode and decode of secret bits into generated token sequences.

Per token: query the source, grant a KL budget from the token's entropy,
cut the tail, tilt within the remaining budget, quantize, and take one
arithmetic-coding step. The payload is a retry prefix B followed by the
secret S; the encoder walks through every value of B until the detokenized,
retokenized stego text decodes back to the payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .coder import extract_step, embed_step, is_complete, resolved_bits, start_embed, start_extract
from .errors import (
    DesyncError,
    EmbeddingStalled,
    InvalidToken,
    MetadataMismatch,
    TargetUnreachable,
    TokenNotInDistribution,
    UnembeddableMessage,
)
from .lm import ProbabilitySource
from .prob import QuantizedDistribution, entropy_bits, kl_bits
from .solver import EmbedPolicy, adaptive_delta, two_stage
from .tokenizers import Tokenizer

DEFAULT_MAX_TOKENS = 20_000
# per-bit retokenization mismatch rate measured for a SentencePiece LLM
DEFAULT_MISMATCH_RATE = 2e-4
_CACHE_LIMIT = 200_000


@dataclass(frozen=True)
class PerTokenMetrics:
    entropy_full: float
    delta_i: float
    cutoff_cost: float
    optimization_kl: float
    total_kl: float
    bits_resolved: int
    quant_deviation: float = 0.0
    support: int = 0
    clamped: bool = False


@dataclass(frozen=True)
class SessionMeta:
    """Sidecar emitted beside every stego text; decode refuses on mismatch."""

    model_id: str
    version: str
    tokenizer_id: str
    policy: dict
    payload_len: int
    prefix_len: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SessionMeta":
        raw = json.loads(text)
        return cls(
            model_id=str(raw["model_id"]),
            version=str(raw["version"]),
            tokenizer_id=str(raw["tokenizer_id"]),
            policy={k: raw["policy"][k] for k in ("C", "alpha", "epsilon", "k")},
            payload_len=int(raw["payload_len"]),
            prefix_len=int(raw["prefix_len"]),
        )


@dataclass(frozen=True)
class StegoResult:
    tokens: tuple[int, ...]
    text: str
    metrics: tuple[PerTokenMetrics, ...]
    prefix_used: str
    attempts: int
    meta: SessionMeta
    failed_prefixes: tuple[str, ...] = ()

    @property
    def max_quant_deviation(self) -> float:
        return max((m.quant_deviation for m in self.metrics), default=0.0)

    def metrics_json(self) -> str:
        return json.dumps(
            {"session": asdict(self.meta), "tokens": [asdict(m) for m in self.metrics],
             "prefix_used": self.prefix_used, "attempts": self.attempts,
             "max_quant_deviation": self.max_quant_deviation},
            indent=2,
        )


@dataclass(frozen=True)
class _Step:
    quantized: QuantizedDistribution
    metrics: PerTokenMetrics
    embed_entropy: float


@dataclass
class Attempt:
    """One embedding run for a fixed payload, before verification."""

    payload: str
    tokens: list[int]
    metrics: list[PerTokenMetrics]
    complete: bool
    bits_resolved: int
    embed_entropies: list[float] = field(default_factory=list)


class StegoCodec:
    """Sender/receiver pair bound to one source, tokenizer and policy."""

    def __init__(self, source: ProbabilitySource, tokenizer: Tokenizer, policy: EmbedPolicy | None = None):
        self.source = source
        self.tokenizer = tokenizer
        self.policy = policy or EmbedPolicy()
        if source.vocab_size != tokenizer.vocab_size:
            raise ValueError(
                f"source vocabulary ({source.vocab_size}) and tokenizer vocabulary ({tokenizer.vocab_size}) differ"
            )
        self._cache: dict[Hashable, _Step] = {}

    def meta(self, payload_len: int) -> SessionMeta:
        return SessionMeta(
            model_id=self.source.model_id,
            version=self.source.version,
            tokenizer_id=self.tokenizer.tokenizer_id,
            policy=self.policy.as_dict(),
            payload_len=payload_len,
            prefix_len=self.policy.prefix_bits,
        )

    def prepare(self, ctx: Sequence[int]) -> _Step:
        """Embedding distribution and metrics for the next token after ``ctx``."""
        key = self.source.context_key(ctx)
        step = self._cache.get(key)
        if step is not None:
            return step
        pol = self.policy
        P = self.source.next_distribution(ctx)
        H = entropy_bits(P)
        delta = adaptive_delta(H, pol)
        ts = two_stage(P, delta, pol.epsilon, pol.k, pol.bisect_tol, pol.bisect_max_iter)
        Q = ts.tilt.Q
        dev = float(np.max(np.abs(ts.quantized.probabilities() - Q.probs)))
        metrics = PerTokenMetrics(
            entropy_full=H,
            delta_i=delta,
            cutoff_cost=ts.cutoff_kl,
            optimization_kl=ts.tilt.achieved_kl,
            total_kl=kl_bits(Q, P),
            bits_resolved=0,
            quant_deviation=dev,
            support=Q.support_size,
            clamped=ts.clamped,
        )
        step = _Step(ts.quantized, metrics, entropy_bits(Q))
        if len(self._cache) >= _CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = step
        return step

    def embed(self, prompt_tokens: Sequence[int], payload: str, max_tokens: int | None = None) -> Attempt:
        """Generate tokens until the payload is resolved, or ``max_tokens`` are spent.

        With ``max_tokens`` given, running out of tokens is a normal outcome
        (``complete`` is False); otherwise a run longer than
        DEFAULT_MAX_TOKENS raises EmbeddingStalled.
        """
        state = start_embed(payload)
        n = len(payload)
        ctx = list(prompt_tokens)
        tokens: list[int] = []
        metrics: list[PerTokenMetrics] = []
        entropies: list[float] = []
        limit = DEFAULT_MAX_TOKENS if max_tokens is None else max_tokens
        done = 0
        complete = is_complete(state)
        while not complete:
            if len(tokens) >= limit:
                if max_tokens is None:
                    raise EmbeddingStalled(f"payload unresolved after {limit} tokens")
                break
            step = self.prepare(ctx)
            tok, state = embed_step(state, step.quantized)
            now = min(state.n_resolved, n)
            metrics.append(_with_bits(step.metrics, now - done))
            entropies.append(step.embed_entropy)
            done = now
            tokens.append(tok)
            ctx.append(tok)
            complete = is_complete(state)
        return Attempt(payload, tokens, metrics, complete, done, entropies)

    def extract(self, prompt_tokens: Sequence[int], tokens: Sequence[int], payload_len: int) -> str:
        """Replay ``tokens`` and return the first ``payload_len`` resolved bits."""
        state = start_extract()
        ctx = list(prompt_tokens)
        for tok in tokens:
            if state.n_resolved >= payload_len:
                break
            step = self.prepare(ctx)
            try:
                _, state = extract_step(state, tok, step.quantized)
            except TokenNotInDistribution:
                raise DesyncError(
                    f"token {tok} at position {len(ctx) - len(prompt_tokens)} is outside the reconstructed support"
                ) from None
            ctx.append(tok)
        if state.n_resolved < payload_len:
            raise DesyncError(f"stego text resolves only {state.n_resolved} of {payload_len} payload bits")
        return resolved_bits(state)[:payload_len]

    def verify(self, prompt_tokens: Sequence[int], text: str, payload: str) -> bool:
        """Decode from the receiver's view (retokenized text) and compare."""
        try:
            seen = self.tokenizer.tokenize(text)
            return self.extract(prompt_tokens, seen, len(payload)) == payload
        except (DesyncError, InvalidToken):
            return False

    def _prompt_tokens(self, prompt_text: str) -> list[int]:
        toks = self.tokenizer.tokenize(prompt_text)
        if not toks:
            raise ValueError("prompt must tokenize to at least one token")
        return toks

    def encode(self, prompt_text: str, secret_bits: str) -> StegoResult:
        if not secret_bits:
            raise ValueError("secret must contain at least one bit")
        prompt = self._prompt_tokens(prompt_text)
        nb = self.policy.prefix_bits
        failed: list[str] = []
        for value in range(1 << nb):
            prefix = format(value, f"0{nb}b") if nb else ""
            run = self.embed(prompt, prefix + secret_bits)
            text = self.tokenizer.detokenize(run.tokens)
            if self.verify(prompt, text, run.payload):
                return StegoResult(
                    tuple(run.tokens), text, tuple(run.metrics), prefix, value + 1,
                    self.meta(len(run.payload)), tuple(failed),
                )
            failed.append(prefix)
        raise UnembeddableMessage(
            f"all {1 << nb} retry prefixes failed verification; raise prefix_bits or change the prompt"
        )

    def decode(self, prompt_text: str, stego_text: str, payload_len: int, meta: SessionMeta | None = None) -> str:
        if meta is not None:
            check_meta(meta, self.meta(meta.payload_len))
        nb = self.policy.prefix_bits
        if payload_len <= nb:
            raise ValueError(f"payload_len ({payload_len}) must exceed the prefix length ({nb})")
        prompt = self._prompt_tokens(prompt_text)
        tokens = self.tokenizer.tokenize(stego_text)
        return self.extract(prompt, tokens, payload_len)[nb:]


def _with_bits(m: PerTokenMetrics, bits: int) -> PerTokenMetrics:
    return PerTokenMetrics(
        m.entropy_full, m.delta_i, m.cutoff_cost, m.optimization_kl, m.total_kl, bits,
        m.quant_deviation, m.support, m.clamped,
    )


def check_meta(received: SessionMeta, local: SessionMeta) -> None:
    diffs = []
    for name in ("model_id", "version", "tokenizer_id", "prefix_len"):
        if getattr(received, name) != getattr(local, name):
            diffs.append(f"{name}: {getattr(received, name)!r} != {getattr(local, name)!r}")
    for key, val in local.policy.items():
        if key not in received.policy or float(received.policy[key]) != float(val):
            diffs.append(f"policy.{key}: {received.policy.get(key)!r} != {val!r}")
    if diffs:
        raise MetadataMismatch("session metadata mismatch: " + "; ".join(diffs))


def encode(prompt_text: str, secret_bits: str, policy: EmbedPolicy, source: ProbabilitySource,
           tokenizer: Tokenizer) -> StegoResult:
    return StegoCodec(source, tokenizer, policy).encode(prompt_text, secret_bits)


def decode(prompt_text: str, stego_text: str, payload_len: int, policy: EmbedPolicy,
           source: ProbabilitySource, tokenizer: Tokenizer, meta: SessionMeta | None = None) -> str:
    return StegoCodec(source, tokenizer, policy).decode(prompt_text, stego_text, payload_len, meta)


def choose_prefix_length(secret_len_bits: int, per_bit_error_rate: float = DEFAULT_MISMATCH_RATE,
                         target: float = 1e-8, max_bits: int = 16) -> int:
    """Smallest |B| >= 1 with ((|B| + |S|) * rate) ** (2 ** |B|) <= target.

    Each of the 2**|B| prefixes is an independent try that fails with
    probability about rate * (|B| + |S|); this is the numeric form of the
    bound, valid for any rate.
    """
    if secret_len_bits < 1:
        raise ValueError("secret must contain at least one bit")
    if not 0.0 < per_bit_error_rate < 1.0:
        raise ValueError("per-bit error rate must lie in (0, 1)")
    if per_bit_error_rate * secret_len_bits >= 1.0:
        raise TargetUnreachable(
            f"a {secret_len_bits}-bit secret fails almost surely at per-bit rate {per_bit_error_rate}"
        )
    log_target = math.log(target)
    for b in range(1, max_bits + 1):
        fail = per_bit_error_rate * (b + secret_len_bits)
        if fail < 1.0 and (1 << b) * math.log(fail) <= log_target:
            return b
    raise TargetUnreachable(f"no prefix up to {max_bits} bits reaches the target {target}")


@dataclass(frozen=True)
class MismatchRate:
    sessions: int
    failures: int
    payload_bits: int

    @property
    def session_rate(self) -> float:
        return self.failures / self.sessions

    @property
    def per_bit_rate(self) -> float:
        return self.session_rate / self.payload_bits


def measure_mismatch_rate(codec: StegoCodec, prompts: Sequence[str], sessions: int, payload_bits: int,
                          seed: int = 0) -> MismatchRate:
    """Single-attempt failure rate (no retry) over random payloads and prompts."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(sessions):
        prompt = codec._prompt_tokens(prompts[int(rng.integers(len(prompts)))])
        payload = "".join(rng.choice(["0", "1"], size=payload_bits))
        run = codec.embed(prompt, payload)
        if not codec.verify(prompt, codec.tokenizer.detokenize(run.tokens), payload):
            failures += 1
    return MismatchRate(sessions, failures, payload_bits)


def bits_from_bytes(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


def bytes_from_bits(bits: str) -> bytes:
    if len(bits) % 8:
        raise ValueError("bit string length is not a multiple of 8")
    return bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))
