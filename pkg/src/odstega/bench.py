"""Bits-per-token versus KL sweeps on the offline toy model.

Each grid point runs ``runs_per_point`` sessions at a fixed token budget with
a payload longer than the budget can carry, and records how many payload bits
were resolved and the mean per-token KL. The truncation-only baseline is the
C = 0 family over ``baseline_epsilons``. Run r of every grid point uses the
same prompt and payload, so differences between rows come from the policy
alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StegoError
from .lm import TableMarkov, load_corpus
from .pipeline import StegoCodec
from .solver import EmbedPolicy
from .tokenizers import SubwordTokenizer, WhitespaceTokenizer, normalize_corpus

log = logging.getLogger(__name__)

CSV_COLUMNS = ("C", "alpha", "epsilon", "runs", "mean_bytes", "mean_kl_bits", "mean_bits_per_token", "stderr_bytes")


@dataclass(frozen=True)
class SweepSpec:
    C: tuple[float, ...] = (0.0, 0.005, 0.01, 0.025, 0.05, 0.075)
    alpha: tuple[float, ...] = (0.0,)
    epsilon: tuple[float, ...] = (0.01,)
    baseline_epsilons: tuple[float, ...] = (0.0, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05)
    token_budget: int = 25
    runs_per_point: int = 100
    seed: int = 0
    corpus: str = "grammar"
    order: int = 1
    tokenizer: str = "ws"
    prompt_words: int = 3
    k: int = 30

    def __post_init__(self) -> None:
        if not (self.C and self.alpha and self.epsilon):
            raise ValueError("sweep grids must be non-empty")
        if self.runs_per_point < 1 or self.token_budget < 1:
            raise ValueError("runs_per_point and token_budget must be at least 1")
        for C in self.C:
            for a in self.alpha:
                for e in (*self.epsilon, *self.baseline_epsilons):
                    EmbedPolicy(C=C, alpha=a, epsilon=e, k=self.k)

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepSpec":
        kw = dict(raw)
        for key in ("C", "alpha", "epsilon", "baseline_epsilons"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | Path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SweepRow:
    C: float
    alpha: float
    epsilon: float
    mean_bytes_embedded: float
    mean_kl_bits: float
    mean_bits_per_token: float
    run_count: int
    stderr_bytes: float
    errors: int = 0

    @property
    def is_baseline(self) -> bool:
        return self.C == 0.0


def _build_model(spec: SweepSpec):
    text = load_corpus(spec.corpus)
    if spec.tokenizer == "ws":
        tk = WhitespaceTokenizer.from_corpus(text)
    elif spec.tokenizer == "subword":
        tk = SubwordTokenizer.from_corpus(text)
    else:
        raise ValueError(f"unknown tokenizer {spec.tokenizer!r}")
    return text, tk, TableMarkov.from_corpus(text, tk, spec.order)


def _run_inputs(spec: SweepSpec, words: Sequence[str], tk, vocab_size: int) -> list[tuple[str, str]]:
    payload_len = spec.token_budget * math.ceil(math.log2(vocab_size)) + 64
    out = []
    for r in range(spec.runs_per_point):
        rng = np.random.default_rng([spec.seed, r])
        start = int(rng.integers(0, len(words) - spec.prompt_words))
        prompt = " ".join(words[start : start + spec.prompt_words])
        if isinstance(tk, SubwordTokenizer):
            prompt = " " + prompt
        payload = "".join("1" if b else "0" for b in rng.integers(0, 2, size=payload_len))
        out.append((prompt, payload))
    return out


def _grid(spec: SweepSpec) -> list[tuple[float, float, float]]:
    points = [(C, a, e) for C in spec.C for a in spec.alpha for e in spec.epsilon]
    seen = {(C, e) for C, _, e in points if C == 0.0}
    for e in spec.baseline_epsilons:
        if (0.0, e) not in seen:
            points.append((0.0, spec.alpha[0], e))
            seen.add((0.0, e))
    return points


def run_point(codec: StegoCodec, inputs: Sequence[tuple[str, str]], budget: int) -> SweepRow:
    bits, kls, errors = [], [], 0
    for prompt, payload in inputs:
        try:
            run = codec.embed(codec.tokenizer.tokenize(prompt), payload, max_tokens=budget)
        except StegoError as exc:
            log.warning("sweep run failed: %s", exc)
            errors += 1
            continue
        bits.append(run.bits_resolved)
        kls.append(float(np.mean([m.total_kl for m in run.metrics])) if run.metrics else 0.0)
    pol = codec.policy
    n = len(bits)
    if n == 0:
        return SweepRow(pol.C, pol.alpha, pol.epsilon, math.nan, math.nan, math.nan, 0, math.nan, errors)
    b = np.asarray(bits, dtype=np.float64)
    stderr = float(np.std(b / 8, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SweepRow(pol.C, pol.alpha, pol.epsilon, float(b.mean() / 8), float(np.mean(kls)),
                    float(b.mean() / budget), n, stderr, errors)


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    text, tk, source = _build_model(spec)
    inputs = _run_inputs(spec, normalize_corpus(text), tk, source.vocab_size)
    rows = []
    for C, a, e in _grid(spec):
        codec = StegoCodec(source, tk, EmbedPolicy(C=C, alpha=a, epsilon=e, k=spec.k, prefix_bits=0))
        rows.append(run_point(codec, inputs, spec.token_budget))
    return rows


def rows_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([
            f"{r.C:g}", f"{r.alpha:g}", f"{r.epsilon:g}", r.run_count, f"{r.mean_bytes_embedded:.2f}",
            f"{r.mean_kl_bits:.6f}", f"{r.mean_bits_per_token:.6f}", f"{r.stderr_bytes:.4f}",
        ])
    return buf.getvalue()


def kl_monotone_in_C(rows: Sequence[SweepRow]) -> list[tuple[SweepRow, SweepRow]]:
    """Adjacent (C, C') pairs at fixed (alpha, epsilon) where mean KL decreases."""
    groups: dict[tuple[float, float], list[SweepRow]] = {}
    for r in rows:
        groups.setdefault((r.alpha, r.epsilon), []).append(r)
    bad = []
    for group in groups.values():
        group = sorted(group, key=lambda r: r.C)
        for a, b in zip(group, group[1:]):
            if b.mean_kl_bits < a.mean_kl_bits:
                bad.append((a, b))
    return bad


def dominance_violations(rows: Sequence[SweepRow], bucket: float = 0.10) -> list[tuple[SweepRow, SweepRow]]:
    """(OD row, baseline row) pairs with matched mean KL where OD embeds fewer bits per token.

    Rows are matched when the baseline KL lies within +-``bucket`` (relative)
    of the OD row's KL.
    """
    od = [r for r in rows if not r.is_baseline]
    base = [r for r in rows if r.is_baseline]
    bad = []
    for o in od:
        for b in base:
            if abs(b.mean_kl_bits - o.mean_kl_bits) <= bucket * o.mean_kl_bits:
                if o.mean_bits_per_token < b.mean_bits_per_token:
                    bad.append((o, b))
    return bad
