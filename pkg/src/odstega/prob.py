"""Probability-vector algebra over next-token distributions.

Every quantity is measured in bits. Distributions only ever hold strictly
positive entries, sorted by descending probability with ties broken by
ascending vocabulary index, so that sender and receiver agree on the slot
order bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySupport, PrecisionTooLow, SupportMismatch

DEFAULT_PRECISION = 30
STRIP_BELOW = 2.0**-60
_RENORM_SLACK = 1e-12
_CUTOFF_SLACK = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """Nonzero next-token probabilities, sorted descending.

    ``indices[j]`` is the vocabulary index of the j-th most likely token and
    ``probs[j]`` its probability. ``vocab_size`` records the full vocabulary
    size N when known; tokens missing from ``indices`` have probability zero.
    """

    indices: np.ndarray
    probs: np.ndarray
    vocab_size: int | None = None

    @property
    def support_size(self) -> int:
        return int(self.probs.shape[0])

    def __len__(self) -> int:
        return self.support_size

    def as_pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.probs.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenDistribution):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash((self.indices.tobytes(), self.probs.tobytes()))

    @classmethod
    def _trusted(cls, indices: np.ndarray, probs: np.ndarray, vocab_size: int | None) -> "TokenDistribution":
        # caller guarantees ordering, positivity and normalization
        return cls(_frozen(indices), _frozen(probs), vocab_size)


def build_distribution(
    raw: Iterable[tuple[int, float]] | TokenDistribution,
    vocab_size: int | None = None,
) -> TokenDistribution:
    """Strip zeros, renormalize and sort ``(vocab_index, prob)`` pairs.

    Raises EmptySupport when no probability is strictly positive.
    """
    if isinstance(raw, TokenDistribution):
        idx = np.array(raw.indices, dtype=np.int64)
        p = np.array(raw.probs, dtype=np.float64)
        vocab_size = raw.vocab_size if vocab_size is None else vocab_size
    else:
        pairs = list(raw)
        idx = np.fromiter((i for i, _ in pairs), dtype=np.int64, count=len(pairs))
        p = np.fromiter((q for _, q in pairs), dtype=np.float64, count=len(pairs))
    return _build(idx, p, vocab_size)


def distribution_from_vector(probs: Sequence[float] | np.ndarray) -> TokenDistribution:
    """Build from a dense full-vocabulary probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    return _build(np.arange(p.shape[0], dtype=np.int64), p.copy(), int(p.shape[0]))


def _build(idx: np.ndarray, p: np.ndarray, vocab_size: int | None) -> TokenDistribution:
    if p.ndim != 1 or idx.shape != p.shape:
        raise ValueError("indices and probabilities must be 1-D and equally long")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    if np.unique(idx).shape[0] != idx.shape[0]:
        raise ValueError("vocabulary indices must be distinct")
    keep = p > 0
    idx, p = idx[keep], p[keep]
    if p.shape[0] == 0:
        raise EmptySupport("distribution has no positive probability")
    p = _normalize(p)
    tiny = p < STRIP_BELOW
    if tiny.any():
        idx, p = idx[~tiny], _normalize(p[~tiny])
    order = np.lexsort((idx, -p))
    return TokenDistribution._trusted(idx[order], p[order], vocab_size)


def _normalize(p: np.ndarray) -> np.ndarray:
    s = math.fsum(p.tolist())
    if abs(s - 1.0) > _RENORM_SLACK:
        p = p / s
    return p


def uniform(indices: Sequence[int] | np.ndarray, vocab_size: int | None = None) -> TokenDistribution:
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    n = idx.shape[0]
    if n == 0:
        raise EmptySupport("uniform distribution over an empty set")
    return TokenDistribution._trusted(idx, np.full(n, 1.0 / n), vocab_size)


def entropy_bits(P: TokenDistribution) -> float:
    p = P.probs
    h = -float(np.dot(p, np.log2(p)))
    return min(max(h, 0.0), math.log2(P.support_size))


def _aligned(Q: TokenDistribution, P: TokenDistribution) -> np.ndarray:
    """Return P's probabilities at Q's tokens, in Q's order."""
    n = Q.support_size
    if n <= P.support_size and np.array_equal(Q.indices, P.indices[:n]):
        return P.probs[:n]
    order = np.argsort(P.indices, kind="stable")
    sorted_idx = P.indices[order]
    pos = np.searchsorted(sorted_idx, Q.indices)
    pos_c = np.minimum(pos, sorted_idx.shape[0] - 1)
    if np.any(sorted_idx[pos_c] != Q.indices):
        missing = Q.indices[sorted_idx[pos_c] != Q.indices]
        raise SupportMismatch(f"Q has mass on tokens absent from P: {missing[:8].tolist()}")
    return P.probs[order[pos_c]]


def kl_bits(Q: TokenDistribution, P: TokenDistribution) -> float:
    """D(Q || P) in bits; raises SupportMismatch if Q is not absolutely continuous w.r.t. P."""
    p = _aligned(Q, P)
    q = Q.probs
    d = float(np.dot(q, np.log2(q) - np.log2(p)))
    return max(d, 0.0)


def truncate_epsilon(P: TokenDistribution, eps: float) -> tuple[TokenDistribution, float]:
    """Keep the shortest most-likely prefix holding at least ``1 - eps`` of the mass.

    The kept prefix is renormalized by its actual mass m, so that the cut
    costs exactly ``-log2(m)`` bits of KL. Returns the cut distribution and
    the removed mass ``1 - m``.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    if eps == 0.0:
        return P, 0.0
    csum = np.cumsum(P.probs)
    n = int(np.searchsorted(csum, 1.0 - eps - _CUTOFF_SLACK, side="left")) + 1
    n = min(n, P.support_size)
    if n == P.support_size:
        return P, 0.0
    kept = P.probs[:n]
    m = math.fsum(kept.tolist())
    removed = math.fsum(P.probs[n:].tolist())
    cut = TokenDistribution._trusted(P.indices[:n].copy(), kept / m, P.vocab_size)
    return cut, removed


def retained_mass(cut: TokenDistribution, P: TokenDistribution) -> float:
    return math.fsum(_aligned(cut, P).tolist())


def cutoff_kl_bits(mass: float) -> float:
    """KL cost in bits of renormalizing a kept prefix of mass ``mass``."""
    if not 0.0 < mass <= 1.0 + 1e-12:
        raise ValueError(f"retained mass must lie in (0, 1], got {mass}")
    return max(-math.log2(mass), 0.0)


@dataclass(frozen=True)
class QuantizedDistribution:
    """Integer cumulative counts over ``total = 2**k``; slot j covers
    ``[cum_counts[j-1], cum_counts[j])`` (with ``cum_counts[-1] = 0``)."""

    cum_counts: tuple[int, ...]
    total: int
    index_map: tuple[int, ...]
    _slots: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self._slots:
            self._slots.update({v: s for s, v in enumerate(self.index_map)})

    @property
    def counts(self) -> list[int]:
        prev = 0
        out = []
        for c in self.cum_counts:
            out.append(c - prev)
            prev = c
        return out

    def slot_of(self, vocab_index: int) -> int | None:
        return self._slots.get(vocab_index)

    def bounds(self, slot: int) -> tuple[int, int]:
        lo = self.cum_counts[slot - 1] if slot else 0
        return lo, self.cum_counts[slot]

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / self.total


def quantize(Q: TokenDistribution, k: int = DEFAULT_PRECISION) -> QuantizedDistribution:
    """Largest-remainder apportionment of 2**k counts with a floor of one count per slot."""
    total = 1 << k
    n = Q.support_size
    if total < n:
        raise PrecisionTooLow(f"2**{k} = {total} counts cannot cover {n} tokens")
    scaled = Q.probs * total
    counts = np.floor(scaled).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        rem = scaled - counts
        order = np.lexsort((Q.indices, -rem))
        counts[order[:leftover]] += 1
    elif leftover < 0:
        order = np.lexsort((Q.indices, -counts))
        counts[order[:-leftover]] -= 1
    zeros = np.flatnonzero(counts == 0)
    if zeros.size:
        counts[zeros] = 1
        for _ in range(zeros.size):
            top = np.flatnonzero(counts == counts.max())
            counts[top[np.argmin(Q.indices[top])]] -= 1
    cum = np.cumsum(counts)
    return QuantizedDistribution(tuple(cum.tolist()), total, tuple(Q.indices.tolist()))
