"""Integer arithmetic-coding state machine used as a steganographic sampler.

Embedding runs an arithmetic *decoder* whose code stream is the steering
point 0.<bits>1000..., the midpoint of the message interval I. Each step picks
the token whose subinterval holds that point. Embedding is complete once the
token interval J lies inside I, at which point every real in J starts with
the payload bits. Extraction replays the chosen tokens through the matching
*encoder* and emits the bits on which J's endpoints agree.

Registers are W = 62 bits wide with the usual shift-out renormalization and
pending (follow) bits for the straddle case, so all arithmetic is exact.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction

from .errors import EmptyMessage, TokenNotInDistribution
from .prob import QuantizedDistribution

WIDTH = 62
FULL = 1 << WIDTH
MASK = FULL - 1
HALF = FULL >> 1
QUARTER = HALF >> 1


@dataclass(frozen=True)
class MessageWindow:
    """Dyadic interval [m / 2**n, (m + 1) / 2**n) of reals starting with ``bits``."""

    bits: str

    def __post_init__(self) -> None:
        if not self.bits:
            raise EmptyMessage("payload must contain at least one bit")
        if set(self.bits) - {"0", "1"}:
            raise ValueError("payload must be a string of '0'/'1' characters")

    @property
    def value(self) -> int:
        return int(self.bits, 2)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def lo(self) -> Fraction:
        return Fraction(self.value, 1 << len(self.bits))

    @property
    def hi(self) -> Fraction:
        return Fraction(self.value + 1, 1 << len(self.bits))

    def point_bit(self, pos: int) -> int:
        """Bit ``pos`` of the steering point 0.<bits>1000..."""
        n = len(self.bits)
        if pos < n:
            return 1 if self.bits[pos] == "1" else 0
        return 1 if pos == n else 0


def interval_from_bits(bits: str) -> MessageWindow:
    return MessageWindow(bits)


@dataclass(frozen=True, slots=True)
class CoderState:
    """Register state of one embed or extract session.

    ``resolved`` holds the ``n_resolved`` leading bits of J already shifted
    out; ``pending`` counts straddle bits whose value is not yet known.
    ``code`` and ``read_pos`` are only used while embedding.
    """

    low: int
    high: int
    pending: int
    resolved: int
    n_resolved: int
    tokens_emitted: int
    message: MessageWindow | None = None
    code: int = 0
    read_pos: int = 0

    def token_interval(self) -> tuple[Fraction, Fraction]:
        """J = [lo, hi) as exact rationals at full scale."""
        lo, hi, scale = _absolute(self)
        return Fraction(lo, 1 << scale), Fraction(hi, 1 << scale)


def start_embed(message: MessageWindow | str) -> CoderState:
    if isinstance(message, str):
        message = MessageWindow(message)
    code = 0
    for pos in range(WIDTH):
        code = (code << 1) | message.point_bit(pos)
    return CoderState(0, MASK, 0, 0, 0, 0, message, code, WIDTH)


def start_extract() -> CoderState:
    return CoderState(0, MASK, 0, 0, 0, 0)


def _absolute(state: CoderState) -> tuple[int, int, int]:
    """Integer endpoints of J over a common power-of-two denominator."""
    p = state.pending
    scale = state.n_resolved + p + WIDTH + 1
    base = (state.resolved << (p + WIDTH + 1)) + (1 << (p + WIDTH)) - FULL
    return base + 2 * state.low, base + 2 * (state.high + 1), scale


def interval_within(j_lo: Fraction, j_hi: Fraction, window: MessageWindow) -> bool:
    return window.lo <= j_lo and j_hi <= window.hi


def is_complete(state: CoderState) -> bool:
    """True once every real in J begins with all payload bits."""
    msg = state.message
    if msg is None:
        raise ValueError("is_complete needs an embedding state")
    n = len(msg)
    # cheap width filter: J cannot fit in I while it is wider than 2**-n
    span = state.high + 1 - state.low
    if span.bit_length() - 1 > state.n_resolved + state.pending + WIDTH - n:
        return False
    lo, hi, scale = _absolute(state)
    if scale < n:
        return False
    shift = scale - n
    m = msg.value
    return lo >= (m << shift) and hi <= ((m + 1) << shift)


def _narrow(low: int, high: int, dist: QuantizedDistribution, slot: int) -> tuple[int, int]:
    rng = high - low + 1
    total = dist.total
    if rng < total:
        raise AssertionError("register range collapsed below the distribution total")
    start, end = dist.bounds(slot)
    return low + start * rng // total, low + end * rng // total - 1


def embed_step(state: CoderState, dist: QuantizedDistribution) -> tuple[int, CoderState]:
    """Pick the token whose subinterval holds the steering point and narrow J to it."""
    msg = state.message
    if msg is None:
        raise ValueError("embed_step needs an embedding state")
    low, high, code = state.low, state.high, state.code
    rng = high - low + 1
    value = ((code - low + 1) * dist.total - 1) // rng
    slot = bisect_right(dist.cum_counts, value)
    low, high = _narrow(low, high, dist, slot)
    pending, resolved, n_resolved, pos = state.pending, state.resolved, state.n_resolved, state.read_pos
    while True:
        if high < HALF or low >= HALF:
            bit = 1 if low >= HALF else 0
            resolved = (resolved << (pending + 1)) | (bit << pending) | ((1 << pending) - 1 if not bit else 0)
            n_resolved += pending + 1
            pending = 0
            low = (low << 1) & MASK
            high = ((high << 1) & MASK) | 1
            code = ((code << 1) & MASK) | msg.point_bit(pos)
            pos += 1
        elif low >= QUARTER and high < HALF + QUARTER:
            pending += 1
            low = (low << 1) & (MASK >> 1)
            high = ((high << 1) & (MASK >> 1)) | HALF | 1
            code = (code & HALF) | ((code << 1) & (MASK >> 1)) | msg.point_bit(pos)
            pos += 1
        else:
            break
    new = CoderState(low, high, pending, resolved, n_resolved, state.tokens_emitted + 1, msg, code, pos)
    return dist.index_map[slot], new


def extract_step(state: CoderState, vocab_index: int, dist: QuantizedDistribution) -> tuple[str, CoderState]:
    """Narrow J to ``vocab_index``'s slot and return the newly resolved bits."""
    slot = dist.slot_of(vocab_index)
    if slot is None:
        raise TokenNotInDistribution(vocab_index)
    low, high = _narrow(state.low, state.high, dist, slot)
    pending, resolved, n_resolved = state.pending, state.resolved, state.n_resolved
    out: list[str] = []
    while True:
        if high < HALF or low >= HALF:
            bit = 1 if low >= HALF else 0
            out.append(("1" if bit else "0") + ("0" if bit else "1") * pending)
            resolved = (resolved << (pending + 1)) | (bit << pending) | ((1 << pending) - 1 if not bit else 0)
            n_resolved += pending + 1
            pending = 0
            low = (low << 1) & MASK
            high = ((high << 1) & MASK) | 1
        elif low >= QUARTER and high < HALF + QUARTER:
            pending += 1
            low = (low << 1) & (MASK >> 1)
            high = ((high << 1) & (MASK >> 1)) | HALF | 1
        else:
            break
    new = CoderState(low, high, pending, resolved, n_resolved, state.tokens_emitted + 1)
    return "".join(out), new


def resolved_bits(state: CoderState) -> str:
    if not state.n_resolved:
        return ""
    return format(state.resolved, f"0{state.n_resolved}b")
