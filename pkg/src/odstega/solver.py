"""Entropy maximization of a next-token distribution under a KL budget.

The maximizer of H(Q) subject to D(Q || P) <= delta is the power tilt
Q_j ~ P_j ** (u / (1 + u)). The exponent is found by bisection on
t = u / (1 + u), which maps u in [0, inf] onto [0, 1]; the KL of the tilt
falls monotonically from KL(uniform || P) at t = 0 to zero at t = 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, InvalidPolicy
from .prob import (
    DEFAULT_PRECISION,
    QuantizedDistribution,
    TokenDistribution,
    cutoff_kl_bits,
    quantize,
    retained_mass,
    truncate_epsilon,
    uniform,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class EmbedPolicy:
    """Per-token embedding parameters shared by sender and receiver.

    ``C`` scales the KL budget with the token entropy, ``alpha`` is the
    entropy floor (bits) below which no budget is granted, ``epsilon`` is the
    tail mass cut before optimizing, ``k`` the quantization precision and
    ``prefix_bits`` the length of the sacrificial retry prefix.
    """

    C: float = 0.0
    alpha: float = 0.0
    epsilon: float = 0.0
    k: int = DEFAULT_PRECISION
    bisect_tol: float = DEFAULT_TOL
    bisect_max_iter: int = DEFAULT_MAX_ITER
    prefix_bits: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.C < 0.2:
            raise InvalidPolicy(f"C must lie in [0, 0.2), got {self.C}")
        if not 0.0 <= self.alpha <= 2.0:
            raise InvalidPolicy(f"alpha must lie in [0, 2], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 0.05:
            raise InvalidPolicy(f"epsilon must lie in [0, 0.05], got {self.epsilon}")
        if not 1 <= self.k <= 40:
            raise InvalidPolicy(f"precision k must lie in [1, 40], got {self.k}")
        if not self.bisect_tol > 0:
            raise InvalidPolicy("bisect_tol must be positive")
        if self.bisect_max_iter < 1:
            raise InvalidPolicy("bisect_max_iter must be at least 1")
        if not 0 <= self.prefix_bits <= 16:
            raise InvalidPolicy(f"prefix_bits must lie in [0, 16], got {self.prefix_bits}")

    def as_dict(self) -> dict:
        return {"C": self.C, "alpha": self.alpha, "epsilon": self.epsilon, "k": self.k}


class Branch(enum.Enum):
    TILTED = "tilted"
    UNIFORM = "uniform"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class TiltResult:
    Q: TokenDistribution
    u: float
    achieved_kl: float
    branch: Branch

    @property
    def exponent(self) -> float:
        if math.isinf(self.u):
            return 1.0
        return self.u / (1.0 + self.u)


def delta_max(P: TokenDistribution) -> float:
    """KL(uniform || P) in bits: the largest budget that still binds."""
    n = P.support_size
    d = -math.log2(n) - float(np.mean(np.log2(P.probs)))
    return max(d, 0.0)


def _tilt_exponent(P: TokenDistribution, logp: np.ndarray, t: float) -> tuple[np.ndarray, float]:
    """Tilted probabilities and their KL to P, for exponent t in [0, 1]."""
    # logp is sorted descending, so logp[0] is the max-shift for the log-sum-exp
    e = np.exp2(t * (logp - logp[0]))
    s = float(e.sum())
    q = e / s
    lse = t * float(logp[0]) + math.log2(s)
    kl = (t - 1.0) * float(np.dot(q, logp)) - lse
    return q, max(kl, 0.0)


def tilt(P: TokenDistribution, u: float) -> TokenDistribution:
    """Q_j proportional to P_j ** (u / (1 + u)); ``u = math.inf`` returns P."""
    if u < 0:
        raise ValueError(f"u must be non-negative, got {u}")
    if math.isinf(u):
        return P
    if u == 0:
        return uniform(P.indices, P.vocab_size)
    q, _ = _tilt_exponent(P, np.log2(P.probs), u / (1.0 + u))
    return TokenDistribution._trusted(P.indices, q, P.vocab_size)


def solve_u(
    P: TokenDistribution,
    delta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TiltResult:
    """Find the tilt whose KL to P equals ``delta`` within ``tol`` bits."""
    dmax = delta_max(P)
    if not 0.0 < delta < dmax:
        raise ValueError(f"delta must lie in (0, {dmax}), got {delta}")
    logp = np.log2(P.probs)
    lo, hi = 0.0, 1.0
    residual = math.inf
    for _ in range(max_iter):
        t = 0.5 * (lo + hi)
        if t <= lo or t >= hi:
            break
        q, kl = _tilt_exponent(P, logp, t)
        residual = kl - delta
        if abs(residual) <= tol:
            u = t / (1.0 - t)
            return TiltResult(TokenDistribution._trusted(P.indices, q, P.vocab_size), u, kl, Branch.TILTED)
        if residual > 0:
            lo = t
        else:
            hi = t
    raise ConvergenceFailure("bisection on the tilt exponent did not converge", (lo, hi), residual)


def optimize_distribution(
    P: TokenDistribution,
    delta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TiltResult:
    """Maximum-entropy Q with D(Q || P) <= delta."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta == 0:
        return TiltResult(P, math.inf, 0.0, Branch.UNCHANGED)
    dmax = delta_max(P)
    if delta >= dmax:
        return TiltResult(uniform(P.indices, P.vocab_size), 0.0, dmax, Branch.UNIFORM)
    return solve_u(P, delta, tol, max_iter)


def adaptive_delta(H: float, policy: EmbedPolicy) -> float:
    """Budget C * H for tokens at or above the entropy floor, zero below it."""
    if H < 0:
        raise ValueError(f"entropy must be non-negative, got {H}")
    return policy.C * H if H >= policy.alpha else 0.0


@dataclass(frozen=True)
class TwoStage:
    """Result of cutting the tail, then tilting within the remaining budget."""

    tilt: TiltResult
    quantized: QuantizedDistribution
    truncated: TokenDistribution
    retained_mass: float
    cutoff_kl: float
    budget: float
    clamped: bool


def two_stage(
    P: TokenDistribution,
    delta_total: float,
    eps: float,
    k: int = DEFAULT_PRECISION,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TwoStage:
    """Truncate with ``eps``, spend what is left of ``delta_total`` on the tilt, quantize.

    The cut costs exactly -log2(m) bits for retained mass m; when that alone
    exceeds the budget the tilt budget is clamped to zero.
    """
    if delta_total < 0:
        raise ValueError(f"delta_total must be non-negative, got {delta_total}")
    cut, removed = truncate_epsilon(P, eps)
    mass = retained_mass(cut, P) if removed else 1.0
    cost = cutoff_kl_bits(mass) if removed else 0.0
    budget = delta_total - cost
    clamped = budget < 0
    budget = max(budget, 0.0)
    result = optimize_distribution(cut, budget, tol, max_iter)
    return TwoStage(result, quantize(result.Q, k), cut, mass, cost, budget, clamped)
