"""Exception hierarchy shared by all odstega modules."""

from __future__ import annotations


class StegoError(Exception):
    """Base class for every error raised by odstega."""


class EmptySupport(StegoError, ValueError):
    """A probability vector had no strictly positive entry."""


class SupportMismatch(StegoError, ValueError):
    """Q puts mass on a token where P has none."""


class PrecisionTooLow(StegoError, ValueError):
    """2**k counts cannot give every retained token at least one count."""


class ConvergenceFailure(StegoError, RuntimeError):
    """Bisection for the tilt exponent failed to reach its tolerance."""

    def __init__(self, message: str, bracket: tuple[float, float], residual: float):
        super().__init__(f"{message} (bracket={bracket}, residual={residual:.3e})")
        self.bracket = bracket
        self.residual = residual


class InvalidPolicy(StegoError, ValueError):
    """An EmbedPolicy parameter is outside its allowed range."""


class EmptyMessage(StegoError, ValueError):
    """An empty bit string was given as payload."""


class TokenNotInDistribution(StegoError, KeyError):
    """The replayed token has no slot in the reconstructed distribution."""


class InvalidToken(StegoError, ValueError):
    """A token index or text fragment is not covered by the vocabulary."""


class SourceUnavailable(StegoError, RuntimeError):
    """The probability source could not be reached or answered badly."""


class DesyncError(StegoError, RuntimeError):
    """Decoder state diverged from the encoder's (configuration drift or tampering)."""


class UnembeddableMessage(StegoError, RuntimeError):
    """No retry prefix produced a stego text that decodes correctly."""


class EmbeddingStalled(StegoError, RuntimeError):
    """The token interval stopped shrinking before the payload was resolved."""


class TargetUnreachable(StegoError, ValueError):
    """No prefix length reaches the success target at the given mismatch rate."""


class MetadataMismatch(StegoError, ValueError):
    """Session metadata differs between encoder and decoder."""
