"""Toy tokenizers: one bijective, one with deliberately ambiguous merges.

``WhitespaceTokenizer`` maps single-space separated words to ids and back
without loss in either direction. ``SubwordTokenizer`` segments text by
greedy longest match over a piece inventory that contains both whole words
and word halves, so a sequence such as [" mount", "ain"] detokenizes fine
but retokenizes as [" mountain"].
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Protocol, Sequence

from .errors import InvalidToken


class Tokenizer(Protocol):
    tokenizer_id: str

    @property
    def vocab_size(self) -> int: ...

    def tokenize(self, text: str) -> list[int]: ...

    def detokenize(self, tokens: Sequence[int]) -> str: ...

    def training_segmentation(self, text: str) -> list[int]: ...


def _digest(kind: str, pieces: Iterable[str]) -> str:
    h = hashlib.sha256()
    for piece in pieces:
        h.update(piece.encode("utf-8"))
        h.update(b"\x00")
    return f"{kind}:{h.hexdigest()[:16]}"


def normalize_corpus(text: str) -> list[str]:
    return text.split()


class _PieceVocab:
    def __init__(self, pieces: Sequence[str]):
        if len(set(pieces)) != len(pieces):
            raise ValueError("duplicate pieces in vocabulary")
        if len(pieces) < 2:
            raise ValueError("vocabulary needs at least two pieces")
        self.pieces = list(pieces)
        self.ids = {p: i for i, p in enumerate(self.pieces)}

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    @property
    def token_text(self) -> dict[int, str]:
        return dict(enumerate(self.pieces))

    def piece(self, token: int) -> str:
        if not 0 <= token < len(self.pieces):
            raise InvalidToken(f"token index {token} outside vocabulary of size {len(self.pieces)}")
        return self.pieces[token]


class WhitespaceTokenizer(_PieceVocab):
    """Words joined by single spaces; tokenize and detokenize are mutual inverses."""

    def __init__(self, words: Sequence[str]):
        if any((not w) or any(c.isspace() for c in w) for w in words):
            raise ValueError("words must be non-empty and contain no whitespace")
        super().__init__(words)
        self.tokenizer_id = _digest("ws", self.pieces)

    @classmethod
    def from_corpus(cls, text: str) -> "WhitespaceTokenizer":
        return cls(sorted(set(normalize_corpus(text))))

    def tokenize(self, text: str) -> list[int]:
        if not text:
            return []
        out = []
        for word in text.split(" "):
            try:
                out.append(self.ids[word])
            except KeyError:
                raise InvalidToken(f"word {word!r} is not in the vocabulary") from None
        return out

    def detokenize(self, tokens: Sequence[int]) -> str:
        return " ".join(self.piece(t) for t in tokens)

    def training_segmentation(self, text: str) -> list[int]:
        return self.tokenize(" ".join(normalize_corpus(text)))


class SubwordTokenizer(_PieceVocab):
    """Greedy longest-match segmentation over a fixed piece inventory.

    ``split_period`` controls how often the training segmentation splits a
    long word into its two halves, which is what lets a model trained on it
    emit non-canonical token sequences.
    """

    def __init__(self, pieces: Sequence[str], split_period: int = 0, min_split_len: int = 4):
        super().__init__(pieces)
        self.split_period = split_period
        self.min_split_len = min_split_len
        self.max_len = max(len(p) for p in self.pieces)
        self.tokenizer_id = _digest(f"subword{split_period}", self.pieces)

    @classmethod
    def from_corpus(cls, text: str, split_period: int = 199, min_split_len: int = 4) -> "SubwordTokenizer":
        words = normalize_corpus(text)
        pieces: set[str] = set(" " + " ".join(words))
        for w in set(words):
            pieces.add(" " + w)
            if len(w) >= min_split_len:
                head, tail = _halves(w)
                pieces.add(" " + head)
                pieces.add(tail)
        return cls(sorted(pieces), split_period, min_split_len)

    def tokenize(self, text: str) -> list[int]:
        out = []
        i, n = 0, len(text)
        while i < n:
            for length in range(min(self.max_len, n - i), 0, -1):
                tok = self.ids.get(text[i : i + length])
                if tok is not None:
                    out.append(tok)
                    i += length
                    break
            else:
                raise InvalidToken(f"character {text[i]!r} is not covered by any piece")
        return out

    def detokenize(self, tokens: Sequence[int]) -> str:
        return "".join(self.piece(t) for t in tokens)

    def training_segmentation(self, text: str) -> list[int]:
        out = []
        for i, w in enumerate(normalize_corpus(text)):
            if self.split_period and len(w) >= self.min_split_len and i % self.split_period == self.split_period - 1:
                head, tail = _halves(w)
                out.extend((self.ids[" " + head], self.ids[tail]))
            else:
                out.extend(self.tokenize(" " + w))
        return out


def _halves(word: str) -> tuple[str, str]:
    h = len(word) // 2
    return word[:h], word[h:]
