from __future__ import annotations

import numpy as np
import pytest

from odstega.lm import TableMarkov, load_corpus
from odstega.pipeline import StegoCodec
from odstega.prob import distribution_from_vector
from odstega.solver import EmbedPolicy
from odstega.tokenizers import SubwordTokenizer, WhitespaceTokenizer, normalize_corpus


def random_distribution(rng: np.random.Generator, n: int, concentration: float | None = None):
    """Dirichlet draw with the zeros stripped; concentration is sampled on a log scale when omitted."""
    a = concentration if concentration is not None else float(10 ** rng.uniform(-1.5, 1))
    p = rng.dirichlet(np.full(n, a))
    p = np.maximum(p, 1e-12)
    return distribution_from_vector(p / p.sum())


@pytest.fixture(scope="session")
def grammar_text() -> str:
    return load_corpus("grammar")


@pytest.fixture(scope="session")
def grammar_words(grammar_text) -> list[str]:
    return normalize_corpus(grammar_text)


@pytest.fixture(scope="session")
def ws_model(grammar_text):
    tk = WhitespaceTokenizer.from_corpus(grammar_text)
    return TableMarkov.from_corpus(grammar_text, tk, order=2), tk


@pytest.fixture(scope="session")
def subword_model(grammar_text):
    tk = SubwordTokenizer.from_corpus(grammar_text)
    return TableMarkov.from_corpus(grammar_text, tk, order=1), tk


@pytest.fixture
def ws_codec(ws_model):
    source, tk = ws_model
    return StegoCodec(source, tk, EmbedPolicy(C=0.05, alpha=0.5, epsilon=0.01, prefix_bits=0))
