from __future__ import annotations

import socket
import threading

import numpy as np
import pytest

from odstega import lm
from odstega.errors import InvalidToken, SourceUnavailable
from odstega.lm import (
    HTTPModelServer,
    RemoteSource,
    StreamServer,
    TableMarkov,
    UniformSource,
    load_corpus,
    next_distribution,
)
from odstega.pipeline import StegoCodec
from odstega.solver import EmbedPolicy
from odstega.tokenizers import SubwordTokenizer, WhitespaceTokenizer

TINY = "a b a c"


@pytest.fixture
def tiny():
    tk = WhitespaceTokenizer.from_corpus(TINY)
    return tk, TableMarkov.from_corpus(TINY, tk, order=1, beta=0.0)


class TestTokenizers:
    def test_whitespace_bijective(self, grammar_text):
        tk = WhitespaceTokenizer.from_corpus(grammar_text)
        text = "the old man walks to the harbor ."
        assert tk.detokenize(tk.tokenize(text)) == text
        toks = tk.tokenize(text)
        assert tk.tokenize(tk.detokenize(toks)) == toks

    def test_whitespace_unknown_word(self):
        with pytest.raises(InvalidToken):
            WhitespaceTokenizer.from_corpus(TINY).tokenize("a z")

    def test_subword_prefers_whole_words(self):
        tk = SubwordTokenizer.from_corpus("mountain river mountain")
        whole = tk.tokenize(" mountain")
        assert len(whole) == 1
        split = [tk.ids[" moun"], tk.ids["tain"]]
        assert tk.detokenize(split) == " mountain"
        assert tk.tokenize(tk.detokenize(split)) == whole

    def test_subword_training_split_period(self):
        tk = SubwordTokenizer.from_corpus("lake lake lake lake", split_period=2)
        seg = tk.training_segmentation("lake lake lake lake")
        assert [tk.pieces[t] for t in seg] == [" lake", " la", "ke", " lake", " la", "ke"]

    def test_tokenizer_ids_differ(self):
        assert WhitespaceTokenizer(["a", "b"]).tokenizer_id != WhitespaceTokenizer(["a", "c"]).tokenizer_id


class TestTableMarkov:
    def test_counts_hand_computed(self, tiny):
        tk, m = tiny
        a, b, c = tk.tokenize("a b c")
        d = next_distribution(m, [a])
        assert dict(d.as_pairs()) == {b: 0.5, c: 0.5}
        # "c" only occurs last; the cyclic read gives it the successor "a"
        assert dict(next_distribution(m, [c]).as_pairs()) == {a: 1.0}

    def test_smoothing_only_observed_successors(self):
        tk = WhitespaceTokenizer.from_corpus(TINY)
        m = TableMarkov.from_corpus(TINY, tk, order=1, beta=1.0)
        a, b, c = tk.tokenize("a b c")
        assert dict(m.next_distribution([a]).as_pairs()) == {b: 0.5, c: 0.5}
        assert m.next_distribution([b]).support_size == 1

    def test_backoff(self):
        tk = WhitespaceTokenizer.from_corpus(TINY)
        m = TableMarkov.from_corpus(TINY, tk, order=2, beta=0.0)
        a, b, c = tk.tokenize("a b c")
        assert m.context_key([b, c]) == (c,)
        assert m.context_key([b, a]) == (b, a)

    def test_empty_context_rejected(self, tiny):
        with pytest.raises(ValueError):
            next_distribution(tiny[1], [])

    def test_deterministic_and_pinned(self, grammar_text):
        tk = WhitespaceTokenizer.from_corpus(grammar_text)
        m1 = TableMarkov.from_corpus(grammar_text, tk, 2)
        m2 = TableMarkov.from_corpus(grammar_text, tk, 2)
        assert m1.table_digest() == m2.table_digest()
        assert m1.table_digest() == "fb1982f2cb51d01fb3e19ea1e2d1c9bcc45574802ac32aeb5f3b2648e79fd4b4"
        assert m1.model_id == "markov:fb1982f2cb51d01f:2"

    def test_dense_sums_to_one(self, ws_model):
        m, tk = ws_model
        v = m.dense(tk.tokenize("the old"))
        assert v.shape == (tk.vocab_size,)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)

    def test_bundled_corpora(self):
        assert len(load_corpus("grammar").split()) > 30000
        assert len(load_corpus("harbor").split()) > 500

    def test_uniform_source(self):
        d = UniformSource(5).next_distribution([0])
        assert d.support_size == 5 and d.probs[0] == 0.2


def _serve(server):
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return server


@pytest.fixture(params=["tcp", "http"])
def remote(request, ws_model):
    m, tk = ws_model
    server = _serve(StreamServer(m) if request.param == "tcp" else HTTPModelServer(m))
    try:
        yield m, tk, RemoteSource(server.endpoint, timeout=5)
    finally:
        server.shutdown()
        server.server_close()


class TestRemote:
    def test_identity_handshake(self, remote):
        m, tk, src = remote
        assert (src.model_id, src.version, src.vocab_size) == (m.model_id, m.version, m.vocab_size)

    def test_same_distributions(self, remote):
        m, tk, src = remote
        ctx = tk.tokenize("the old man")
        local, far = m.next_distribution(ctx), src.next_distribution(ctx)
        assert far.indices.tolist() == local.indices.tolist()
        np.testing.assert_allclose(far.probs, local.probs, rtol=0, atol=1e-15)

    def test_round_trip_through_remote(self, remote):
        m, tk, src = remote
        pol = EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=1)
        res = StegoCodec(src, tk, pol).encode("the old", "1011001110001111")
        assert StegoCodec(m, tk, pol).decode("the old", res.text, res.meta.payload_len, res.meta) == "1011001110001111"

    def test_unreachable(self):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        with pytest.raises(SourceUnavailable):
            RemoteSource(f"tcp://127.0.0.1:{port}", timeout=1)
        with pytest.raises(SourceUnavailable):
            RemoteSource(f"http://127.0.0.1:{port}/", timeout=1)

    def test_logprob_responses(self, ws_model, monkeypatch):
        m, tk = ws_model
        plain = lm._answer

        def answer(source, req):
            resp = plain(source, req)
            with np.errstate(divide="ignore"):
                resp["logprobs"] = np.log(np.asarray(resp.pop("probs"))).tolist()
            return resp

        monkeypatch.setattr(lm, "_answer", answer)
        server = _serve(StreamServer(m))
        try:
            src = RemoteSource(server.endpoint, timeout=5)
            ctx = tk.tokenize("the old")
            np.testing.assert_allclose(src.next_distribution(ctx).probs, m.next_distribution(ctx).probs, atol=1e-12)
        finally:
            server.shutdown()
            server.server_close()

    def test_bad_scheme(self):
        with pytest.raises(SourceUnavailable):
            RemoteSource("ftp://example.invalid")
