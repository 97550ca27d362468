from __future__ import annotations

import json
import math

import numpy as np
import pytest

from odstega.errors import DesyncError, MetadataMismatch, TargetUnreachable, UnembeddableMessage
from odstega.lm import UniformSource
from odstega.pipeline import (
    SessionMeta,
    StegoCodec,
    bits_from_bytes,
    bytes_from_bits,
    choose_prefix_length,
    check_meta,
    measure_mismatch_rate,
)
from odstega.solver import EmbedPolicy
from odstega.tokenizers import WhitespaceTokenizer


def _bits(rng, n):
    return "".join(rng.choice(["0", "1"], size=n))


class TestRoundTrip:
    def test_ws_round_trip(self, ws_codec):
        rng = np.random.default_rng(1)
        for _ in range(20):
            secret = _bits(rng, int(rng.integers(1, 200)))
            res = ws_codec.encode("the old", secret)
            assert res.attempts == 1
            assert ws_codec.decode("the old", res.text, res.meta.payload_len, res.meta) == secret

    def test_hand_traced_uniform(self):
        tk = WhitespaceTokenizer(["w0", "w1", "w2", "w3"])
        codec = StegoCodec(UniformSource(4), tk, EmbedPolicy(prefix_bits=0))
        res = codec.encode("w0", "10111")
        assert res.tokens == (2, 3, 3)
        assert res.text == "w2 w3 w3"

    def test_short_payload_len_takes_prefix(self, ws_codec):
        res = ws_codec.encode("the old", "110010111")
        assert ws_codec.decode("the old", res.text, 4) == "1100"

    def test_tampered_text(self, ws_model):
        source, tk = ws_model
        codec = StegoCodec(source, tk, EmbedPolicy(C=0.02, epsilon=0.02, prefix_bits=0))
        rng = np.random.default_rng(4)
        secret = _bits(rng, 96)
        res = codec.encode("the old", secret)
        toks = list(res.tokens)
        toks[len(toks) // 2] = (toks[len(toks) // 2] + 1) % tk.vocab_size
        try:
            out = codec.decode("the old", tk.detokenize(toks), len(secret))
        except DesyncError:
            return
        assert out != secret

    def test_empty_secret(self, ws_codec):
        with pytest.raises(ValueError):
            ws_codec.encode("the old", "")

    def test_bytes_helpers(self):
        assert bits_from_bytes(b"\x80\x01") == "1000000000000001"
        assert bytes_from_bits("1000000000000001") == b"\x80\x01"
        with pytest.raises(ValueError):
            bytes_from_bits("101")


class TestRetry:
    def test_first_prefix_fails_then_recovers(self, subword_model):
        source, tk = subword_model
        codec = StegoCodec(source, tk, EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=3))
        rng = np.random.default_rng(0)
        for _ in range(2000):
            secret = _bits(rng, 24)
            res = codec.encode(" the old", secret)
            if res.attempts >= 2:
                break
        else:
            pytest.fail("no session needed a retry")
        assert res.failed_prefixes[0] == "000"
        assert res.prefix_used == format(res.attempts - 1, "03b")
        assert codec.decode(" the old", res.text, res.meta.payload_len, res.meta) == secret

    def test_zero_prefix_raises_when_mismatch(self, subword_model):
        source, tk = subword_model
        codec = StegoCodec(source, tk, EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=0))
        rng = np.random.default_rng(0)
        raised = False
        for _ in range(2000):
            try:
                codec.encode(" the old", _bits(rng, 24))
            except UnembeddableMessage:
                raised = True
                break
        assert raised

    def test_prefixes_realign_on_evenly_divisible_slots(self):
        # 12 equal slots: a 2-bit prefix moves the steering point by whole slots,
        # so every candidate differs only in its first token
        tk = WhitespaceTokenizer([f"w{i:02d}" for i in range(12)])
        codec = StegoCodec(UniformSource(12), tk, EmbedPolicy(prefix_bits=0))
        secret = "0110100111010001011101"
        runs = [codec.embed([0], b + secret).tokens for b in ("00", "01", "10", "11")]
        assert [r[0] for r in runs] == [1, 4, 7, 10]
        assert all(r[1:] == runs[0][1:] for r in runs)

    def test_mismatch_rate_positive(self, subword_model):
        source, tk = subword_model
        codec = StegoCodec(source, tk, EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=0))
        rate = measure_mismatch_rate(codec, [" the old", " a stranger"], 400, 24, seed=3)
        assert rate.failures > 0
        assert rate.per_bit_rate == pytest.approx(rate.session_rate / 24)


class TestAccounting:
    def test_split_per_token(self, ws_model):
        source, tk = ws_model
        codec = StegoCodec(source, tk, EmbedPolicy(C=0.1, alpha=0.5, epsilon=0.03, prefix_bits=0))
        res = codec.encode("the old", "0110" * 40)
        tol = codec.policy.bisect_tol
        for m in res.metrics:
            assert m.total_kl == pytest.approx(m.cutoff_cost + m.optimization_kl, abs=1e-9)
            if m.entropy_full < 0.5:
                assert m.delta_i == 0.0
            if not m.clamped and m.delta_i > 0:
                assert m.total_kl <= m.delta_i + tol
        assert sum(m.bits_resolved for m in res.metrics) == res.meta.payload_len

    def test_plain_sampling_has_zero_kl(self, ws_model):
        source, tk = ws_model
        codec = StegoCodec(source, tk, EmbedPolicy(prefix_bits=0))
        res = codec.encode("the old", "1" * 64)
        assert all(m.total_kl == 0.0 for m in res.metrics)
        assert all(m.quant_deviation < 2.0 ** (1 - 30) * m.support for m in res.metrics)

    def test_entropy_grows_with_C(self, ws_model):
        source, tk = ws_model
        ctxs = [tk.tokenize(p) for p in ("the old", "a stranger", "the baker sings", "the river")]
        means = []
        for C in (0.0, 0.02, 0.05, 0.1, 0.19):
            codec = StegoCodec(source, tk, EmbedPolicy(C=C, epsilon=0.01))
            means.append(np.mean([codec.prepare(c).embed_entropy for c in ctxs]))
        assert all(b >= a - 1e-12 for a, b in zip(means, means[1:]))

    def test_metrics_json(self, ws_codec):
        res = ws_codec.encode("the old", "1010")
        raw = json.loads(res.metrics_json())
        assert raw["session"]["payload_len"] == 4
        assert set(raw["tokens"][0]) >= {"entropy_full", "delta_i", "cutoff_cost", "optimization_kl",
                                          "total_kl", "bits_resolved"}


class TestMeta:
    def test_json_round_trip(self, ws_codec):
        meta = ws_codec.meta(40)
        assert SessionMeta.from_json(meta.to_json()) == meta

    @pytest.mark.parametrize("field,value", [("model_id", "x"), ("tokenizer_id", "y"), ("prefix_len", 9)])
    def test_identity_mismatch(self, ws_codec, field, value):
        meta = ws_codec.meta(40)
        bad = SessionMeta(**{**meta.__dict__, field: value})
        with pytest.raises(MetadataMismatch):
            check_meta(bad, meta)

    def test_policy_mismatch_refuses_decode(self, ws_model, ws_codec):
        source, tk = ws_model
        res = ws_codec.encode("the old", "1100")
        other = StegoCodec(source, tk, EmbedPolicy(C=0.06, alpha=0.5, epsilon=0.01, prefix_bits=0))
        with pytest.raises(MetadataMismatch):
            other.decode("the old", res.text, 4, res.meta)


class TestPrefixLength:
    def test_reference_point(self):
        assert choose_prefix_length(1000, 2e-4) == 4

    def test_agrees_with_closed_form(self):
        for S in (100, 300, 1000, 3000):
            closed = 3 - math.log2(-math.log10(2e-4) - math.log10(S))
            assert choose_prefix_length(S, 2e-4) == max(1, math.floor(closed) + 1)

    def test_default_rate(self):
        assert choose_prefix_length(1000) == 4

    def test_floor_of_one(self):
        assert choose_prefix_length(10, 1e-12) == 1

    def test_unreachable(self):
        with pytest.raises(TargetUnreachable):
            choose_prefix_length(10_000, 2e-4)
        with pytest.raises(ValueError):
            choose_prefix_length(10, 0.0)

    def test_minimal(self):
        for S, r in ((24, 1e-3), (500, 5e-5), (64, 1e-2)):
            b = choose_prefix_length(S, r)
            assert (r * (b + S)) ** (2**b) <= 1e-8
            if b > 1:
                assert (r * (b - 1 + S)) ** (2 ** (b - 1)) > 1e-8

