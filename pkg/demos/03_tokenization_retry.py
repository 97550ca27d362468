"""
When retokenization breaks decoding
===================================

The subword tokenizer knows both " returns" and the pair " ret" + "urns".
A model trained on text that sometimes uses the split form can emit it, but
the receiver tokenizes the text greedily and sees " returns". A short
sacrificial prefix in front of the secret gives the sender several different
texts to try.
"""

import numpy as np

from odstega.lm import TableMarkov, load_corpus
from odstega.pipeline import StegoCodec, choose_prefix_length, measure_mismatch_rate
from odstega.solver import EmbedPolicy
from odstega.tokenizers import SubwordTokenizer, normalize_corpus

text = load_corpus("grammar")
tk = SubwordTokenizer.from_corpus(text)
model = TableMarkov.from_corpus(text, tk, order=1)

split = [tk.ids[" ret"], tk.ids["urns"]]
print(repr(tk.detokenize(split)), "->", [tk.pieces[t] for t in tk.tokenize(tk.detokenize(split))])

# Single attempts without a prefix: how often does the receiver's view differ?
words = normalize_corpus(text)
prompts = [" " + " ".join(words[i : i + 3]) for i in range(0, len(words) - 3, 70)]
bare = StegoCodec(model, tk, EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=0))
rate = measure_mismatch_rate(bare, prompts, 3000, 24, seed=1)
print(f"{rate.failures}/{rate.sessions} sessions fail without retry, per-bit rate {rate.per_bit_rate:.2e}")

# Size the prefix for a 24-bit secret so that all candidates fail with probability <= 1e-8.
B = choose_prefix_length(24, rate.per_bit_rate)
print("prefix bits:", B)

codec = StegoCodec(model, tk, EmbedPolicy(C=0.05, epsilon=0.01, prefix_bits=B))
rng = np.random.default_rng(0)
for _ in range(3000):
    secret = "".join(rng.choice(["0", "1"], size=24))
    res = codec.encode(" the old", secret)
    if res.attempts > 1:
        break
print(f"secret {secret}: prefixes {list(res.failed_prefixes)} failed, {res.prefix_used} worked")
print("stego text:", repr(res.text))
print("decoded:", codec.decode(" the old", res.text, res.meta.payload_len, res.meta))
