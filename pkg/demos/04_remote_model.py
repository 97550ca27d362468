"""
Talking to a model server
=========================

Alice queries a model over the length-prefixed JSON stream protocol, Bob
runs the same model locally. The session sidecar carries the model identity,
so Bob refuses to decode with a different build.
"""

import threading

from odstega.errors import MetadataMismatch
from odstega.lm import RemoteSource, StreamServer, TableMarkov, load_corpus
from odstega.pipeline import StegoCodec, bits_from_bytes, bytes_from_bits
from odstega.solver import EmbedPolicy
from odstega.tokenizers import WhitespaceTokenizer

text = load_corpus("grammar")
tk = WhitespaceTokenizer.from_corpus(text)
model = TableMarkov.from_corpus(text, tk, order=2)

# Any process that answers {"context": [...], "top": "full"} with a full probability
# vector works here; the bundled reference server wraps the Markov model.
server = StreamServer(model)
threading.Thread(target=server.serve_forever, daemon=True).start()
remote = RemoteSource(server.endpoint)
print("connected to", server.endpoint, "model", remote.model_id)

policy = EmbedPolicy(C=0.05, alpha=0.5, epsilon=0.01, prefix_bits=1)
secret = b"meet at dawn"
res = StegoCodec(remote, tk, policy).encode("the old", bits_from_bytes(secret))
print(res.text)
print(res.meta.to_json())

bob = StegoCodec(model, tk, policy)
bits = bob.decode("the old", res.text, res.meta.payload_len, res.meta)
print("Bob reads:", bytes_from_bits(bits))

# A first-order model is a different build: the sidecar check stops the decode.
other = TableMarkov.from_corpus(text, tk, order=1)
try:
    StegoCodec(other, tk, policy).decode("the old", res.text, res.meta.payload_len, res.meta)
except MetadataMismatch as exc:
    print("refused:", exc)

remote.close()
server.shutdown()
