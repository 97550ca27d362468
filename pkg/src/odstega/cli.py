"""Command-line front end: encode, decode, sweep, analyze, calibrate.

Exit codes: 0 success, 2 usage, 3 metadata mismatch, 4 desync, 5 no retry
prefix verified, 6 probability source unavailable, 7 other pipeline error,
8 file error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .bench import SweepSpec, dominance_violations, kl_monotone_in_C, rows_to_csv, run_sweep
from .errors import (
    DesyncError,
    InvalidPolicy,
    MetadataMismatch,
    SourceUnavailable,
    StegoError,
    UnembeddableMessage,
)
from .lm import RemoteSource, TableMarkov, load_corpus
from .pipeline import (
    PerTokenMetrics,
    SessionMeta,
    StegoCodec,
    bits_from_bytes,
    bytes_from_bits,
    choose_prefix_length,
    measure_mismatch_rate,
)
from .solver import EmbedPolicy
from .tokenizers import SubwordTokenizer, WhitespaceTokenizer, normalize_corpus

log = logging.getLogger("odstega")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_META = 3
EXIT_DESYNC = 4
EXIT_UNEMBEDDABLE = 5
EXIT_SOURCE = 6
EXIT_PIPELINE = 7
EXIT_FILE = 8


class UsageError(Exception):
    pass


def build_tokenizer(kind: str, corpus_text: str):
    if kind == "ws":
        return WhitespaceTokenizer.from_corpus(corpus_text)
    if kind == "subword":
        return SubwordTokenizer.from_corpus(corpus_text)
    raise UsageError(f"unknown tokenizer {kind!r} (expected ws or subword)")


def build_model(model: str, tokenizer: str, tokenizer_corpus: str | None = None):
    """Resolve ``markov:<corpus>:<order>`` or ``remote:<endpoint>`` to (source, tokenizer)."""
    kind, _, rest = model.partition(":")
    if kind == "markov":
        corpus, sep, order = rest.rpartition(":")
        if not sep or not corpus:
            corpus, order = rest or "grammar", "2"
        try:
            n = int(order)
        except ValueError:
            raise UsageError(f"markov order must be an integer, got {order!r}") from None
        text = load_corpus(corpus)
        tk = build_tokenizer(tokenizer, load_corpus(tokenizer_corpus) if tokenizer_corpus else text)
        if tokenizer_corpus:
            # the model must be trained on the same segmentation the tokenizer produces
            return TableMarkov.fit([tk.training_segmentation(text)], n, tk.vocab_size), tk
        return TableMarkov.from_corpus(text, tk, n), tk
    if kind == "remote":
        if not rest:
            raise UsageError("remote model needs an endpoint, e.g. remote:tcp://127.0.0.1:9000")
        tk = build_tokenizer(tokenizer, load_corpus(tokenizer_corpus or "grammar"))
        return RemoteSource(rest), tk
    raise UsageError(f"unknown model {model!r} (expected markov:<corpus>:<order> or remote:<endpoint>)")


def _policy(args, meta: SessionMeta | None = None) -> EmbedPolicy:
    base = meta.policy if meta is not None else {}

    def pick(flag, key, default):
        val = getattr(args, flag)
        if val is not None:
            return val
        return base.get(key, default)

    prefix = args.prefix_bits if args.prefix_bits is not None else (meta.prefix_len if meta else 4)
    return EmbedPolicy(
        C=float(pick("C", "C", 0.0)),
        alpha=float(pick("alpha", "alpha", 0.0)),
        epsilon=float(pick("epsilon", "epsilon", 0.0)),
        k=int(pick("precision_k", "k", 30)),
        prefix_bits=int(prefix),
    )


def _prompt(args) -> str:
    if args.prompt is not None and args.prompt_file is not None:
        raise UsageError("give either --prompt or --prompt-file, not both")
    if args.prompt_file is not None:
        return Path(args.prompt_file).read_text(encoding="utf-8").rstrip("\n")
    if args.prompt is None:
        raise UsageError("a prompt is required (--prompt or --prompt-file)")
    return args.prompt


def cmd_encode(args) -> int:
    if args.secret_file is None or args.out is None:
        raise UsageError("encode needs --secret-file and --out")
    prompt = _prompt(args)
    policy = _policy(args)
    secret = Path(args.secret_file).read_bytes()
    if not secret:
        raise UsageError("secret file is empty")
    source, tk = build_model(args.model, args.tokenizer, args.tokenizer_corpus)
    res = StegoCodec(source, tk, policy).encode(prompt, bits_from_bytes(secret))
    out = Path(args.out)
    out.write_text(res.text, encoding="utf-8")
    meta_path = Path(args.meta) if args.meta else out.with_name(out.name + ".meta.json")
    metrics_path = Path(args.metrics) if args.metrics else out.with_name(out.name + ".metrics.json")
    meta_path.write_text(res.meta.to_json() + "\n", encoding="utf-8")
    metrics_path.write_text(res.metrics_json() + "\n", encoding="utf-8")
    print(f"embedded {len(secret) * 8} bits in {len(res.tokens)} tokens "
          f"(prefix {res.prefix_used or '-'}, {res.attempts} attempt(s)); payload_len={res.meta.payload_len}")
    return EXIT_OK


def cmd_decode(args) -> int:
    if args.stego_file is None or args.out is None:
        raise UsageError("decode needs --stego-file and --out")
    prompt = _prompt(args)
    stego_path = Path(args.stego_file)
    meta_path = Path(args.meta) if args.meta else stego_path.with_name(stego_path.name + ".meta.json")
    meta = SessionMeta.from_json(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else None
    policy = _policy(args, meta)
    payload_len = args.payload_len if args.payload_len is not None else (meta.payload_len if meta else None)
    if payload_len is None:
        raise UsageError("payload length unknown: pass --payload-len or a metadata sidecar")
    source, tk = build_model(args.model, args.tokenizer, args.tokenizer_corpus)
    codec = StegoCodec(source, tk, policy)
    bits = codec.decode(prompt, stego_path.read_text(encoding="utf-8"), payload_len, meta)
    out = Path(args.out)
    if len(bits) % 8 == 0:
        out.write_bytes(bytes_from_bits(bits))
    else:
        out.write_text(bits + "\n", encoding="ascii")
    print(f"recovered {len(bits)} bits")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = SweepSpec.from_file(args.sweep_spec) if args.sweep_spec else SweepSpec()
    if args.seed is not None:
        spec = SweepSpec.from_dict({**{f.name: getattr(spec, f.name) for f in fields(spec)}, "seed": args.seed})
    rows = run_sweep(spec)
    csv_text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    for a, b in kl_monotone_in_C(rows):
        log.warning("mean KL drops from C=%g to C=%g at alpha=%g eps=%g", a.C, b.C, a.alpha, a.epsilon)
    for o, b in dominance_violations(rows):
        log.warning("OD row C=%g eps=%g embeds fewer bits/token than baseline eps=%g at matched KL",
                    o.C, o.epsilon, b.epsilon)
    return EXIT_OK


def analyze_report(raw: dict) -> str:
    """Per-token table plus totals; flags rows where total != cutoff + optimization."""
    names = [f.name for f in fields(PerTokenMetrics)]
    try:
        rows = [PerTokenMetrics(**{k: r[k] for k in names if k in r}) for r in raw["tokens"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed metrics file: {exc}") from None
    lines = [f"{'tok':>5} {'H_full':>9} {'delta_i':>9} {'cutoff':>10} {'opt_kl':>10} {'total_kl':>10} {'cum_bits':>8}  split"]
    cum = 0
    bad = 0
    for i, m in enumerate(rows):
        cum += m.bits_resolved
        ok = abs(m.total_kl - (m.cutoff_cost + m.optimization_kl)) <= 1e-9
        bad += not ok
        lines.append(f"{i:>5} {m.entropy_full:9.4f} {m.delta_i:9.5f} {m.cutoff_cost:10.6f} "
                     f"{m.optimization_kl:10.6f} {m.total_kl:10.6f} {cum:>8}  {'ok' if ok else 'MISMATCH'}")
    tot = sum(m.total_kl for m in rows)
    lines.append(
        f"total: {len(rows)} tokens, {cum} bits, cutoff {sum(m.cutoff_cost for m in rows):.6f}, "
        f"opt {sum(m.optimization_kl for m in rows):.6f}, kl {tot:.6f} bits "
        f"(mean {tot / max(len(rows), 1):.6f}/token); split check: {len(rows) - bad}/{len(rows)} rows ok"
    )
    session = raw.get("session") or {}
    if "payload_len" in session and cum != session["payload_len"]:
        lines.append(f"note: cumulative bits {cum} != payload_len {session['payload_len']}")
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    if args.metrics is None:
        raise UsageError("analyze needs --metrics")
    raw = json.loads(Path(args.metrics).read_text(encoding="utf-8"))
    print(analyze_report(raw))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    source, tk = build_model(args.model, args.tokenizer, args.tokenizer_corpus)
    policy = _policy(args)
    text = load_corpus(args.tokenizer_corpus) if args.tokenizer_corpus else None
    if text is None:
        corpus = args.model.partition(":")[2].rpartition(":")[0] or "grammar"
        text = load_corpus(corpus if args.model.startswith("markov") else "grammar")
    words = normalize_corpus(text)
    lead = " " if isinstance(tk, SubwordTokenizer) else ""
    prompts = [lead + " ".join(words[i : i + 3]) for i in range(0, len(words) - 3, max(1, len(words) // 500))]
    codec = StegoCodec(source, tk, policy)
    payload = args.payload_len or 32
    rate = measure_mismatch_rate(codec, prompts, args.sessions, payload, seed=args.seed or 0)
    print(f"sessions={rate.sessions} failures={rate.failures} session_rate={rate.session_rate:.6g} "
          f"per_bit_rate={rate.per_bit_rate:.6g}")
    if rate.failures:
        print(f"recommended prefix bits for a {payload}-bit secret: "
              f"{choose_prefix_length(payload, rate.per_bit_rate)}")
    else:
        print("no mismatches observed; prefix bits 1 suffice at this sample size")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="markov:grammar:2", help="markov:<corpus>:<order> or remote:<endpoint>")
    p.add_argument("--tokenizer", default="ws", choices=["ws", "subword"])
    p.add_argument("--tokenizer-corpus", default=None, help="corpus the tokenizer vocabulary is built from")
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--precision-k", type=int, default=None)
    p.add_argument("--prefix-bits", type=int, default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--prompt-file", default=None)
    p.add_argument("--payload-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--meta", default=None, help="metadata sidecar path")
    p.add_argument("--metrics", default=None, help="metrics JSON path")
    p.add_argument("--out", default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odstega", description="Entropy-optimized LLM text steganography")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="hide a secret file in generated text")
    _add_common(enc)
    enc.add_argument("--secret-file", default=None)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="recover the secret from stego text")
    _add_common(dec)
    dec.add_argument("--stego-file", default=None)
    dec.set_defaults(func=cmd_decode)

    sw = sub.add_parser("sweep", help="bits-per-token versus KL sweep, CSV output")
    sw.add_argument("--sweep-spec", default=None)
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--out", default=None)
    sw.set_defaults(func=cmd_sweep)

    an = sub.add_parser("analyze", help="per-token report from an encode metrics file")
    an.add_argument("--metrics", default=None)
    an.set_defaults(func=cmd_analyze)

    cal = sub.add_parser("calibrate", help="measure the tokenizer mismatch rate")
    _add_common(cal)
    cal.add_argument("--sessions", type=int, default=1000)
    cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidPolicy) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MetadataMismatch as exc:
        print(f"refusing to decode: {exc}", file=sys.stderr)
        return EXIT_META
    except DesyncError as exc:
        print(f"desync: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except UnembeddableMessage as exc:
        print(f"unembeddable: {exc}", file=sys.stderr)
        return EXIT_UNEMBEDDABLE
    except SourceUnavailable as exc:
        print(f"source unavailable: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except StegoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
