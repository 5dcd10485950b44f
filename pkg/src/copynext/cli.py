"""Command-line entry point: ``copynext <command> ...``.

Commands: prep, linearize, train, predict, eval, bench, selfcheck.  Every
command returns exit status 0 on success, 1 when a check fails and 2 on a
usage or input error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (AnnotatedSentence, CorpusError, LabeledSpan, LabelSet, Sentence, dump_corpus,
                     load_corpus, load_embeddings, load_static_embeddings, pool_subwords,
                     subword_align, whitespace_tokenizer)
from .evaluation import AlignmentError, bench_decode, classify_errors, gen_synthetic, score
from .inference import DecodeConfig, SchemeMismatch, predict_corpus
from .linearize import Scheme, StructureError, delinearize, format_sequence, linearize
from .training import TrainConfig, TrainingDiverged, train

log = logging.getLogger("copynext")

SCHEMES = [s.value for s in Scheme]


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _write_lines(path: str | None, lines):
    if path is None or path == "-":
        for line in lines:
            print(line)
        return
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _corpus(path: str, embeddings: str | None = None) -> list[AnnotatedSentence]:
    corpus = load_corpus(path)
    if embeddings:
        corpus = load_embeddings(embeddings, corpus)
    return corpus


def _read_predictions(path: str) -> dict[str, list[LabeledSpan]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[obj["id"]] = [LabeledSpan(int(a), int(b), str(lab)) for a, b, lab in obj["spans"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: line {lineno}: bad prediction record ({exc})") from None
    return out


def _workers(args) -> int:
    w = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _decode_config(args, params) -> DecodeConfig:
    return DecodeConfig(beam=args.beam, max_len=args.max_len, scheme=args.scheme or params.scheme)


# ----------------------------------------------------------------- commands

def cmd_prep(args) -> int:
    if args.synthetic:
        corpus = gen_synthetic(n_sentences=args.synthetic, max_depth=args.depth,
                               min_len=args.min_len, max_len=args.max_length, seed=args.seed)
        dump_corpus(corpus, args.output)
        print(f"wrote {len(corpus)} synthetic sentences to {args.output}")
        return 0
    if args.input is None:
        raise UsageError("prep needs an input corpus or --synthetic N")
    corpus = load_corpus(args.input)
    if args.embeddings and args.static:
        raise UsageError("--embeddings and --static are exclusive")
    aligned = [subword_align(a, whitespace_tokenizer) for a in corpus]
    out = corpus
    if args.embeddings:
        # Vectors are given per subword piece; pool them back onto the tokens.
        pieces = load_embeddings(args.embeddings, [b for b, _ in aligned])
        out = [AnnotatedSentence(pool_subwords(p.sentence, smap, a.tokens), a.spans)
               for a, p, (_, smap) in zip(corpus, pieces, aligned)]
    elif args.static:
        words, mat = load_static_embeddings(args.static)
        index = {w: i for i, w in enumerate(words)}
        out = []
        for a, (b, smap) in zip(corpus, aligned):
            vecs = np.stack([mat[index[t]] if t in index else np.zeros(mat.shape[1]) for t in b.tokens])
            piece = Sentence(b.id, b.tokens, vecs)
            out.append(AnnotatedSentence(pool_subwords(piece, smap, a.tokens), a.spans))
    dump_corpus(out, args.output, with_vectors=bool(args.embeddings or args.static))
    print(f"wrote {len(out)} sentences to {args.output}")
    return 0


def cmd_linearize(args) -> int:
    scheme = Scheme.parse(args.scheme or "copynext")
    corpus = load_corpus(args.input)
    lines = []
    for i, a in enumerate(corpus):
        seq = linearize(a.spans, len(a), scheme, args.seed + i)
        if set(delinearize(seq, len(a), scheme)) != set(a.spans):
            print(f"error: round trip failed for {a.id!r}", file=sys.stderr)
            return 1
        text = format_sequence(seq)
        lines.append(f"{a.id}\t{text}" if args.ids else text)
    _write_lines(args.output, lines)
    return 0


_TRAIN_FLAGS = ("epochs", "batch_size", "lr", "clip", "patience", "dropout", "embed_dim",
                "eval_every", "time_budget", "target_f1", "layers", "hidden", "seed", "scheme")


def _coerce(field: dataclasses.Field, raw: str):
    text = raw.strip().strip('"').strip("'")
    if text.lower() in ("none", "null", ""):
        return None
    kind = str(field.type)
    if "int" in kind and "float" not in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    return text


def train_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if args.config:
        cp = configparser.ConfigParser()
        cp.read_string("[train]\n" + Path(args.config).read_text(encoding="utf-8"))
        fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
        for key, raw in cp["train"].items():
            key = key.replace("-", "_")
            if key not in fields:
                raise UsageError(f"{args.config}: unknown setting {key!r}")
            values[key] = _coerce(fields[key], raw)
    for name in _TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig(**values)


def cmd_train(args) -> int:
    if args.print_config:
        for k, v in TrainConfig().as_dict().items():
            print(f"{k} = {v}")
        return 0
    if not (args.train and args.dev and args.out):
        raise UsageError("train needs TRAIN and DEV corpora and --out CHECKPOINT")
    config = train_config(args)
    corpus = _corpus(args.train, args.embeddings)
    dev = _corpus(args.dev, args.embeddings)
    params, report = train(corpus, dev, config, checkpoint=args.out)
    if report.best_checkpoint is None:
        save_checkpoint(params, args.out)
    print(report.summary())
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,seconds,dev_precision,dev_recall,dev_f1\n")
            dev_rows = {e: (p, r, f) for e, p, r, f in report.dev}
            for i, (loss, secs) in enumerate(zip(report.epoch_loss, report.epoch_seconds), 1):
                p, r, f = dev_rows.get(i, ("", "", ""))
                fh.write(f"{i},{loss},{secs},{p},{r},{f}\n")
    return 0


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint, args.scheme)
    corpus = _corpus(args.input, args.embeddings)
    recs = predict_corpus([a.sentence for a in corpus], params, _decode_config(args, params),
                          workers=_workers(args))
    _write_lines(args.output, (json.dumps(r) for r in recs))
    return 0


def cmd_eval(args) -> int:
    gold = _corpus(args.gold, args.embeddings)
    if (args.predictions is None) == (args.checkpoint is None):
        raise UsageError("eval needs exactly one of PRED or --checkpoint")
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, args.scheme)
        recs = predict_corpus([a.sentence for a in gold], params, _decode_config(args, params),
                              workers=_workers(args))
        pred = {r["id"]: [LabeledSpan(*sp) for sp in r["spans"]] for r in recs}
    else:
        pred = _read_predictions(args.predictions)
    report = score(gold, pred)
    print(report.table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    if args.errors:
        _write_lines(args.errors, (json.dumps({
            "id": e.sentence_id, "type": e.type.value,
            "gold": [sp.as_list() for sp in e.gold],
            "predicted": [sp.as_list() for sp in e.predicted],
        }) for e in classify_errors(gold, pred)))
    return 0


def cmd_bench(args) -> int:
    if args.workers not in (None, 1):
        raise UsageError("bench times a single worker; drop --workers or pass 1")
    params = load_checkpoint(args.checkpoint, args.scheme)
    corpus = _corpus(args.input, args.embeddings)
    report = bench_decode([a.sentence for a in corpus], params, _decode_config(args, params),
                          warmup=args.warmup, repeats=args.repeats)
    print(report.summary())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_selfcheck(args) -> int:
    from .checks import automaton_discrepancies, finite_difference_check, random_params
    from .linearize import encode_sequence

    ok = True
    labels = LabelSet(["A", "B"])
    for scheme in Scheme:
        checked, bad = automaton_discrepancies(3, labels, args.max_string, scheme)
        status = "ok" if bad == 0 else "FAIL"
        ok &= bad == 0
        print(f"automaton[{scheme.value}]: {checked} strings, {bad} discrepancies  {status}")
    rng = np.random.default_rng(args.seed)
    spans = [LabeledSpan(0, 2, "A"), LabeledSpan(1, 4, "B"), LabeledSpan(2, 3, "A")]
    for scheme in Scheme:
        for layers in (1, 2):
            p = random_params(layers, 4, 3, labels, seed=args.seed + layers, scale=0.5, scheme=scheme)
            codes = encode_sequence(linearize(spans, 4, scheme, args.seed), 4, labels)
            worst = finite_difference_check(p, rng.normal(size=(4, 3)), codes)
            status = "ok" if worst < 1e-4 else "FAIL"
            ok &= worst < 1e-4
            print(f"gradient[{scheme.value}, J={layers}]: max relative error {worst:.2e}  {status}")
    print(f"backend: {kernels.backend()}")
    return 0 if ok else 1


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="copynext", description="Nested span extraction by copying.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scheme=True, decode=False, workers=False):
        p.add_argument("--seed", type=int, default=0)
        if scheme:
            p.add_argument("--scheme", choices=SCHEMES, default=None)
        if decode:
            p.add_argument("--beam", type=int, default=1)
            p.add_argument("--max-len", type=int, default=None, help="decision limit (default 8*N)")
            p.add_argument("--embeddings", default=None, help="per-sentence vectors (JSON lines)")
        if workers:
            p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("prep", help="align, attach vectors, or generate a synthetic corpus")
    p.add_argument("input", nargs="?")
    p.add_argument("output")
    p.add_argument("--embeddings", help="per-subword vectors keyed by sentence id (JSON lines)")
    p.add_argument("--static", help="word vector text file with a 'count dim' header")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic sentences")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--min-len", type=int, default=6)
    p.add_argument("--max-length", type=int, default=20)
    common(p, scheme=False)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("linearize", help="print decision sequences for a corpus")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--ids", action="store_true", help="prefix each line with the sentence id")
    common(p)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    p.add_argument("train", nargs="?")
    p.add_argument("dev", nargs="?")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--print-config", action="store_true", help="print default settings and exit")
    p.add_argument("--log", help="per-epoch CSV")
    p.add_argument("--embeddings", default=None, help="vectors covering train and dev ids")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--time-budget", type=float, help="seconds")
    p.add_argument("--target-f1", type=float)
    common(p)
    p.set_defaults(func=cmd_train, seed=None)

    p = sub.add_parser("predict", help="decode a corpus with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output", nargs="?", default=None)
    common(p, decode=True, workers=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("gold")
    p.add_argument("predictions", nargs="?")
    p.add_argument("--checkpoint", help="decode GOLD with this checkpoint instead of reading PRED")
    p.add_argument("--csv")
    p.add_argument("--errors", help="write classified errors (JSON lines)")
    common(p, decode=True, workers=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time single-worker decoding against sentence length")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--csv")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--repeats", type=int, default=1)
    common(p, decode=True, workers=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selfcheck", help="automaton brute force and gradient check")
    p.add_argument("--max-string", type=int, default=5, help="longest decision string enumerated")
    common(p, scheme=False)
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, CheckpointError, SchemeMismatch, AlignmentError, StructureError,
            TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
