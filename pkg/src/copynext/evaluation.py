"""Span scoring, error taxonomy, synthetic corpora and decode timing."""

from __future__ import annotations

import csv
import enum
import gc
import io
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import AnnotatedSentence, LabeledSpan, Sentence


class AlignmentError(ValueError):
    pass


def _prf(matched: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = matched / n_pred if n_pred else 1.0
    r = matched / n_gold if n_gold else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    matched: int
    n_gold: int
    n_pred: int
    per_label: dict[str, tuple[float, float, float, int, int, int]] = field(default_factory=dict)
    errors: dict[str, int] = field(default_factory=dict)

    def table(self) -> str:
        lines = [f"{'label':<16}{'P':>8}{'R':>8}{'F1':>8}{'gold':>7}{'pred':>7}"]
        for lab, (p, r, f, _, g, pr) in sorted(self.per_label.items()):
            lines.append(f"{lab:<16}{p:8.4f}{r:8.4f}{f:8.4f}{g:7d}{pr:7d}")
        lines.append(f"{'micro':<16}{self.precision:8.4f}{self.recall:8.4f}{self.f1:8.4f}"
                     f"{self.n_gold:7d}{self.n_pred:7d}")
        if self.errors:
            lines.append("errors: " + ", ".join(f"{k}={v}" for k, v in sorted(self.errors.items())))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["label", "precision", "recall", "f1", "matched", "gold", "pred"])
        for lab, row in sorted(self.per_label.items()):
            w.writerow([lab, *row])
        w.writerow(["<micro>", self.precision, self.recall, self.f1,
                    self.matched, self.n_gold, self.n_pred])
        for k, v in sorted(self.errors.items()):
            w.writerow([f"<error:{k}>", "", "", "", v, "", ""])
        return buf.getvalue()


def _align(gold: Sequence[AnnotatedSentence], pred: Mapping[str, Iterable[LabeledSpan]]):
    gold_ids = [g.id for g in gold]
    if len(set(gold_ids)) != len(gold_ids):
        raise AlignmentError("duplicate sentence ids in gold")
    missing = sorted(set(gold_ids) - set(pred))
    extra = sorted(set(pred) - set(gold_ids))
    if missing or extra:
        raise AlignmentError(f"ids differ: missing predictions {missing[:5]}, unknown {extra[:5]}")
    return [(g.id, set(g.spans), set(pred[g.id])) for g in gold]


def score(gold: Sequence[AnnotatedSentence], pred: Mapping[str, Iterable[LabeledSpan]]) -> EvalReport:
    """Micro-averaged exact-match P/R/F1 over (start, end, label) triples."""
    rows = _align(gold, pred)
    matched = n_gold = n_pred = 0
    by_label: dict[str, Counter] = {}
    for _, g, p in rows:
        hit = g & p
        matched += len(hit)
        n_gold += len(g)
        n_pred += len(p)
        for name, group in (("m", hit), ("g", g), ("p", p)):
            for sp in group:
                by_label.setdefault(sp.label, Counter())[name] += 1
    per_label = {lab: (*_prf(c["m"], c["p"], c["g"]), c["m"], c["g"], c["p"])
                 for lab, c in by_label.items()}
    errs = Counter(e.type.value for e in classify_errors(gold, pred))
    return EvalReport(*_prf(matched, n_pred, n_gold), matched, n_gold, n_pred, per_label, dict(errs))


class ErrorType(enum.Enum):
    MISLABELED = "MislabeledSpan"
    BOUNDARY = "BoundaryError"
    SPAN_AND_LABEL = "SpanAndLabelError"
    MISSING = "MissingSpan"
    SPURIOUS = "SpuriousSpan"


@dataclass
class ErrorRecord:
    sentence_id: str
    type: ErrorType
    gold: list[LabeledSpan]
    predicted: list[LabeledSpan]


def _overlaps(a: LabeledSpan, b: LabeledSpan) -> bool:
    return a.start < b.end and b.start < a.end


def classify_errors(gold: Sequence[AnnotatedSentence],
                    pred: Mapping[str, Iterable[LabeledSpan]]) -> list[ErrorRecord]:
    """One record per unmatched gold span, plus one per unexplained prediction.

    Precedence: same boundaries > same label and overlapping > overlapping
    > missing.  A prediction may explain several gold errors; predictions
    explaining none are spurious.
    """
    out = []
    for sid, g, p in _align(gold, pred):
        miss_g = sorted(g - p)
        miss_p = sorted(p - g)
        used: set[LabeledSpan] = set()
        for gs in miss_g:
            same = [ps for ps in miss_p if (ps.start, ps.end) == (gs.start, gs.end)]
            lab = [ps for ps in miss_p if ps.label == gs.label and _overlaps(ps, gs)]
            over = [ps for ps in miss_p if _overlaps(ps, gs)]
            if same:
                kind, by = ErrorType.MISLABELED, same
            elif lab:
                kind, by = ErrorType.BOUNDARY, lab
            elif over:
                kind, by = ErrorType.SPAN_AND_LABEL, over
            else:
                kind, by = ErrorType.MISSING, []
            used.update(by)
            out.append(ErrorRecord(sid, kind, [gs], by))
        for ps in miss_p:
            if ps not in used:
                out.append(ErrorRecord(sid, ErrorType.SPURIOUS, [], [ps]))
    return out


# ------------------------------------------------------------ synthetic data

@dataclass
class SyntheticConfig:
    """Generator settings.

    Every label owns a small word vocabulary (``per_0`` ...) and a trigger
    word (``per_x``).  A depth-1 mention is a run of 1-3 words of its
    label; a deeper mention is a shallower one followed by the trigger of
    its own label, so nested mentions share their start token.  Mentions
    are separated by filler words.
    """

    labels: Sequence[str] = ("PER", "ORG", "LOC", "NUM")
    max_depth: int = 2
    min_len: int = 6
    max_len: int = 20
    n_sentences: int = 100
    seed: int = 0
    words_per_label: int = 5
    n_fillers: int = 20
    mention_rate: float = 0.35

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")


def _mention(rng: random.Random, cfg: SyntheticConfig, depth: int):
    base = rng.choice(cfg.labels)
    k = rng.randint(1, 3)
    toks = [f"{base.lower()}_{rng.randrange(cfg.words_per_label)}" for _ in range(k)]
    spans = [(0, k, base)]
    for _ in range(depth - 1):
        outer = rng.choice(cfg.labels)
        toks.append(f"{outer.lower()}_x")
        spans.append((0, len(toks), outer))
    return toks, spans


def gen_synthetic(cfg: SyntheticConfig | None = None, **overrides) -> list[AnnotatedSentence]:
    cfg = cfg or SyntheticConfig(**overrides)
    rng = random.Random(cfg.seed)
    fillers = [f"w{i}" for i in range(cfg.n_fillers)]
    filler_set = set(fillers)
    out = []
    for s in range(cfg.n_sentences):
        target = rng.randint(cfg.min_len, cfg.max_len)
        toks: list[str] = []
        spans: list[LabeledSpan] = []
        while len(toks) < target:
            room = target - len(toks)
            if room >= 2 and (not toks or toks[-1] in filler_set) and rng.random() < cfg.mention_rate:
                m_toks, m_spans = _mention(rng, cfg, rng.randint(1, cfg.max_depth))
                if len(m_toks) <= room:
                    base = len(toks)
                    toks.extend(m_toks)
                    spans.extend(LabeledSpan(base + a, base + b, lab) for a, b, lab in m_spans)
                    if len(toks) < target:
                        toks.append(rng.choice(fillers))
                    continue
            toks.append(rng.choice(fillers))
        out.append(AnnotatedSentence(Sentence(f"syn-{cfg.seed}-{s}", toks), sorted(set(spans))))
    return out


def gen_constant_density(lengths: Iterable[int], per_length: int = 3, seed: int = 0,
                         cfg: SyntheticConfig | None = None) -> list[AnnotatedSentence]:
    """Sentences tiled from 5-token blocks with exactly two spans each.

    A block is a two-word mention of one label, the trigger of a second
    label (closing the outer span) and two fillers; the tail left over when
    N is not a multiple of 5 is filler.  Gold output length is therefore an
    exact linear function of N, which is what decode timing needs.
    """
    cfg = cfg or SyntheticConfig()
    rng = random.Random(seed)
    fillers = [f"w{i}" for i in range(cfg.n_fillers)]
    out = []
    for n in lengths:
        if n < 1:
            raise ValueError("lengths must be positive")
        for k in range(per_length):
            toks: list[str] = []
            spans = []
            while len(toks) + 5 <= n:
                inner, outer = rng.choice(cfg.labels), rng.choice(cfg.labels)
                b = len(toks)
                toks += [f"{inner.lower()}_{rng.randrange(cfg.words_per_label)}" for _ in range(2)]
                toks.append(f"{outer.lower()}_x")
                toks += [rng.choice(fillers), rng.choice(fillers)]
                spans += [LabeledSpan(b, b + 2, inner), LabeledSpan(b, b + 3, outer)]
            toks += [rng.choice(fillers) for _ in range(n - len(toks))]
            out.append(AnnotatedSentence(Sentence(f"cd-{seed}-{n}-{k}", toks), spans))
    return out


def nesting_depth(spans: Sequence[LabeledSpan]) -> int:
    """Longest chain of strictly containing spans."""
    order = sorted(set(spans), key=lambda sp: (sp.length, sp.start))
    best: dict[LabeledSpan, int] = {}
    for sp in order:
        inner = [best[o] for o in best
                 if sp.start <= o.start and o.end <= sp.end and o.length < sp.length]
        best[sp] = 1 + max(inner, default=0)
    return max(best.values(), default=0)


# --------------------------------------------------------------- benchmark

@dataclass
class BenchReport:
    n_tokens: np.ndarray
    n_decisions: np.ndarray
    seconds: np.ndarray
    ids: list[str]
    sentences_per_sec: float
    decisions_per_sec: float
    slope: float
    intercept: float
    quad_coef: np.ndarray  # highest power first, as np.polyfit returns
    quad_share: float
    spearman: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["id", "n_tokens", "n_decisions", "seconds"])
        for row in zip(self.ids, self.n_tokens, self.n_decisions, self.seconds):
            w.writerow(row)
        return buf.getvalue()

    def summary(self) -> str:
        return (f"sentences/sec {self.sentences_per_sec:.1f}  decisions/sec {self.decisions_per_sec:.1f}\n"
                f"linear fit: {self.slope * 1e6:.2f} us/token + {self.intercept * 1e3:.3f} ms\n"
                f"quadratic share at N={int(self.n_tokens.max())}: {self.quad_share:.4f}\n"
                f"spearman(time, N): {self.spearman:.3f}")


def fit_time_vs_length(n: np.ndarray, secs: np.ndarray) -> tuple[float, float, np.ndarray, float]:
    """Least-squares linear and quadratic fits of time against length.

    The returned share is the quadratic term's fraction of the quadratic
    fit's prediction at the largest N.
    """
    n = np.asarray(n, dtype=np.float64)
    secs = np.asarray(secs, dtype=np.float64)
    slope, intercept = np.polyfit(n, secs, 1)
    quad = np.polyfit(n, secs, 2)
    nmax = n.max()
    pred = np.polyval(quad, nmax)
    share = abs(quad[0]) * nmax ** 2 / pred if pred > 0 else float("inf")
    return float(slope), float(intercept), quad, float(share)


def bench_decode(corpus: Sequence[Sentence], params, config=None, warmup: int = 5,
                 repeats: int = 1) -> BenchReport:
    """Time single-worker ``decode`` per sentence (best of ``repeats`` passes)."""
    from .inference import decode

    if not corpus:
        raise ValueError("empty corpus")
    for s in list(corpus)[:warmup]:
        decode(s, params, config)
    corpus = list(corpus)
    best = [float("inf")] * len(corpus)
    ndec = [0] * len(corpus)
    # Whole passes in a fresh random order each time, so a slow stretch on the
    # machine is spread over all lengths instead of bending the fit.
    order = np.random.default_rng(0)
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for i in order.permutation(len(corpus)):
                s = corpus[i]
                t0 = time.perf_counter()
                res = decode(s, params, config)
                best[i] = min(best[i], time.perf_counter() - t0)
                ndec[i] = len(res.codes)
    finally:
        if gc_was_on:
            gc.enable()
    secs = best
    lens = [len(s) for s in corpus]
    ids = [s.id for s in corpus]
    secs_a = np.array(secs)
    lens_a = np.array(lens)
    ndec_a = np.array(ndec)
    total = secs_a.sum()
    slope, intercept, quad, share = fit_time_vs_length(lens_a, secs_a)
    rho = stats.spearmanr(lens_a, secs_a).statistic if len(set(lens)) > 1 else float("nan")
    return BenchReport(lens_a, ndec_a, secs_a, ids, len(secs) / total, ndec_a.sum() / total,
                       slope, intercept, quad, share, float(rho))
