"""Corpus ingestion: JSON-lines sentences, embedding files, subword alignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

EOS = "EOS"
UNK = "<unk>"


class CorpusError(ValueError):
    """Base class for malformed corpus or embedding input."""


class ParseError(CorpusError):
    pass


class ValidationError(CorpusError):
    pass


class AlignmentError(CorpusError):
    pass


class CoverageError(CorpusError):
    pass


class FormatError(CorpusError):
    pass


@dataclass(frozen=True, order=True)
class LabeledSpan:
    start: int
    end: int
    label: str

    @property
    def length(self) -> int:
        return self.end - self.start

    def as_list(self) -> list:
        return [self.start, self.end, self.label]


@dataclass
class Sentence:
    id: str
    tokens: list[str]
    vectors: np.ndarray | None = None

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValidationError(f"sentence {self.id!r} has no tokens")
        if self.vectors is not None:
            v = np.asarray(self.vectors, dtype=np.float64)
            if v.ndim != 2 or v.shape[0] != len(self.tokens) or v.shape[1] < 1:
                raise ValidationError(
                    f"sentence {self.id!r}: vectors shape {v.shape} does not match "
                    f"{len(self.tokens)} tokens"
                )
            self.vectors = v

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class AnnotatedSentence:
    sentence: Sentence
    spans: list[LabeledSpan] = field(default_factory=list)

    def __post_init__(self):
        validate_spans(self.spans, len(self.sentence), self.sentence.id)

    @property
    def id(self) -> str:
        return self.sentence.id

    @property
    def tokens(self) -> list[str]:
        return self.sentence.tokens

    def __len__(self) -> int:
        return len(self.sentence)


def validate_spans(spans: Sequence[LabeledSpan], n: int, sent_id: str = "?") -> None:
    seen = set()
    for sp in spans:
        if not (0 <= sp.start < sp.end <= n):
            raise ValidationError(
                f"sentence {sent_id!r}: span {sp.as_list()} out of bounds for {n} tokens"
            )
        if sp.label == EOS:
            raise ValidationError(f"sentence {sent_id!r}: EOS used as a span label")
        if sp in seen:
            raise ValidationError(f"sentence {sent_id!r}: duplicate span {sp.as_list()}")
        seen.add(sp)


class LabelSet:
    """Ordered label inventory. EOS always sits at index 0."""

    def __init__(self, labels: Iterable[str]):
        labels = [l for l in labels if l != EOS]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels")
        self.labels: list[str] = [EOS] + labels
        self._index = {l: i for i, l in enumerate(self.labels)}

    @classmethod
    def from_corpus(cls, corpus: Iterable[AnnotatedSentence]) -> "LabelSet":
        return cls(sorted({sp.label for a in corpus for sp in a.spans}))

    eos_index = 0

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def __getitem__(self, i: int) -> str:
        return self.labels[i]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"LabelSet({self.labels[1:]!r})"


class Vocab:
    """Closed token vocabulary; index 0 is the UNK row."""

    def __init__(self, tokens: Iterable[str]):
        toks = [t for t in dict.fromkeys(tokens) if t != UNK]
        self.tokens: list[str] = [UNK] + toks
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_corpus(cls, corpus: Iterable[AnnotatedSentence]) -> "Vocab":
        return cls(sorted({t for a in corpus for t in a.tokens}))

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._index.get(t, 0) for t in tokens], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SubwordMap:
    """Per original token, the half-open range of subword positions it covers."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pos = 0
        for a, b in self.ranges:
            if a != pos or b <= a:
                raise AlignmentError(f"subword ranges not contiguous at {(a, b)}")
            pos = b

    @property
    def n_subwords(self) -> int:
        return self.ranges[-1][1] if self.ranges else 0

    @classmethod
    def identity(cls, n: int) -> "SubwordMap":
        return cls(tuple((i, i + 1) for i in range(n)))


# --------------------------------------------------------------------- I/O

def _record_to_sentence(obj: dict, lineno: int) -> AnnotatedSentence:
    if not isinstance(obj, dict) or "tokens" not in obj:
        raise ParseError(f"line {lineno}: record must be an object with 'tokens'")
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ParseError(f"line {lineno}: 'tokens' must be a list of strings")
    sid = str(obj.get("id", lineno - 1))
    spans = []
    for raw in obj.get("spans", []):
        if (not isinstance(raw, (list, tuple)) or len(raw) != 3
                or not isinstance(raw[0], int) or not isinstance(raw[1], int)
                or not isinstance(raw[2], str)):
            raise ParseError(f"line {lineno}: bad span {raw!r}")
        spans.append(LabeledSpan(raw[0], raw[1], raw[2]))
    vectors = obj.get("vectors")
    return AnnotatedSentence(Sentence(sid, list(tokens), vectors), spans)


def parse_corpus(lines: Iterable[str]) -> list[AnnotatedSentence]:
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: {exc.msg}") from None
        out.append(_record_to_sentence(obj, lineno))
    return out


def load_corpus(path: str | Path) -> list[AnnotatedSentence]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def sentence_record(a: AnnotatedSentence, with_vectors: bool = False) -> dict:
    rec = {"id": a.id, "tokens": a.tokens, "spans": [sp.as_list() for sp in a.spans]}
    if with_vectors and a.sentence.vectors is not None:
        rec["vectors"] = a.sentence.vectors.tolist()
    return rec


def dump_corpus(corpus: Iterable[AnnotatedSentence], path: str | Path,
                with_vectors: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in corpus:
            fh.write(json.dumps(sentence_record(a, with_vectors), ensure_ascii=False) + "\n")


def load_embeddings(path: str | Path, corpus: Sequence[AnnotatedSentence]) -> list[AnnotatedSentence]:
    """Attach precomputed per-token vectors (JSON-lines ``{"id", "vectors"}``).

    Returns new sentences; the input corpus is left untouched.
    """
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vecs = np.asarray(obj["vectors"], dtype=np.float64)
                sid = str(obj["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            if vecs.ndim != 2 or vecs.shape[1] < 1:
                raise FormatError(f"line {lineno}: vectors must be a non-empty matrix")
            if dim is None:
                dim = vecs.shape[1]
            elif vecs.shape[1] != dim:
                raise FormatError(
                    f"line {lineno}: sentence {sid!r} has dimension {vecs.shape[1]}, expected {dim}"
                )
            table[sid] = vecs
    missing = [a.id for a in corpus if a.id not in table]
    if missing:
        raise CoverageError(f"no vectors for sentence ids: {', '.join(missing)}")
    out = []
    for a in corpus:
        vecs = table[a.id]
        if vecs.shape[0] != len(a):
            raise FormatError(
                f"sentence {a.id!r}: {vecs.shape[0]} vectors for {len(a)} tokens"
            )
        out.append(AnnotatedSentence(replace(a.sentence, vectors=vecs), list(a.spans)))
    return out


def load_static_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a ``V E`` header followed by ``token v1 ... vE`` lines."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            v, e = int(header[0]), int(header[1])
        except (IndexError, ValueError):
            raise FormatError("static embeddings header must be 'V E'") from None
        words, rows = [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != e + 1:
                raise FormatError(f"line {lineno}: expected {e} values, got {len(parts) - 1}")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(words) != v:
        raise FormatError(f"header declares {v} rows, file has {len(words)}")
    return words, np.asarray(rows, dtype=np.float64).reshape(v, e)


# ----------------------------------------------------------- subword handling

def whitespace_tokenizer(token: str) -> list[str]:
    return token.split() or [token]


def subword_align(sent: AnnotatedSentence,
                  tokenizer: Callable[[str], list[str]]) -> tuple[AnnotatedSentence, SubwordMap]:
    pieces: list[str] = []
    ranges = []
    for tok in sent.tokens:
        sub = list(tokenizer(tok))
        if not sub:
            raise AlignmentError(f"sentence {sent.id!r}: tokenizer produced nothing for {tok!r}")
        ranges.append((len(pieces), len(pieces) + len(sub)))
        pieces.extend(sub)
    smap = SubwordMap(tuple(ranges))
    spans = [LabeledSpan(ranges[sp.start][0], ranges[sp.end - 1][1], sp.label) for sp in sent.spans]
    return AnnotatedSentence(Sentence(sent.id, pieces), spans), smap


def pool_subwords(sent: Sentence, smap: SubwordMap, tokens: Sequence[str] | None = None) -> Sentence:
    """Mean-pool subword vectors back to one vector per original token."""
    if sent.vectors is None:
        raise NotImplementedError(f"sentence {sent.id!r} carries no vectors to pool")
    if smap.n_subwords != len(sent):
        raise AlignmentError(
            f"sentence {sent.id!r}: map covers {smap.n_subwords} subwords, sentence has {len(sent)}"
        )
    pooled = np.stack([sent.vectors[a:b].mean(axis=0) for a, b in smap.ranges])
    if tokens is None:
        tokens = ["".join(sent.tokens[a:b]) for a, b in smap.ranges]
    return Sentence(sent.id, list(tokens), pooled)
