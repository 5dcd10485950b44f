"""Span sets <-> flat decision sequences (pointer / CopyNext / label)."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .corpus import EOS, LabeledSpan, LabelSet


class Scheme(enum.Enum):
    COPYNEXT = "copynext"
    COPY = "copy"
    COPYPREV = "copyprev"

    @classmethod
    def parse(cls, value: "str | Scheme") -> "Scheme":
        if isinstance(value, Scheme):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(
                f"unknown scheme {value!r}; choose one of {[s.value for s in cls]}"
            ) from None


@dataclass(frozen=True)
class Point:
    index: int

    def __str__(self) -> str:
        return str(self.index)


@dataclass(frozen=True)
class CopyNext:
    def __str__(self) -> str:
        return "CN"


@dataclass(frozen=True)
class Label:
    label: str

    def __str__(self) -> str:
        return self.label


Decision = Union[Point, CopyNext, Label]
CN = CopyNext()
END = Label(EOS)


class StructureError(ValueError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def _ordered(spans: Sequence[LabeledSpan], scheme: Scheme, seed: int) -> list[LabeledSpan]:
    rng = random.Random(seed)
    canonical = sorted(set(spans))
    ties = {sp: rng.random() for sp in canonical}
    if scheme is Scheme.COPYPREV:
        key = lambda sp: (-sp.end, -sp.length, ties[sp])  # noqa: E731
    else:
        key = lambda sp: (sp.start, -sp.length, ties[sp])  # noqa: E731
    return sorted(canonical, key=key)


def linearize(spans: Iterable[LabeledSpan], n: int, scheme: Scheme = Scheme.COPYNEXT,
              seed: int = 0) -> list[Decision]:
    """Emit the decision sequence for a span set, terminated by EOS.

    Spans sharing the primary sort keys are ordered by a shuffle drawn
    from ``seed``.
    """
    scheme = Scheme.parse(scheme)
    out: list[Decision] = []
    for sp in _ordered(list(spans), scheme, seed):
        if not 0 <= sp.start < sp.end <= n:
            raise ValueError(f"span {sp.as_list()} out of bounds for {n} tokens")
        if scheme is Scheme.COPYNEXT:
            out.append(Point(sp.start))
            out.extend([CN] * (sp.length - 1))
        elif scheme is Scheme.COPY:
            out.extend(Point(i) for i in range(sp.start, sp.end))
        else:
            out.append(Point(sp.end - 1))
            out.extend([CN] * (sp.length - 1))
        out.append(Label(sp.label))
    out.append(END)
    return out


def delinearize(seq: Sequence[Decision], n: int, scheme: Scheme = Scheme.COPYNEXT) -> list[LabeledSpan]:
    """Parse a decision sequence back into its (sorted, de-duplicated) span set."""
    scheme = Scheme.parse(scheme)
    spans: set[LabeledSpan] = set()
    anchor = frontier = None  # anchor: first pointed index of the open span
    for t, d in enumerate(seq):
        if isinstance(d, Point):
            if not 0 <= d.index < n:
                raise StructureError(t, f"pointer {d.index} outside [0, {n})")
            if frontier is None:
                anchor = frontier = d.index
            elif scheme is Scheme.COPY and d.index == frontier + 1:
                frontier = d.index
            elif scheme is Scheme.COPY:
                raise StructureError(t, f"pointer jumps from {frontier} to {d.index} inside a span")
            else:
                raise StructureError(t, "pointer inside an open span")
        elif isinstance(d, CopyNext):
            if frontier is None:
                raise StructureError(t, "CN before any pointer")
            if scheme is Scheme.COPY:
                raise StructureError(t, "CN is not part of the copy-only scheme")
            nxt = frontier + 1 if scheme is Scheme.COPYNEXT else frontier - 1
            if not 0 <= nxt < n:
                raise StructureError(t, f"CN crosses the sentence boundary at {frontier}")
            frontier = nxt
        elif isinstance(d, Label):
            if d.label == EOS:
                if frontier is not None:
                    raise StructureError(t, "EOS inside an open span")
                if t != len(seq) - 1:
                    raise StructureError(t + 1, "decisions after EOS")
                return sorted(spans)
            if frontier is None:
                raise StructureError(t, f"label {d.label!r} before any pointer")
            lo, hi = min(anchor, frontier), max(anchor, frontier)
            spans.add(LabeledSpan(lo, hi + 1, d.label))
            anchor = frontier = None
        else:
            raise StructureError(t, f"not a decision: {d!r}")
    raise StructureError(len(seq), "sequence does not end with EOS")


def target_length(spans: Iterable[LabeledSpan], scheme: Scheme = Scheme.COPYNEXT) -> int:
    # Every scheme spends len(span) decisions on the tokens plus one label.
    return sum(sp.length + 1 for sp in set(spans)) + 1


# ------------------------------------------------------------ serialization

def format_sequence(seq: Sequence[Decision]) -> str:
    return " ".join(str(d) for d in seq)


def parse_sequence(text: str) -> list[Decision]:
    out: list[Decision] = []
    for tok in text.split():
        if tok == "CN":
            out.append(CN)
        elif tok.lstrip("-").isdigit():
            out.append(Point(int(tok)))
        else:
            out.append(Label(tok))
    return out


def encode_decision(d: Decision, n: int, labels: LabelSet) -> int:
    """Integer code in the head layout: points, then labels, then CN."""
    if isinstance(d, Point):
        if not 0 <= d.index < n:
            raise ValueError(f"pointer {d.index} outside [0, {n})")
        return d.index
    if isinstance(d, Label):
        return n + labels.index(d.label)
    if isinstance(d, CopyNext):
        return n + len(labels)
    raise TypeError(f"not a decision: {d!r}")


def decode_decision(code: int, n: int, labels: LabelSet) -> Decision:
    code = int(code)
    if 0 <= code < n:
        return Point(code)
    if n <= code < n + len(labels):
        return Label(labels[code - n])
    if code == n + len(labels):
        return CN
    raise ValueError(f"code {code} outside [0, {n + len(labels) + 1})")


def encode_sequence(seq: Sequence[Decision], n: int, labels: LabelSet) -> list[int]:
    return [encode_decision(d, n, labels) for d in seq]


def decode_sequence(codes: Iterable[int], n: int, labels: LabelSet) -> list[Decision]:
    return [decode_decision(c, n, labels) for c in codes]
