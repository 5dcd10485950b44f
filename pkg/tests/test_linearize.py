import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copynext.automaton import accepts
from copynext.corpus import LabeledSpan, LabelSet
from copynext.linearize import (CN, END, Label, Point, Scheme, StructureError, decode_sequence,
                                delinearize, encode_sequence, format_sequence, linearize,
                                parse_sequence, target_length)

S = LabeledSpan
APPENDIX = [S(0, 2, "PER"), S(0, 1, "FIRST"), S(1, 2, "NAME"), S(4, 6, "NAME"),
            S(4, 6, "ORGCORP"), S(4, 5, "NAME"), S(5, 6, "NAME")]
PRINTED = "0 CN PER 0 FIRST 1 NAME 4 CN NAME 4 CN ORGCORP 4 NAME 5 NAME EOS"
SWAPPED = "0 CN PER 0 FIRST 1 NAME 4 CN ORGCORP 4 CN NAME 4 NAME 5 NAME EOS"


def random_spans(rng: random.Random, n: int, labels="ABCD", max_spans=8):
    spans = set()
    for _ in range(rng.randint(0, max_spans)):
        a = rng.randrange(n)
        b = rng.randint(a + 1, n)
        spans.add(S(a, b, rng.choice(labels)))
    return spans


class TestLinearize:
    def test_appendix_example(self):
        seen = {format_sequence(linearize(APPENDIX, 7, Scheme.COPYNEXT, seed)) for seed in range(20)}
        assert seen == {PRINTED, SWAPPED}

    def test_empty(self):
        for scheme in Scheme:
            assert linearize([], 5, scheme) == [END]

    def test_copy_only(self):
        assert linearize([S(4, 6, "NAME")], 7, Scheme.COPY) == [Point(4), Point(5), Label("NAME"), END]

    def test_copy_prev(self):
        seq = linearize([S(1, 4, "A"), S(0, 2, "B")], 5, Scheme.COPYPREV)
        assert format_sequence(seq) == "3 CN CN A 1 CN B EOS"

    def test_seed_reproducible(self):
        assert linearize(APPENDIX, 7, seed=3) == linearize(list(reversed(APPENDIX)), 7, seed=3)


class TestDelinearize:
    def test_appendix(self):
        assert set(delinearize(parse_sequence(PRINTED), 7)) == set(APPENDIX)

    def test_eos_only(self):
        assert delinearize([END], 3) == []

    @pytest.mark.parametrize("text, step", [
        ("NAME EOS", 0),
        ("CN EOS", 0),
        ("6 CN NAME EOS", 1),
        ("0 1 NAME EOS", 1),
        ("0 EOS", 1),
        ("0 NAME", 2),
        ("EOS 0 NAME EOS", 1),
        ("9 NAME EOS", 0),
    ])
    def test_structure_errors(self, text, step):
        with pytest.raises(StructureError) as err:
            delinearize(parse_sequence(text), 7, Scheme.COPYNEXT)
        assert err.value.step == step

    def test_copy_only_jump(self):
        with pytest.raises(StructureError) as err:
            delinearize(parse_sequence("4 6 NAME EOS"), 7, Scheme.COPY)
        assert err.value.step == 1

    def test_copyprev_left_boundary(self):
        with pytest.raises(StructureError):
            delinearize(parse_sequence("0 CN A EOS"), 3, Scheme.COPYPREV)

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_round_trip_seeded(self, scheme):
        rng = random.Random(11)
        for _ in range(2000):
            n = rng.randint(1, 15)
            spans = random_spans(rng, n)
            seq = linearize(spans, n, scheme, rng.randrange(10**6))
            assert set(delinearize(seq, n, scheme)) == spans


@st.composite
def span_sets(draw):
    n = draw(st.integers(1, 12))
    triples = draw(st.sets(
        st.tuples(st.integers(0, n - 1), st.integers(1, n), st.sampled_from(["A", "B", "C"]))
        .filter(lambda t: t[0] < t[1]), max_size=10))
    return n, {S(*t) for t in triples}


@settings(max_examples=300, deadline=None)
@given(span_sets(), st.sampled_from(list(Scheme)), st.integers(0, 2**31))
def test_properties(case, scheme, seed):
    n, spans = case
    seq = linearize(spans, n, scheme, seed)
    assert set(delinearize(seq, n, scheme)) == spans
    assert accepts(seq, n, scheme)
    assert target_length(spans, scheme) == len(seq)
    assert seq.count(END) == 1 and seq[-1] == END
    other = linearize(spans, n, scheme, seed + 1)
    assert set(delinearize(other, n, scheme)) == spans
    if scheme is Scheme.COPYNEXT:
        points = [d.index for d in seq if isinstance(d, Point)]
        assert points == sorted(points)


class TestTargetLength:
    def test_appendix(self):
        assert target_length(APPENDIX) == 18
        assert len(parse_sequence(PRINTED)) == 18

    def test_empty(self):
        assert target_length([]) == 1

    def test_length_three(self):
        assert target_length([S(0, 3, "A")]) == 5


class TestEncoding:
    def test_layout(self):
        labels = LabelSet(["A", "B"])
        seq = [Point(2), CN, Label("B"), END]
        codes = encode_sequence(seq, 4, labels)
        assert codes == [2, 4 + 3, 4 + 2, 4 + 0]
        assert decode_sequence(codes, 4, labels) == seq

    def test_serialization_round_trip(self):
        assert format_sequence(parse_sequence(PRINTED)) == PRINTED
