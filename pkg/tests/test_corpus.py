import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copynext.corpus import (AlignmentError, AnnotatedSentence, CoverageError, FormatError,
                             LabeledSpan, LabelSet, ParseError, Sentence, SubwordMap,
                             ValidationError, dump_corpus, load_corpus, load_embeddings,
                             load_static_embeddings, pool_subwords, subword_align)

APPENDIX = {"id": "wsj-1", "tokens": ["James", "Wilbur", ",", "a", "Smith", "Barney", "analyst"],
            "spans": [[0, 2, "PER"], [0, 1, "FIRST"], [1, 2, "NAME"], [4, 6, "ORGCORP"],
                      [4, 6, "NAME"], [4, 5, "NAME"], [5, 6, "NAME"]]}


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_appendix_record(self, tmp_path):
        corpus = load_corpus(write_lines(tmp_path / "c.jsonl", [APPENDIX]))
        assert len(corpus) == 1
        assert len(corpus[0].spans) == 7
        assert LabelSet.from_corpus(corpus).labels == ["EOS", "FIRST", "NAME", "ORGCORP", "PER"]

    def test_empty_spans(self, tmp_path):
        corpus = load_corpus(write_lines(tmp_path / "c.jsonl", [{"id": "a", "tokens": ["x"], "spans": []}]))
        assert corpus[0].spans == []

    def test_out_of_bounds_names_sentence(self, tmp_path):
        rec = dict(APPENDIX, id="bad-one", spans=[[0, 9, "X"]])
        with pytest.raises(ValidationError, match="bad-one"):
            load_corpus(write_lines(tmp_path / "c.jsonl", [rec]))

    def test_parse_error_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps(APPENDIX) + "\n{not json\n")
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(p)

    def test_duplicate_triple_rejected(self):
        with pytest.raises(ValidationError):
            AnnotatedSentence(Sentence("s", ["a", "b"]), [LabeledSpan(0, 1, "A"), LabeledSpan(0, 1, "A")])

    def test_same_boundaries_different_labels_allowed(self):
        a = AnnotatedSentence(Sentence("s", ["a", "b"]), [LabeledSpan(0, 2, "A"), LabeledSpan(0, 2, "B")])
        assert len(a.spans) == 2

    def test_eos_label_rejected(self):
        with pytest.raises(ValidationError):
            AnnotatedSentence(Sentence("s", ["a"]), [LabeledSpan(0, 1, "EOS")])

    def test_round_trip(self, tmp_path):
        first = load_corpus(write_lines(tmp_path / "a.jsonl", [APPENDIX, {"id": "b", "tokens": ["z"]}]))
        dump_corpus(first, tmp_path / "b.jsonl")
        second = load_corpus(tmp_path / "b.jsonl")
        assert [(a.id, a.tokens, a.spans) for a in first] == [(a.id, a.tokens, a.spans) for a in second]


spans_strategy = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.just(n),
    st.sets(st.tuples(st.integers(0, n - 1), st.integers(1, n), st.sampled_from("ABC"))
            .filter(lambda t: t[0] < t[1]), max_size=8),
))


@settings(max_examples=200, deadline=None)
@given(spans_strategy)
def test_corpus_round_trip_property(tmp_path_factory, case):
    n, triples = case
    rec = {"id": "p", "tokens": [f"t{i}" for i in range(n)], "spans": [list(t) for t in sorted(triples)]}
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    first = load_corpus(write_lines(path, [rec]))
    dump_corpus(first, path)
    second = load_corpus(path)
    assert first[0].tokens == second[0].tokens
    assert first[0].spans == second[0].spans


class TestSubwordAlign:
    split = staticmethod(lambda t: ["C", "oke"] if t == "Coke" else [t])

    def test_single_span(self):
        a = AnnotatedSentence(Sentence("s", ["Coke", "rose"]), [LabeledSpan(0, 1, "A")])
        b, smap = subword_align(a, self.split)
        assert b.tokens == ["C", "oke", "rose"]
        assert b.spans == [LabeledSpan(0, 2, "A")]
        assert smap.ranges == ((0, 2), (2, 3))

    def test_wide_span(self):
        a = AnnotatedSentence(Sentence("s", ["Coke", "rose"]), [LabeledSpan(0, 2, "A")])
        assert subword_align(a, self.split)[0].spans == [LabeledSpan(0, 3, "A")]

    def test_identity(self):
        a = AnnotatedSentence(Sentence("s", ["x", "y", "z"]), [LabeledSpan(1, 3, "A")])
        b, smap = subword_align(a, lambda t: [t])
        assert b.spans == a.spans and smap == SubwordMap.identity(3)

    def test_empty_split_errors(self):
        a = AnnotatedSentence(Sentence("s", ["x"]), [])
        with pytest.raises(AlignmentError):
            subword_align(a, lambda t: [])

    @settings(max_examples=200, deadline=None)
    @given(spans_strategy, st.lists(st.integers(1, 3), min_size=12, max_size=12))
    def test_preserves_labels_and_text(self, case, widths):
        n, triples = case
        toks = [f"w{i}" for i in range(n)]
        pieces = {t: [f"{t}#{k}" for k in range(widths[i])] for i, t in enumerate(toks)}
        a = AnnotatedSentence(Sentence("s", toks), [LabeledSpan(*t) for t in sorted(triples)])
        b, smap = subword_align(a, lambda t: pieces[t])
        assert sorted(sp.label for sp in a.spans) == sorted(sp.label for sp in b.spans)
        for old, new in zip(a.spans, b.spans):
            covered = [p for t in toks[old.start:old.end] for p in pieces[t]]
            assert b.tokens[new.start:new.end] == covered


class TestPooling:
    def test_two_point_mean(self):
        s = Sentence("s", ["a", "b"], np.array([[1.0, 1.0], [3.0, 3.0]]))
        out = pool_subwords(s, SubwordMap(((0, 2),)))
        np.testing.assert_array_equal(out.vectors, [[2.0, 2.0]])

    def test_identity(self):
        v = np.random.default_rng(0).normal(size=(4, 3))
        out = pool_subwords(Sentence("s", list("abcd"), v), SubwordMap.identity(4))
        np.testing.assert_array_equal(out.vectors, v)

    def test_three_way_mean_matches_scalar_loop(self):
        v = np.random.default_rng(1).normal(size=(5, 4))
        smap = SubwordMap(((0, 3), (3, 4), (4, 5)))
        out = pool_subwords(Sentence("s", list("abcde"), v), smap)
        for col in range(4):
            acc = 0.0
            for row in range(3):
                acc += v[row, col]
            assert out.vectors[0, col] == pytest.approx(acc / 3, abs=1e-15)

    def test_missing_vectors(self):
        with pytest.raises(NotImplementedError):
            pool_subwords(Sentence("s", ["a"]), SubwordMap.identity(1))


class TestEmbeddings:
    corpus = [AnnotatedSentence(Sentence("a", ["x", "y"])), AnnotatedSentence(Sentence("b", ["z"]))]

    def test_attach(self, tmp_path):
        p = write_lines(tmp_path / "e.jsonl", [{"id": "a", "vectors": [[1.0] * 8, [2.0] * 8]},
                                               {"id": "b", "vectors": [[3.0] * 8]}])
        out = load_embeddings(p, self.corpus)
        assert all(a.sentence.vectors.shape == (len(a), 8) for a in out)
        assert self.corpus[0].sentence.vectors is None

    def test_missing_id(self, tmp_path):
        p = write_lines(tmp_path / "e.jsonl", [{"id": "a", "vectors": [[1.0] * 8, [2.0] * 8]}])
        with pytest.raises(CoverageError, match="b"):
            load_embeddings(p, self.corpus)

    def test_dimension_mismatch(self, tmp_path):
        p = write_lines(tmp_path / "e.jsonl", [{"id": "a", "vectors": [[1.0] * 8, [2.0] * 8]},
                                               {"id": "b", "vectors": [[3.0] * 16]}])
        with pytest.raises(FormatError):
            load_embeddings(p, self.corpus)

    def test_static_file(self, tmp_path):
        p = tmp_path / "glove.txt"
        p.write_text("2 3\nfoo 1 2 3\nbar 4 5 6\n")
        words, mat = load_static_embeddings(p)
        assert words == ["foo", "bar"]
        np.testing.assert_array_equal(mat, [[1, 2, 3], [4, 5, 6]])
