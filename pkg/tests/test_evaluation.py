import random
import time

import numpy as np
import pytest

from copynext.corpus import AnnotatedSentence, LabeledSpan, LabelSet, Sentence
from copynext.evaluation import (AlignmentError, ErrorType, SyntheticConfig, classify_errors,
                                 fit_time_vs_length, gen_constant_density, gen_synthetic,
                                 nesting_depth, score)
from copynext.inference import sequence_score
from copynext.linearize import linearize, target_length

from .helpers import random_params

S = LabeledSpan


def doc(sid, spans, n=12):
    return AnnotatedSentence(Sentence(sid, [f"t{i}" for i in range(n)]), spans)


class TestScore:
    def test_perfect(self):
        gold = [doc("a", [S(0, 2, "X"), S(1, 2, "Y")])]
        r = score(gold, {"a": [S(1, 2, "Y"), S(0, 2, "X")]})
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_worked_example(self):
        gold = [doc("a", [S(0, 1, "X"), S(1, 3, "X"), S(4, 6, "Y"), S(7, 9, "Y")])]
        r = score(gold, {"a": [S(0, 1, "X"), S(4, 6, "Y"), S(4, 6, "X")]})
        assert r.precision == 2 / 3 and r.recall == 1 / 2
        assert r.f1 == pytest.approx(4 / 7, abs=1e-15)

    def test_empty_prediction(self):
        r = score([doc("a", [S(0, 1, "X")])], {"a": []})
        assert (r.precision, r.recall, r.f1) == (1.0, 0.0, 0.0)

    def test_alignment(self):
        with pytest.raises(AlignmentError):
            score([doc("a", [])], {"b": []})
        with pytest.raises(AlignmentError):
            score([doc("a", []), doc("a", [])], {"a": []})

    def test_per_label(self):
        gold = [doc("a", [S(0, 1, "X"), S(2, 3, "Y")])]
        r = score(gold, {"a": [S(0, 1, "X"), S(2, 3, "X")]})
        assert r.per_label["X"][:3] == (0.5, 1.0, pytest.approx(2 / 3))
        assert r.per_label["Y"][1] == 0.0
        assert "micro" in r.table()
        assert r.to_csv().splitlines()[0] == "label,precision,recall,f1,matched,gold,pred"


def _random_spans(rng, n, k):
    out = set()
    for _ in range(rng.randint(0, k)):
        a = rng.randrange(n)
        out.add(S(a, rng.randint(a + 1, n), rng.choice("XYZ")))
    return out


def test_score_matches_brute_force():
    rng = random.Random(5)
    for case in range(1000):
        gold, pred = [], {}
        for i in range(rng.randint(1, 4)):
            g = _random_spans(rng, 8, 5)
            p = set(rng.sample(sorted(g), rng.randint(0, len(g)))) | _random_spans(rng, 8, 3)
            gold.append(doc(f"{case}-{i}", sorted(g), n=8))
            pred[f"{case}-{i}"] = list(p)
        triples_g = {(a.id, sp.start, sp.end, sp.label) for a in gold for sp in a.spans}
        triples_p = {(sid, sp.start, sp.end, sp.label) for sid, ps in pred.items() for sp in ps}
        m = len(triples_g & triples_p)
        P = m / len(triples_p) if triples_p else 1.0
        R = m / len(triples_g) if triples_g else 1.0
        F = 2 * P * R / (P + R) if P + R else 0.0
        r = score(gold, pred)
        assert (r.precision, r.recall, r.f1) == (P, R, F)
        shuffled = {k: list(reversed(v)) for k, v in pred.items()}
        assert score(list(reversed(gold)), shuffled).f1 == r.f1
        errs = classify_errors(gold, pred)
        unmatched_gold = sum(len(e.gold) for e in errs if e.type is not ErrorType.SPURIOUS)
        assert unmatched_gold == r.n_gold - r.matched
        spurious = sum(1 for e in errs if e.type is ErrorType.SPURIOUS)
        explained = {(e.sentence_id, sp) for e in errs for sp in e.predicted if e.type is not ErrorType.SPURIOUS}
        assert spurious + len(explained) == r.n_pred - r.matched
        assert sum(r.errors.values()) == len(errs)


class TestErrors:
    def kinds(self, gold, pred):
        return [e.type for e in classify_errors([doc("a", gold)], {"a": pred})]

    def test_mislabeled(self):
        assert self.kinds([S(0, 2, "CITYSTATE")], [S(0, 2, "COUNTRY")]) == [ErrorType.MISLABELED]

    def test_boundary(self):
        assert self.kinds([S(3, 7, "CITY")], [S(3, 6, "CITY")]) == [ErrorType.BOUNDARY]

    def test_span_and_label(self):
        assert self.kinds([S(3, 7, "CITY")], [S(5, 9, "STATE")]) == [ErrorType.SPAN_AND_LABEL]

    def test_missing_and_spurious(self):
        assert self.kinds([S(0, 1, "X")], [S(5, 6, "X")]) == [ErrorType.MISSING, ErrorType.SPURIOUS]

    def test_precedence(self):
        kinds = self.kinds([S(2, 5, "A")], [S(2, 5, "B"), S(2, 4, "A")])
        assert kinds == [ErrorType.MISLABELED, ErrorType.SPURIOUS]

    def test_matches_are_not_errors(self):
        assert self.kinds([S(0, 1, "X")], [S(0, 1, "X")]) == []


class TestSynthetic:
    def test_depth_one_flat(self):
        for a in gen_synthetic(max_depth=1, n_sentences=300, seed=1):
            assert nesting_depth(a.spans) <= 1

    def test_depth_three_reaches_three(self):
        corpus = gen_synthetic(max_depth=3, n_sentences=1000, seed=2)
        depths = [nesting_depth(a.spans) for a in corpus]
        assert max(depths) == 3

    def test_deterministic(self):
        a = gen_synthetic(SyntheticConfig(seed=9, n_sentences=50))
        b = gen_synthetic(SyntheticConfig(seed=9, n_sentences=50))
        assert [(x.id, x.tokens, x.spans) for x in a] == [(x.id, x.tokens, x.spans) for x in b]
        c = gen_synthetic(SyntheticConfig(seed=10, n_sentences=50))
        assert [x.tokens for x in a] != [x.tokens for x in c]

    def test_corpus_invariants(self):
        corpus = gen_synthetic(max_depth=3, n_sentences=500, seed=4, min_len=3, max_len=40)
        assert len({a.id for a in corpus}) == 500
        for a in corpus:
            assert 3 <= len(a) <= 40
            assert len(set(a.spans)) == len(a.spans)
            # Revalidate from scratch.
            AnnotatedSentence(Sentence(a.id, list(a.tokens)), list(a.spans))

    def test_labels_follow_tokens(self):
        for a in gen_synthetic(n_sentences=200, seed=3):
            for sp in a.spans:
                assert a.tokens[sp.end - 1].startswith(sp.label.lower() + "_")

    def test_constant_density(self):
        corpus = gen_constant_density(range(5, 101, 5), per_length=2, seed=3)
        assert len(corpus) == 40
        for a in corpus:
            n = len(a)
            assert len(a.spans) == 2 * (n // 5)
            assert target_length(a.spans) == 7 * n // 5 + 1
            assert nesting_depth(a.spans) == 2
        assert [len(a) for a in gen_constant_density([7])] == [7, 7, 7]

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SyntheticConfig(max_depth=0)


def test_nesting_depth():
    assert nesting_depth([]) == 0
    assert nesting_depth([S(0, 4, "A"), S(0, 2, "B"), S(1, 2, "C"), S(5, 6, "A")]) == 3


def test_fit_time_vs_length_recovers_line():
    n = np.arange(5, 201, dtype=float)
    slope, intercept, quad, share = fit_time_vs_length(n, 2e-5 * n + 1e-3)
    assert slope == pytest.approx(2e-5) and intercept == pytest.approx(1e-3)
    assert share < 1e-9
    _, _, _, share = fit_time_vs_length(n, 1e-6 * n ** 2)
    assert share == pytest.approx(1.0)


def test_label_count_barely_moves_step_cost():
    # Same sentence and decision sequence, so both runs take the same number of steps.
    rng = np.random.default_rng(0)
    n = 60
    sent = Sentence("s", [f"t{i}" for i in range(n)], rng.normal(size=(n, 16)))
    spans = [S(i, i + 2, "L0") for i in range(0, n - 2, 4)] + [S(i, i + 1, "L1") for i in range(0, n, 4)]
    seq = linearize(spans, n)
    times = {}
    for k in (8, 16):
        p = random_params(2, 32, 16, LabelSet([f"L{j}" for j in range(k)]), seed=k)
        sequence_score(sent, p, seq)
        best = float("inf")
        for _ in range(7):
            t0 = time.perf_counter()
            sequence_score(sent, p, seq)
            best = min(best, time.perf_counter() - t0)
        times[k] = best
    assert times[16] < 2 * times[8]
