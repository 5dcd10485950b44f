import math

import numpy as np
import pytest

from copynext.corpus import AnnotatedSentence, LabeledSpan, Sentence
from copynext.inference import greedy_decode, predict_spans
from copynext.linearize import linearize
from copynext.model import sequence_loss
from copynext.training import (Adam, TrainConfig, TrainingDiverged, _batches, build_model,
                               clip_global_norm, train)

S = LabeledSpan


def sample(seed=0, n=6):
    rng = np.random.default_rng(seed)
    spans = [S(0, 2, "A"), S(1, 2, "B"), S(3, 5, "A")]
    return AnnotatedSentence(Sentence(f"s{seed}", [f"t{i}" for i in range(n)], rng.normal(size=(n, 5))), spans)


def tiny(**kw):
    base = dict(epochs=1, batch_size=4, layers=1, hidden=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_memorize_one_sentence():
    a = sample()
    params, report = train([a], [], tiny(epochs=200, batch_size=1, lr=1e-2, layers=2, hidden=64))
    assert report.epoch_loss[-1] < 0.01
    gold = linearize(a.spans, len(a))
    assert sequence_loss(a.sentence, gold, params)[0] < 0.05
    assert greedy_decode(a.sentence, params) == gold
    assert set(predict_spans(a.sentence, params)) == set(a.spans)
    assert report.epoch_loss[-1] < report.epoch_loss[0]


def test_zero_learning_rate_keeps_params():
    corpus = [sample(i) for i in range(4)]
    cfg = tiny(lr=0.0, epochs=2)
    init = build_model(corpus, [], cfg, 11)
    trained, _ = train(corpus, [], cfg, params=init.copy())
    for k, v in init.arrays.items():
        assert v.tobytes() == trained[k].tobytes()


def test_small_step_lowers_loss():
    # No tied spans, so the linearization does not depend on the seed.
    corpus = [sample(i) for i in range(4)]
    cfg = tiny(lr=1e-4, batch_size=4)
    init = build_model(corpus, [], cfg, 5)

    def total(p):
        return sum(sequence_loss(a.sentence, linearize(a.spans, len(a)), p)[0] for a in corpus)

    trained, _ = train(corpus, [], cfg, params=init.copy())
    assert total(trained) < total(init)


def test_same_seed_same_run():
    corpus = [sample(i) for i in range(6)]
    dev = [sample(10)]
    a = train(corpus, dev, tiny(epochs=3, batch_size=2))
    b = train(corpus, dev, tiny(epochs=3, batch_size=2))
    assert a[1].epoch_loss == b[1].epoch_loss and a[1].dev == b[1].dev
    for k in a[0].arrays:
        np.testing.assert_array_equal(a[0][k], b[0][k])


def test_learned_embeddings_move():
    corpus = [AnnotatedSentence(Sentence("x", ["a", "b", "c"]), [S(0, 2, "A")])]
    params, _ = train(corpus, [], tiny(epochs=3, batch_size=1, embed_dim=4))
    start = build_model(corpus, [], tiny(embed_dim=4), 0)
    assert params["tok_emb"].shape == start["tok_emb"].shape
    assert not np.allclose(params["tok_emb"][1:], 0.0)


def test_divergence_is_reported():
    corpus = [sample(0)]
    cfg = tiny()
    p = build_model(corpus, [], cfg, 0)
    p.arrays["start"][...] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(corpus, [], cfg, params=p)


def test_scheme_disagreement():
    corpus = [sample(0)]
    p = build_model(corpus, [], tiny(scheme="copy"), 0)
    with pytest.raises(ValueError):
        train(corpus, [], tiny(), params=p)


def test_time_budget_stops_after_one_epoch():
    _, report = train([sample(0)], [sample(1)], tiny(epochs=50, time_budget=0.0))
    assert len(report.epoch_loss) == 1 and report.best_epoch == 1


def test_checkpoint_written(tmp_path):
    from copynext.checkpoint import load_checkpoint
    path = tmp_path / "m.ckpt"
    params, report = train([sample(0)], [sample(1)], tiny(epochs=2), checkpoint=path)
    assert report.best_checkpoint == str(path)
    loaded = load_checkpoint(path)
    for k in params.arrays:
        np.testing.assert_array_equal(params[k], loaded[k])


class TestOptimizer:
    def test_clip(self):
        g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
        assert math.sqrt((g["a"] ** 2).sum() + (g["b"] ** 2).sum()) == pytest.approx(1.0)
        g = {"a": np.array([0.3])}
        clip_global_norm(g, 1.0)
        assert g["a"][0] == 0.3

    def test_adam_first_step(self):
        p = build_model([sample(0)], [], tiny(), 0)
        before = p.copy()
        grads = {k: np.full_like(v, 2.0) for k, v in p.arrays.items()}
        grads["start"][0] = -0.5
        Adam(p, 0.01).step(p, grads)
        np.testing.assert_allclose(p["W_C"], before["W_C"] - 0.01, atol=1e-9)
        assert p["start"][0] == pytest.approx(before["start"][0] + 0.01, abs=1e-9)

    def test_batches_partition(self):
        rng = np.random.default_rng(0)
        lengths = rng.integers(1, 30, size=103)
        batches = _batches(lengths, 8, rng)
        flat = np.concatenate(batches)
        assert sorted(flat.tolist()) == list(range(103))
        assert max(len(b) for b in batches) == 8
