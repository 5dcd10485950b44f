"""Teacher-forced training with Adam, gradient clipping and dev-F1 early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .automaton import accepts
from .checkpoint import save_checkpoint
from .corpus import AnnotatedSentence, LabelSet, Vocab
from .evaluation import score
from .inference import DecodeConfig, predict_spans
from .linearize import Scheme, encode_sequence, linearize
from .model import NumericError, TransducerParams, init_params, input_vectors, loss_and_grads

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0
    seed: int = 0
    scheme: Scheme = Scheme.COPYNEXT
    layers: int = 2
    hidden: int = 64
    embed_dim: int = 32  # only used with learned token embeddings
    dropout: float = 0.0
    patience: int = 5
    eval_every: int = 1
    time_budget: float | None = None  # seconds; stop after the epoch that crosses it
    target_f1: float | None = None  # stop as soon as dev F1 reaches it

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        for name in ("epochs", "batch_size", "layers", "hidden", "embed_dim", "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.clip <= 0:
            raise ValueError("lr must be >= 0 and clip > 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    dev: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = -1.0
    best_checkpoint: str | None = None

    def summary(self) -> str:
        rows = [f"epoch {i + 1:3d}  loss {l:.4f}  {s:6.1f}s"
                for i, (l, s) in enumerate(zip(self.epoch_loss, self.epoch_seconds))]
        rows += [f"dev@{e}: P {p:.4f} R {r:.4f} F1 {f:.4f}" for e, p, r, f in self.dev]
        rows.append(f"best epoch {self.best_epoch} dev F1 {self.best_f1:.4f}")
        return "\n".join(rows)


class Adam:
    def __init__(self, params: TransducerParams, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, params: TransducerParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params.arrays[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    # Sort by length with a random jitter so batches hold similar lengths but vary per epoch.
    keys = np.asarray(lengths) + rng.random(len(lengths))
    order = np.argsort(keys, kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(batches)
    return batches


def evaluate_f1(params: TransducerParams, dev: Sequence[AnnotatedSentence],
                config: DecodeConfig | None = None):
    pred = {a.id: predict_spans(a.sentence, params, config) for a in dev}
    return score(dev, pred)


def build_model(corpus: Sequence[AnnotatedSentence], dev: Sequence[AnnotatedSentence],
                config: TrainConfig, init_seed: int) -> TransducerParams:
    labels = LabelSet.from_corpus(list(corpus) + list(dev))
    vecs = corpus[0].sentence.vectors
    if vecs is not None:
        return init_params(config.layers, config.hidden, vecs.shape[1], labels, config.scheme,
                           None, init_seed, config.dropout)
    return init_params(config.layers, config.hidden, config.embed_dim, labels, config.scheme,
                       Vocab.from_corpus(corpus), init_seed, config.dropout)


def train(corpus: Sequence[AnnotatedSentence], dev: Sequence[AnnotatedSentence],
          config: TrainConfig | None = None, params: TransducerParams | None = None,
          checkpoint: str | Path | None = None) -> tuple[TransducerParams, TrainReport]:
    """Minimize per-decision cross-entropy; return the best-dev-F1 parameters.

    Without a dev set the final parameters are returned.
    """
    config = config or TrainConfig()
    if not corpus:
        raise ValueError("empty training corpus")
    ss = np.random.SeedSequence(config.seed)
    init_ss, shuffle_ss, tie_ss, drop_ss = ss.spawn(4)
    if params is None:
        params = build_model(corpus, dev, config, int(init_ss.generate_state(1)[0]))
    elif params.scheme is not config.scheme:
        raise ValueError("params and config disagree on the scheme")
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss) if config.dropout > 0 else None
    tie_base = int(tie_ss.generate_state(1)[0])

    # Only ids are cached under learned embeddings; the lookup must see updated rows.
    inputs = [input_vectors(a.sentence, params) for a in corpus]
    learned = "tok_emb" in params.arrays
    for a in corpus:
        seq = linearize(a.spans, len(a), config.scheme, tie_base)
        if not accepts(seq, len(a), config.scheme):
            raise ValueError(f"gold linearization of {a.id!r} is not well formed")
    lengths = [len(a) for a in corpus]

    opt = Adam(params, config.lr)
    report = TrainReport()
    best = params.copy()
    stale = 0
    started = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total_loss = 0.0
        total_dec = 0
        for b, batch in enumerate(_batches(lengths, config.batch_size, shuffle_rng)):
            grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            n_dec = 0
            batch_loss = 0.0
            for i in batch:
                a = corpus[i]
                seq = linearize(a.spans, len(a), config.scheme, tie_base + epoch * len(corpus) + int(i))
                codes = encode_sequence(seq, len(a), params.labels)
                X, ids = inputs[i]
                if learned:
                    X = params["tok_emb"][ids]
                try:
                    loss, g = loss_and_grads(params, X, codes, ids, drop_rng)
                except NumericError as exc:
                    raise TrainingDiverged(f"epoch {epoch} batch {b} sentence {a.id!r}: {exc}") from exc
                batch_loss += loss
                n_dec += len(codes)
                for k, v in g.items():
                    grads[k] += v
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"epoch {epoch} batch {b}: non-finite loss")
            for v in grads.values():
                v /= n_dec
            clip_global_norm(grads, config.clip)
            opt.step(params, grads)
            total_loss += batch_loss
            total_dec += n_dec
        report.epoch_loss.append(total_loss / total_dec)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d loss %.4f (%.1fs)", epoch, report.epoch_loss[-1], report.epoch_seconds[-1])

        over_budget = config.time_budget is not None and time.perf_counter() - started > config.time_budget
        if dev and (epoch % config.eval_every == 0 or epoch == config.epochs or over_budget):
            ev = evaluate_f1(params, dev)
            report.dev.append((epoch, ev.precision, ev.recall, ev.f1))
            log.info("dev P %.4f R %.4f F1 %.4f", ev.precision, ev.recall, ev.f1)
            if ev.f1 > report.best_f1:
                report.best_f1, report.best_epoch = ev.f1, epoch
                best = params.copy()
                stale = 0
                if checkpoint is not None:
                    save_checkpoint(best, checkpoint)
                    report.best_checkpoint = str(checkpoint)
            else:
                stale += 1
            if stale >= config.patience:
                break
            if config.target_f1 is not None and report.best_f1 >= config.target_f1:
                break
        if over_budget:
            break
    if not dev:
        best = params
        report.best_epoch = len(report.epoch_loss)
        if checkpoint is not None:
            save_checkpoint(best, checkpoint)
            report.best_checkpoint = str(checkpoint)
    return best, report
