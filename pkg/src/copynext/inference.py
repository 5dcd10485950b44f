"""Mask-constrained greedy and beam decoding."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .automaton import AutomatonState, Phase, initial_state, legal_codes, step_code
from .corpus import LabeledSpan, Sentence
from .linearize import (Decision, Scheme, decode_sequence, delinearize, encode_sequence,
                        format_sequence)
from .model import DecoderState, TransducerParams, input_vectors, _encode


class SchemeMismatch(ValueError):
    pass


@dataclass
class DecodeConfig:
    beam: int = 1
    max_len: int | None = None  # None -> 8 * N
    scheme: Scheme | None = None  # None -> whatever the model was trained with

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.scheme is not None:
            self.scheme = Scheme.parse(self.scheme)

    def length_limit(self, n: int) -> int:
        return self.max_len if self.max_len is not None else 8 * n


class StepState(NamedTuple):
    dec: DecoderState
    auto: AutomatonState

    @property
    def top(self) -> np.ndarray:
        return self.dec.h[-1]


class ModelStepper:
    """One sentence's decoding context.

    Layer-0 input projections are precomputed for every encoder state and
    label embedding, so a decoder step is a lookup plus the recurrences.
    Only legal decisions are scored; the pointer range is touched only at
    span boundaries (and for the single copy-only successor).
    """

    def __init__(self, sent: Sentence, params: TransducerParams):
        self.params = params
        X, _ = input_vectors(sent, params)
        self.enc = _encode(params, X)[0]
        self.n = self.enc.shape[0]
        self.n_labels = params.n_labels
        self.eos = self.n + params.labels.eos_index
        W0, b0 = params["dec.0.W"], params["dec.0.b"]
        self.proj_enc = self.enc @ W0.T + b0
        self.proj_lab = params["label_emb"] @ W0.T + b0
        self.proj_start = W0 @ params["start"] + b0
        self.layers = [(params[f"dec.{j}.W"], params[f"dec.{j}.U"], params[f"dec.{j}.b"])
                       for j in range(params.layers)]
        self.W_L = params["W_L"]
        self.w_c = params["W_C"][:, 0]
        self.scheme = params.scheme

    def _run(self, xp0: np.ndarray, dec: DecoderState) -> DecoderState:
        hs, cs = [], []
        xp = xp0
        for j, (W, U, b) in enumerate(self.layers):
            if j:
                xp = W @ hs[-1] + b
            h, c = kernels.lstm_cell(xp, dec.h[j], dec.c[j], U)
            hs.append(h)
            cs.append(c)
        return DecoderState(tuple(hs), tuple(cs))

    def initial(self) -> StepState:
        z = tuple(np.zeros(self.params.hidden) for _ in self.layers)
        return StepState(self._run(self.proj_start, DecoderState(z, z)), initial_state(self.scheme))

    def candidates(self, st: StepState) -> tuple[np.ndarray, np.ndarray]:
        """Legal codes (ascending) and their unnormalized scores."""
        d = st.top
        auto = st.auto
        codes = legal_codes(auto, self.n, self.n_labels)
        if auto.phase is Phase.BOUNDARY:
            z = np.append(self.enc @ d, d @ self.W_L[:, self.eos - self.n])
            return codes, z
        lab = d @ self.W_L
        parts = []
        if self.scheme is Scheme.COPY:
            if codes[0] < self.n:
                parts.append(np.array([self.enc[codes[0]] @ d]))
            parts.append(np.delete(lab, self.eos - self.n))
        else:
            parts.append(np.delete(lab, self.eos - self.n))
            if codes[-1] == self.n + self.n_labels:
                parts.append(np.array([d @ self.w_c]))
        return codes, np.concatenate(parts)

    def advance(self, st: StepState, code: int) -> StepState:
        auto = step_code(st.auto, code, self.n, self.n_labels)
        if code < self.n or code == self.n + self.n_labels:
            xp = self.proj_enc[auto.frontier]
        else:
            xp = self.proj_lab[code - self.n]
        return StepState(self._run(xp, st.dec), auto)

    def is_label(self, code: int) -> bool:
        return self.n <= code < self.n + self.n_labels


def _repair(codes: list[int], stepper) -> list[int]:
    """Drop a trailing unfinished span and close the sequence with EOS."""
    keep = len(codes)
    while keep and not stepper.is_label(codes[keep - 1]):
        keep -= 1
    return codes[:keep] + [stepper.eos]


def _replay(stepper, codes: Sequence[int]) -> list[float]:
    """Per-step masked log-probabilities of ``codes`` (all assumed legal)."""
    st = stepper.initial()
    out = []
    for t, code in enumerate(codes):
        cand, z = stepper.candidates(st)
        hit = np.flatnonzero(cand == code)
        if not hit.size:
            raise ValueError(f"decision {code} at step {t} is illegal")
        out.append(float(z[hit[0]] - logsumexp(z)))
        if t + 1 < len(codes):
            st = stepper.advance(st, code)
    return out


def _truncated(codes: list[int], stepper) -> "DecodeResult":
    codes = _repair(codes, stepper)
    logps = _replay(stepper, codes)
    return DecodeResult(codes, float(sum(logps)), True, logps)


@dataclass
class DecodeResult:
    codes: list[int]
    score: float
    truncated: bool = False
    logps: list[float] = field(default_factory=list)


def greedy_search(stepper, max_len: int) -> DecodeResult:
    st = stepper.initial()
    codes: list[int] = []
    logps: list[float] = []
    for _ in range(max_len):
        cand, z = stepper.candidates(st)
        k = int(np.argmax(z))
        code = int(cand[k])
        codes.append(code)
        logps.append(float(z[k] - logsumexp(z)))
        if code == stepper.eos:
            return DecodeResult(codes, float(sum(logps)), False, logps)
        st = stepper.advance(st, code)
    return _truncated(codes, stepper)


@dataclass
class Hypothesis:
    codes: list[int]
    state: object
    score: float
    logps: list[float]


def beam_search(stepper, beam: int, max_len: int) -> DecodeResult:
    """Beam search over mask-renormalized log-probabilities.

    Candidates rank by cumulative score, then raw logit, then parent rank,
    then code; with ``beam == 1`` this is exactly the greedy argmax.
    """
    live = [Hypothesis([], stepper.initial(), 0.0, [])]
    finished: list[DecodeResult] = []
    for _ in range(max_len):
        pool = []
        for rank, hyp in enumerate(live):
            cand, z = stepper.candidates(hyp.state)
            lp = z - logsumexp(z)
            order = np.lexsort((cand, -z))[:beam]
            for k in order:
                pool.append((-(hyp.score + lp[k]), -z[k], rank, int(cand[k]), float(lp[k])))
        pool.sort()
        nxt = []
        for neg_score, _, rank, code, lp in pool[:beam]:
            parent = live[rank]
            codes = parent.codes + [code]
            logps = parent.logps + [lp]
            if code == stepper.eos:
                finished.append(DecodeResult(codes, -neg_score, False, logps))
            else:
                nxt.append(Hypothesis(codes, stepper.advance(parent.state, code), -neg_score, logps))
        live = nxt
        if not live:
            break
        # Extensions only lower scores, so a finished hypothesis at least as
        # good as every live one cannot be beaten.
        if finished and max(f.score for f in finished) >= live[0].score:
            live = []
            break
    for hyp in live:
        finished.append(_truncated(hyp.codes, stepper))
    if beam > 1:
        # The greedy path may fall off the beam early; keeping its completion
        # as a candidate makes the result never score below greedy.
        finished.append(greedy_search(stepper, max_len))
    best = finished[0]
    for f in finished[1:]:
        if (not f.truncated, f.score) > (not best.truncated, best.score):
            best = f
    return best


# ------------------------------------------------------------ public API

def _check_scheme(params: TransducerParams, config: DecodeConfig) -> None:
    if config.scheme is not None and config.scheme is not params.scheme:
        raise SchemeMismatch(
            f"model was trained with scheme {params.scheme.value!r}, "
            f"decoding requested {config.scheme.value!r}"
        )


def decode(sent: Sentence, params: TransducerParams,
           config: DecodeConfig | None = None) -> DecodeResult:
    config = config or DecodeConfig()
    _check_scheme(params, config)
    stepper = ModelStepper(sent, params)
    limit = config.length_limit(len(sent))
    if config.beam == 1:
        return greedy_search(stepper, limit)
    return beam_search(stepper, config.beam, limit)


def greedy_decode(sent: Sentence, params: TransducerParams,
                  config: DecodeConfig | None = None) -> list[Decision]:
    config = config or DecodeConfig()
    _check_scheme(params, config)
    res = greedy_search(ModelStepper(sent, params), config.length_limit(len(sent)))
    return decode_sequence(res.codes, len(sent), params.labels)


def beam_decode(sent: Sentence, params: TransducerParams,
                config: DecodeConfig | None = None) -> list[Decision]:
    config = config or DecodeConfig(beam=10)
    _check_scheme(params, config)
    res = beam_search(ModelStepper(sent, params), config.beam, config.length_limit(len(sent)))
    return decode_sequence(res.codes, len(sent), params.labels)


def predict_spans(sent: Sentence, params: TransducerParams,
                  config: DecodeConfig | None = None) -> list[LabeledSpan]:
    res = decode(sent, params, config)
    seq = decode_sequence(res.codes, len(sent), params.labels)
    return delinearize(seq, len(sent), params.scheme)


def sequence_score(sent: Sentence, params: TransducerParams, seq: Sequence[Decision]) -> float:
    """Sum of mask-renormalized log-probabilities of ``seq`` under the model."""
    stepper = ModelStepper(sent, params)
    return float(sum(_replay(stepper, encode_sequence(seq, len(sent), params.labels))))


# ----------------------------------------------------- corpus prediction

def _predict_record(sent: Sentence, params: TransducerParams, config: DecodeConfig) -> dict:
    t0 = time.perf_counter()
    res = decode(sent, params, config)
    seq = decode_sequence(res.codes, len(sent), params.labels)
    spans = delinearize(seq, len(sent), params.scheme)
    ms = (time.perf_counter() - t0) * 1000.0
    return {"id": sent.id, "spans": [sp.as_list() for sp in spans],
            "sequence": format_sequence(seq), "decode_ms": ms}


_worker_ctx: tuple | None = None


def _worker_init(params, config, backend):
    global _worker_ctx
    kernels.set_backend(backend)
    _worker_ctx = (params, config)


def _worker_predict(sent):
    return _predict_record(sent, *_worker_ctx)


def predict_corpus(sentences: Sequence[Sentence], params: TransducerParams,
                   config: DecodeConfig | None = None, workers: int | None = None) -> list[dict]:
    """Prediction records in input order; ``workers > 1`` fans out over processes."""
    config = config or DecodeConfig()
    _check_scheme(params, config)
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(sentences) < 2:
        return [_predict_record(s, params, config) for s in sentences]
    with ProcessPoolExecutor(workers, initializer=_worker_init,
                             initargs=(params, config, kernels.backend())) as pool:
        return list(pool.map(_worker_predict, sentences, chunksize=16))
