"""BiLSTM encoder, LSTM decoder and the pointer/label/CopyNext decision head.

Everything is float64 numpy.  Gradients are hand-derived; the recurrent
loops live in :mod:`copynext.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .corpus import LabelSet, Sentence, Vocab
from .linearize import CopyNext, Decision, Label, Point, Scheme, encode_sequence


class ConfigurationError(ValueError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TransducerParams:
    """All learnable arrays plus the metadata needed to rebuild the model.

    Array names: ``tok_emb`` (only with a vocabulary), ``enc.{j}.{fwd,bwd}.{W,U,b}``,
    ``dec.{j}.{W,U,b}``, ``label_emb``, ``W_L``, ``W_C``, ``start``.
    """

    arrays: dict[str, np.ndarray]
    layers: int
    hidden: int
    input_dim: int
    labels: LabelSet
    scheme: Scheme = Scheme.COPYNEXT
    vocab: Vocab | None = None
    seed: int = 0
    dropout: float = 0.0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def copy(self) -> "TransducerParams":
        return TransducerParams({k: v.copy() for k, v in self.arrays.items()}, self.layers,
                                self.hidden, self.input_dim, self.labels, self.scheme,
                                self.vocab, self.seed, self.dropout, dict(self.meta))

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_params(layers: int, hidden: int, input_dim: int, labels: LabelSet,
                scheme: Scheme = Scheme.COPYNEXT, vocab: Vocab | None = None,
                seed: int = 0, dropout: float = 0.0) -> TransducerParams:
    if hidden % 2 or hidden < 2:
        raise ConfigurationError(f"hidden size must be even and positive, got {hidden}")
    if layers < 1 or input_dim < 1:
        raise ConfigurationError("layers and input_dim must be positive")
    rng = np.random.default_rng(seed)
    D, h = hidden, hidden // 2
    a: dict[str, np.ndarray] = {}

    def lstm(prefix, n_in, n_hid):
        a[f"{prefix}.W"] = rng.uniform(-0.1, 0.1, (4 * n_hid, n_in))
        a[f"{prefix}.U"] = rng.uniform(-0.1, 0.1, (4 * n_hid, n_hid))
        a[f"{prefix}.b"] = np.zeros(4 * n_hid)

    if vocab is not None:
        a["tok_emb"] = rng.normal(0.0, 0.02, (len(vocab), input_dim))
    for j in range(layers):
        for direction in ("fwd", "bwd"):
            lstm(f"enc.{j}.{direction}", input_dim if j == 0 else D, h)
    for j in range(layers):
        lstm(f"dec.{j}", D, D)
    a["label_emb"] = rng.normal(0.0, 0.02, (len(labels), D))
    a["W_L"] = rng.normal(0.0, 0.02, (D, len(labels)))
    a["W_C"] = rng.normal(0.0, 0.02, (D, 1))
    a["start"] = rng.normal(0.0, 0.02, D)
    return TransducerParams(a, layers, hidden, input_dim, labels, Scheme.parse(scheme),
                            vocab, seed, dropout)


# ------------------------------------------------------------------ encoder

def input_vectors(sent: Sentence, params: TransducerParams) -> tuple[np.ndarray, np.ndarray | None]:
    """Encoder inputs for a sentence and, under learned embeddings, the token ids."""
    if "tok_emb" in params.arrays:
        ids = params.vocab.ids(sent.tokens)
        return params["tok_emb"][ids], ids
    if sent.vectors is None:
        raise ConfigurationError(f"sentence {sent.id!r} has no vectors and the model has no vocabulary")
    if sent.vectors.shape[1] != params.input_dim:
        raise ConfigurationError(
            f"sentence {sent.id!r}: vector dimension {sent.vectors.shape[1]} "
            f"does not match model input size {params.input_dim}"
        )
    return sent.vectors, None


def _run_lstm(x, W, U, b):
    xp = np.ascontiguousarray(x @ W.T + b)
    return kernels.lstm_forward(xp, U)


def _encode(params: TransducerParams, X: np.ndarray):
    caches = []
    inp = X
    for j in range(params.layers):
        fwd = _run_lstm(inp, params[f"enc.{j}.fwd.W"], params[f"enc.{j}.fwd.U"], params[f"enc.{j}.fwd.b"])
        rev = np.ascontiguousarray(inp[::-1])
        bwd = _run_lstm(rev, params[f"enc.{j}.bwd.W"], params[f"enc.{j}.bwd.U"], params[f"enc.{j}.bwd.b"])
        out = np.concatenate([fwd[0], bwd[0][::-1]], axis=1)
        caches.append((inp, rev, fwd, bwd))
        inp = out
    return inp, caches


def _encode_backward(params, caches, dE, grads):
    h = params.hidden // 2
    d = dE
    for j in range(params.layers - 1, -1, -1):
        inp, rev, fwd, bwd = caches[j]
        dinp = np.zeros_like(inp)
        for direction, x, cache, dh in (("fwd", inp, fwd, d[:, :h]),
                                        ("bwd", rev, bwd, d[::-1, h:])):
            p = f"enc.{j}.{direction}"
            hs, cs, acts = cache
            dg, dU = kernels.lstm_backward(np.ascontiguousarray(dh), hs, cs, acts, params[f"{p}.U"])
            grads[f"{p}.W"] += dg.T @ x
            grads[f"{p}.U"] += dU
            grads[f"{p}.b"] += dg.sum(axis=0)
            dx = dg @ params[f"{p}.W"]
            dinp += dx if direction == "fwd" else dx[::-1]
        d = dinp
    return d


def encode(sent: Sentence, params: TransducerParams) -> np.ndarray:
    """Last-layer encoder states, shape ``(N, D)``: ``[forward; backward]`` per token."""
    X, _ = input_vectors(sent, params)
    return _encode(params, X)[0]


# ------------------------------------------------------------------ decoder

class DecoderState(NamedTuple):
    h: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]


class DecisionLogitsAndProbs(NamedTuple):
    s: np.ndarray
    l: np.ndarray  # noqa: E741
    c: np.ndarray
    y: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return np.concatenate([self.s, self.l, self.c])


def initial_decoder_state(params: TransducerParams) -> DecoderState:
    z = tuple(np.zeros(params.hidden) for _ in range(params.layers))
    return DecoderState(z, z)


def decoder_input(prev: Decision | None, enc: np.ndarray, params: TransducerParams,
                  frontier: int | None = None) -> np.ndarray:
    """Vector fed to the decoder after ``prev`` (``None`` means the start step).

    For CopyNext, ``frontier`` is the token index of the previous decoder input.
    """
    if prev is None:
        return params["start"]
    if isinstance(prev, Point):
        return enc[prev.index]
    if isinstance(prev, Label):
        return params["label_emb"][params.labels.index(prev.label)]
    if isinstance(prev, CopyNext):
        if frontier is None:
            raise ValueError("CopyNext input needs the previous frontier")
        nxt = frontier - 1 if params.scheme is Scheme.COPYPREV else frontier + 1
        if not 0 <= nxt < enc.shape[0]:
            raise ValueError(f"CopyNext from {frontier} leaves the sentence")
        return enc[nxt]
    raise TypeError(f"not a decision: {prev!r}")


def head(d: np.ndarray, enc: np.ndarray, params: TransducerParams) -> DecisionLogitsAndProbs:
    s = enc @ d
    l = d @ params["W_L"]  # noqa: E741
    c = d @ params["W_C"]
    z = np.concatenate([s, l, c])
    y = np.exp(z - logsumexp(z))
    return DecisionLogitsAndProbs(s, l, c, y)


def decode_step(state: DecoderState, x: np.ndarray, enc: np.ndarray,
                params: TransducerParams) -> tuple[DecoderState, DecisionLogitsAndProbs]:
    hs, cs = [], []
    for j in range(params.layers):
        p = f"dec.{j}"
        xp = params[f"{p}.W"] @ x + params[f"{p}.b"]
        h, c = kernels.lstm_cell(xp, state.h[j], state.c[j], params[f"{p}.U"])
        hs.append(h)
        cs.append(c)
        x = h
    return DecoderState(tuple(hs), tuple(cs)), head(x, enc, params)


def masked_log_prob(probs: DecisionLogitsAndProbs, mask: np.ndarray, code: int) -> float:
    """log of the probability of ``code`` renormalized over the legal entries."""
    if not mask[code]:
        raise ValueError(f"decision {code} is masked out")
    z = probs.logits
    return float(z[code] - logsumexp(z[mask]))


# --------------------------------------------------------------- training

def _teacher_inputs(codes: np.ndarray, n: int, n_labels: int, scheme: Scheme):
    """Source of each decoder input: (kind, index) with kind 0=start, 1=encoder, 2=label."""
    T = len(codes)
    kind = np.zeros(T, dtype=np.int64)
    idx = np.zeros(T, dtype=np.int64)
    step = -1 if scheme is Scheme.COPYPREV else 1
    frontier = None
    for t in range(T - 1):
        g = int(codes[t])
        if g < n:
            frontier = g
            kind[t + 1], idx[t + 1] = 1, g
        elif g == n + n_labels:
            frontier += step
            kind[t + 1], idx[t + 1] = 1, frontier
        else:
            frontier = None
            kind[t + 1], idx[t + 1] = 2, g - n
    return kind, idx


def loss_and_grads(params: TransducerParams, X: np.ndarray, codes: Sequence[int],
                   ids: np.ndarray | None = None, rng: np.random.Generator | None = None,
                   need_grads: bool = True):
    """Summed cross-entropy of a gold code sequence under teacher forcing.

    ``rng`` enables dropout (at ``params.dropout``) on encoder inputs and outputs.
    """
    codes = np.asarray(codes, dtype=np.int64)
    n, L, D = X.shape[0], params.n_labels, params.hidden
    T = len(codes)
    p_drop = params.dropout if rng is not None else 0.0
    m_in = m_out = None
    if p_drop > 0:
        keep = 1.0 - p_drop
        m_in = (rng.random(X.shape) < keep) / keep
        X = X * m_in
    E, enc_caches = _encode(params, X)
    if p_drop > 0:
        m_out = (rng.random(E.shape) < keep) / keep
        E = E * m_out

    kind, idx = _teacher_inputs(codes, n, L, params.scheme)
    Xd = np.empty((T, D))
    Xd[kind == 0] = params["start"]
    Xd[kind == 1] = E[idx[kind == 1]]
    Xd[kind == 2] = params["label_emb"][idx[kind == 2]]

    dec_caches = []
    x = Xd
    for j in range(params.layers):
        cache = _run_lstm(x, params[f"dec.{j}.W"], params[f"dec.{j}.U"], params[f"dec.{j}.b"])
        dec_caches.append((x, cache))
        x = cache[0]
    Dst = x

    logits = np.concatenate([Dst @ E.T, Dst @ params["W_L"], Dst @ params["W_C"]], axis=1)
    logz = logsumexp(logits, axis=1)
    picked = logits[np.arange(T), codes] - logz
    if not np.all(np.isfinite(picked)):
        bad = int(np.flatnonzero(~np.isfinite(picked))[0])
        raise NumericError(bad, "non-finite log-probability")
    loss = float(-picked.sum())
    if not need_grads:
        return loss, None

    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    dlog = np.exp(logits - logz[:, None])
    dlog[np.arange(T), codes] -= 1.0
    dS, dLab, dC = dlog[:, :n], dlog[:, n:n + L], dlog[:, n + L:]
    dDst = dS @ E + dLab @ params["W_L"].T + dC @ params["W_C"].T
    dE = dS.T @ Dst
    grads["W_L"] += Dst.T @ dLab
    grads["W_C"] += Dst.T @ dC

    d = dDst
    for j in range(params.layers - 1, -1, -1):
        p = f"dec.{j}"
        xin, (hs, cs, acts) = dec_caches[j]
        dg, dU = kernels.lstm_backward(np.ascontiguousarray(d), hs, cs, acts, params[f"{p}.U"])
        grads[f"{p}.W"] += dg.T @ xin
        grads[f"{p}.U"] += dU
        grads[f"{p}.b"] += dg.sum(axis=0)
        d = dg @ params[f"{p}.W"]
    dXd = d
    grads["start"] += dXd[kind == 0].sum(axis=0)
    np.add.at(dE, idx[kind == 1], dXd[kind == 1])
    np.add.at(grads["label_emb"], idx[kind == 2], dXd[kind == 2])

    if m_out is not None:
        dE = dE * m_out
    dX = _encode_backward(params, enc_caches, dE, grads)
    if m_in is not None:
        dX = dX * m_in
    if ids is not None:
        np.add.at(grads["tok_emb"], ids, dX)
    return loss, grads


def sequence_loss(sent: Sentence, gold: Sequence[Decision], params: TransducerParams):
    """Teacher-forced ``sum_t -log y_t[gold_t]`` and its gradient dict."""
    X, ids = input_vectors(sent, params)
    codes = encode_sequence(gold, len(sent), params.labels)
    return loss_and_grads(params, X, codes, ids)
