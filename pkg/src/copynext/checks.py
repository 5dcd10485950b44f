"""Self-checks shared by the test suite and ``copynext selfcheck``.

Both are oracles against the hand-written code: the automaton is compared
with the delinearizer on every short decision string, and backprop is
compared with central finite differences on every parameter coordinate.
"""

from __future__ import annotations

import itertools

import numpy as np

from .automaton import accepts
from .corpus import LabelSet
from .linearize import Scheme, StructureError, decode_decision, delinearize
from .model import TransducerParams, init_params, loss_and_grads


def relative_error(a, b, floor: float = 1e-5):
    """|a - b| / max(|a|, |b|, floor).

    The floor keeps near-zero coordinates from being judged on
    finite-difference round-off alone.
    """
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_params(layers, hidden, input_dim, labels, seed=0, scale=0.3,
                  scheme=Scheme.COPYNEXT, vocab=None) -> TransducerParams:
    """Parameters with every entry (biases included) drawn from N(0, scale)."""
    p = init_params(layers, hidden, input_dim, labels, scheme, vocab, seed)
    rng = np.random.default_rng(seed + 1000)
    for k in p.arrays:
        p.arrays[k] = rng.normal(0.0, scale, p.arrays[k].shape)
    return p


def finite_difference_check(params: TransducerParams, X, codes, ids=None,
                            dropout_seed=None, h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients."""

    def run(need):
        x = params["tok_emb"][ids] if ids is not None else X
        rng = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
        return loss_and_grads(params, x, codes, ids, rng, need_grads=need)

    _, grads = run(True)
    worst = 0.0
    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = run(False)[0]
            flat[i] = old - h
            down = run(False)[0]
            flat[i] = old
            numeric[i] = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(grads[name].reshape(-1), numeric).max()))
    return worst


def _parses(seq, n, scheme) -> bool:
    try:
        delinearize(seq, n, scheme)
        return True
    except StructureError:
        return False


def automaton_discrepancies(n: int, labels: LabelSet, max_len: int,
                            scheme: Scheme = Scheme.COPYNEXT) -> tuple[int, int]:
    """Enumerate every decision string up to ``max_len``.

    Returns (strings checked, strings where the automaton and the
    delinearizer disagree).
    """
    alphabet = [decode_decision(c, n, labels) for c in range(n + len(labels) + 1)]
    checked = bad = 0
    for length in range(max_len + 1):
        for seq in itertools.product(alphabet, repeat=length):
            checked += 1
            if accepts(seq, n, scheme) != _parses(seq, n, scheme):
                bad += 1
    return checked, bad
