"""Well-formedness state machine over decisions and its legality masks.

Two phases: ``BOUNDARY`` (start, or just after a label) and ``IN_SPAN``
(a span is open and ``frontier`` is the last copied token).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EOS
from .linearize import CopyNext, Decision, Label, Point, Scheme


class Phase(enum.Enum):
    BOUNDARY = 0
    IN_SPAN = 1


class TransitionError(ValueError):
    pass


@dataclass(frozen=True)
class AutomatonState:
    phase: Phase
    frontier: int | None
    scheme: Scheme
    done: bool = False

    def __post_init__(self):
        if (self.frontier is None) != (self.phase is Phase.BOUNDARY):
            raise ValueError("frontier must be set exactly when a span is open")


def initial_state(scheme: Scheme = Scheme.COPYNEXT) -> AutomatonState:
    return AutomatonState(Phase.BOUNDARY, None, Scheme.parse(scheme))


def next_frontier(state: AutomatonState) -> int:
    """Token a CN would copy from ``state`` (may fall outside the sentence)."""
    return state.frontier - 1 if state.scheme is Scheme.COPYPREV else state.frontier + 1


def legal_mask(state: AutomatonState, n: int, n_labels: int, eos_index: int = 0) -> np.ndarray:
    """Boolean mask over the ``n + n_labels + 1`` decision codes."""
    mask = np.zeros(n + n_labels + 1, dtype=bool)
    if state.done:
        return mask
    if state.phase is Phase.BOUNDARY:
        mask[:n] = True
        mask[n + eos_index] = True
        return mask
    mask[n:n + n_labels] = True
    mask[n + eos_index] = False
    j = state.frontier
    if state.scheme is Scheme.COPY:
        if j + 1 < n:
            mask[j + 1] = True
    elif 0 <= next_frontier(state) < n:
        mask[n + n_labels] = True
    return mask


def legal_codes(state: AutomatonState, n: int, n_labels: int, eos_index: int = 0) -> np.ndarray:
    """Ascending legal codes; same content as ``np.flatnonzero(legal_mask(...))``.

    Cheap in the open-span phase, which does not touch the pointer range
    except for the single copy-only successor.
    """
    if state.done:
        return np.empty(0, dtype=np.int64)
    if state.phase is Phase.BOUNDARY:
        return np.append(np.arange(n), n + eos_index)
    labels = [n + k for k in range(n_labels) if k != eos_index]
    j = state.frontier
    if state.scheme is Scheme.COPY:
        head = [j + 1] if j + 1 < n else []
        return np.array(head + labels, dtype=np.int64)
    tail = [n + n_labels] if 0 <= next_frontier(state) < n else []
    return np.array(labels + tail, dtype=np.int64)


def is_legal(state: AutomatonState, d: Decision, n: int) -> bool:
    if state.done:
        return False
    if state.phase is Phase.BOUNDARY:
        if isinstance(d, Point):
            return 0 <= d.index < n
        return isinstance(d, Label) and d.label == EOS
    if isinstance(d, Label):
        return d.label != EOS
    if state.scheme is Scheme.COPY:
        return isinstance(d, Point) and d.index == state.frontier + 1 and d.index < n
    return isinstance(d, CopyNext) and 0 <= next_frontier(state) < n


def step(state: AutomatonState, d: Decision, n: int) -> AutomatonState:
    if not is_legal(state, d, n):
        raise TransitionError(f"decision {d} is illegal in state {state} (n={n})")
    if isinstance(d, Point):
        return AutomatonState(Phase.IN_SPAN, d.index, state.scheme)
    if isinstance(d, CopyNext):
        return AutomatonState(Phase.IN_SPAN, next_frontier(state), state.scheme)
    return AutomatonState(Phase.BOUNDARY, None, state.scheme, done=d.label == EOS)


def step_code(state: AutomatonState, code: int, n: int, n_labels: int,
              eos_index: int = 0) -> AutomatonState:
    """``step`` over integer codes; the caller guarantees legality."""
    if code < n:
        return AutomatonState(Phase.IN_SPAN, int(code), state.scheme)
    if code == n + n_labels:
        return AutomatonState(Phase.IN_SPAN, next_frontier(state), state.scheme)
    return AutomatonState(Phase.BOUNDARY, None, state.scheme, done=code == n + eos_index)


def accepts(seq: Sequence[Decision], n: int, scheme: Scheme = Scheme.COPYNEXT) -> bool:
    state = initial_state(scheme)
    for d in seq:
        if not is_legal(state, d, n):
            return False
        state = step(state, d, n)
    return state.done
