"""LSTM recurrences: numba-compiled loops with a pure numpy fallback.

Input projections (``x @ W.T + b``) are computed by the caller for the
whole sequence at once; the kernels only run the recurrent part.  Gate
layout along the ``4H`` axis is ``[input, forget, cell, output]``.

The backend defaults to numba when it imports; set ``COPYNEXT_BACKEND=numpy``
to force the fallback, or call :func:`set_backend` at runtime.
"""

import math
import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


# ------------------------------------------------------------------ numpy

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(pre, H):
    act = np.empty_like(pre)
    act[..., :2 * H] = _sigmoid(pre[..., :2 * H])
    act[..., 2 * H:3 * H] = np.tanh(pre[..., 2 * H:3 * H])
    act[..., 3 * H:] = _sigmoid(pre[..., 3 * H:])
    return act


def lstm_forward_np(xproj, U):
    T, G = xproj.shape
    H = G // 4
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    acts = np.zeros((T, G))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        a = _activate(xproj[t] + U @ h, H)
        c = a[:H] * a[2 * H:3 * H] + a[H:2 * H] * c
        h = a[3 * H:] * np.tanh(c)
        acts[t] = a
        cs[t] = c
        hs[t] = h
    return hs, cs, acts


def lstm_backward_np(dhs, hs, cs, acts, U):
    T, H = hs.shape
    dgates = np.zeros((T, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    zero = np.zeros(H)
    for t in range(T - 1, -1, -1):
        a = acts[t]
        i, f, g, o = a[:H], a[H:2 * H], a[2 * H:3 * H], a[3 * H:]
        c_prev = cs[t - 1] if t > 0 else zero
        h_prev = hs[t - 1] if t > 0 else zero
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dg = dgates[t]
        dg[:H] = dc * g * i * (1.0 - i)
        dg[H:2 * H] = dc * c_prev * f * (1.0 - f)
        dg[2 * H:3 * H] = dc * i * (1.0 - g * g)
        dg[3 * H:] = dh * tc * o * (1.0 - o)
        dU += np.outer(dg, h_prev)
        dh_next = U.T @ dg
        dc_next = dc * f
    return dgates, dU


def lstm_cell_np(xp, h, c, U):
    H = h.shape[0]
    a = _activate(xp + U @ h, H)
    c2 = a[:H] * a[2 * H:3 * H] + a[H:2 * H] * c
    return a[3 * H:] * np.tanh(c2), c2


# ------------------------------------------------------------------ numba

# Reassociation lets the dot-product loops vectorize; NaN/inf handling is
# left strict so divergence is still detected downstream.
_FM = {"reassoc", "contract"}


@njit(cache=True, nogil=True)
def _sig(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


@njit(cache=True, nogil=True, fastmath=_FM)
def lstm_forward_nb(xproj, U):
    T, G = xproj.shape
    H = G // 4
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    acts = np.zeros((T, G))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        for k in range(G):
            s = xproj[t, k]
            for m in range(H):
                s += U[k, m] * h[m]
            acts[t, k] = s
        for m in range(H):
            i = _sig(acts[t, m])
            f = _sig(acts[t, H + m])
            g = math.tanh(acts[t, 2 * H + m])
            o = _sig(acts[t, 3 * H + m])
            acts[t, m] = i
            acts[t, H + m] = f
            acts[t, 2 * H + m] = g
            acts[t, 3 * H + m] = o
            c[m] = i * g + f * c[m]
            h[m] = o * math.tanh(c[m])
            cs[t, m] = c[m]
            hs[t, m] = h[m]
    return hs, cs, acts


@njit(cache=True, nogil=True, fastmath=_FM)
def lstm_backward_nb(dhs, hs, cs, acts, U):
    T, H = hs.shape
    G = 4 * H
    dgates = np.zeros((T, G))
    dU = np.zeros(U.shape)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        for m in range(H):
            i = acts[t, m]
            f = acts[t, H + m]
            g = acts[t, 2 * H + m]
            o = acts[t, 3 * H + m]
            c_prev = cs[t - 1, m] if t > 0 else 0.0
            tc = math.tanh(cs[t, m])
            dh = dhs[t, m] + dh_next[m]
            dc = dc_next[m] + dh * o * (1.0 - tc * tc)
            dgates[t, m] = dc * g * i * (1.0 - i)
            dgates[t, H + m] = dc * c_prev * f * (1.0 - f)
            dgates[t, 2 * H + m] = dc * i * (1.0 - g * g)
            dgates[t, 3 * H + m] = dh * tc * o * (1.0 - o)
            dc_next[m] = dc * f
        for m in range(H):
            dh_next[m] = 0.0
        for k in range(G):
            dgk = dgates[t, k]
            if t > 0:
                for m in range(H):
                    dU[k, m] += dgk * hs[t - 1, m]
            for m in range(H):
                dh_next[m] += U[k, m] * dgk
    return dgates, dU


@njit(cache=True, nogil=True, fastmath=_FM)
def lstm_cell_nb(xp, h, c, U):
    H = h.shape[0]
    pre = np.empty(4 * H)
    for k in range(4 * H):
        s = xp[k]
        for m in range(H):
            s += U[k, m] * h[m]
        pre[k] = s
    h2 = np.empty(H)
    c2 = np.empty(H)
    for m in range(H):
        i = _sig(pre[m])
        f = _sig(pre[H + m])
        g = math.tanh(pre[2 * H + m])
        o = _sig(pre[3 * H + m])
        c2[m] = i * g + f * c[m]
        h2[m] = o * math.tanh(c2[m])
    return h2, c2


# --------------------------------------------------------------- dispatch

_BACKENDS = {
    "numpy": (lstm_forward_np, lstm_backward_np, lstm_cell_np),
    "numba": (lstm_forward_nb, lstm_backward_nb, lstm_cell_nb),
}
_active = "numpy"


def set_backend(name: str) -> None:
    global _active, lstm_forward, lstm_backward, lstm_cell
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _active = name
    lstm_forward, lstm_backward, lstm_cell = _BACKENDS[name]


def backend() -> str:
    return _active


set_backend(os.environ.get("COPYNEXT_BACKEND", "numba" if HAVE_NUMBA else "numpy"))
