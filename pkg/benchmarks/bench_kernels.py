"""Compare the numba and numpy backends.

Times the raw LSTM kernels at a few sizes, then a full training step
(forward + backward) and a greedy decode through the public API.

    python benchmarks/bench_kernels.py [--repeats 20] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from copynext import kernels
from copynext.corpus import LabelSet, Sentence
from copynext.evaluation import gen_synthetic
from copynext.inference import greedy_decode
from copynext.linearize import encode_sequence, linearize
from copynext.model import init_params, loss_and_grads


def best_of(fn, repeats):
    fn()  # warm up (and compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_rows(repeats):
    rng = np.random.default_rng(0)
    for T, H in [(10, 16), (50, 32), (200, 64)]:
        xp = rng.normal(size=(T, 4 * H))
        U = rng.normal(scale=0.1, size=(4 * H, H))
        dh = rng.normal(size=(T, H))
        for name, suffix in (("numpy", "np"), ("numba", "nb")):
            fwd = getattr(kernels, "lstm_forward_" + suffix)
            bwd = getattr(kernels, "lstm_backward_" + suffix)
            out = fwd(xp, U)
            yield (f"lstm_forward T={T} H={H}", name, best_of(lambda: fwd(xp, U), repeats))
            yield (f"lstm_backward T={T} H={H}", name, best_of(lambda: bwd(dh, *out, U), repeats))


def model_rows(repeats):
    labels = LabelSet(["LOC", "NUM", "ORG", "PER"])
    rng = np.random.default_rng(1)
    a = max(gen_synthetic(n_sentences=50, seed=3, max_len=40), key=len)
    n = len(a)
    X = rng.normal(size=(n, 32))
    sent = Sentence(a.id, a.tokens, X)
    p = init_params(2, 64, 32, labels, seed=0)
    codes = encode_sequence(linearize(a.spans, n), n, labels)
    for name in ("numpy", "numba"):
        kernels.set_backend(name)
        yield (f"loss_and_grads N={n} D=64 J=2", name, best_of(lambda: loss_and_grads(p, X, codes), repeats))
        yield (f"greedy_decode N={n} D=64 J=2", name, best_of(lambda: greedy_decode(sent, p), repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    old = kernels.backend()
    rows = list(kernel_rows(args.repeats)) + list(model_rows(args.repeats))
    kernels.set_backend(old)

    by_case = {}
    for case, name, secs in rows:
        by_case.setdefault(case, {})[name] = secs
    print(f"{'case':<36}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for case, t in by_case.items():
        print(f"{case:<36}{t['numpy'] * 1e3:11.4f}{t['numba'] * 1e3:11.4f}{t['numpy'] / t['numba']:8.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "backend", "seconds"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
