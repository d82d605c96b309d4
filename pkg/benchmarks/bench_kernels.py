"""Time the numba and numpy kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--atoms 2000] [--steps 5000]

numba timings exclude the first (compiling) call.  Results from the two
backends are compared before timing so a fast wrong kernel cannot win.
"""

import argparse
import time

import numpy as np

from condexp import ProbSpace, SigmaField, kernels
from condexp.operators import _field_tables


def best_of(fn, repeat):
    fn()  # warm-up, triggers compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def iterate_case(rng, n, K, steps):
    w = rng.random(n)
    P = ProbSpace(w / w.sum())
    fields = [SigmaField.from_labels(rng.integers(0, max(2, n // 8), n)) for _ in range(K)]
    labels, inv = _field_tables(fields, P)
    ks = rng.integers(0, K, steps).astype(np.int64)
    need = np.zeros(K, dtype=np.bool_)
    need[ks] = True
    x0 = rng.normal(size=n)

    def run(backend):
        bufs = (np.zeros(steps), np.zeros(steps), np.zeros(steps), np.zeros(steps),
                np.zeros((steps + 1, 4)), np.zeros(steps + 1), np.zeros((0, n)))
        return backend.iterate(x0, P.weights, np.asarray(P.positive), labels, inv, ks, need,
                               np.zeros(n), False, 0.0, K, False, *bufs)[2]
    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--atoms", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(a.seed)
    NP, NB = kernels.BACKENDS["numpy"], kernels.BACKENDS["numba"]
    n = a.atoms

    w = rng.random(n)
    w /= w.sum()
    x = rng.normal(size=n)
    g = SigmaField.from_labels(rng.integers(0, n // 10, n))
    lab = np.stack([SigmaField.from_labels(rng.integers(0, n // 3, n)).labels for _ in range(4)])
    words = rng.integers(0, 2**63, size=200_000, dtype=np.uint64) * np.uint64(2)
    run_it = iterate_case(rng, n, 4, a.steps)

    cases = {
        "block_average": lambda b: b.block_average(x, w, g.labels, g.n_blocks),
        "components": lambda b: b.components(lab, n),
        "extract_channel": lambda b: b.extract_channel(words, 64, 1),
        "iterate": run_it,
    }
    print(f"atoms={n} steps={a.steps} repeat={a.repeat} (best of)")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, fn in cases.items():
        ra, rb = fn(NP), fn(NB)
        if name == "components":
            ok = SigmaField.from_labels(ra) == SigmaField.from_labels(rb)
        else:
            ok = np.allclose(ra, rb, rtol=1e-12, atol=1e-12)
        if not ok:
            raise SystemExit(f"{name}: backends disagree")
        tn = best_of(lambda: fn(NP), a.repeat)
        tb = best_of(lambda: fn(NB), a.repeat)
        print(f"{name:<16}{tn * 1e3:>12.3f}{tb * 1e3:>12.3f}{tn / tb:>9.1f}x")


if __name__ == "__main__":
    main()
