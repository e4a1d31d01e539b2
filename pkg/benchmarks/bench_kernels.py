"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--banks 20] [--queries 20] [--repeat 3]

Retrieval is also timed against the unindexed brute-force ranking, which
scores every same-class candidate.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from factories import random_bank  # noqa: E402

from segsynth import kernels  # noqa: E402
from segsynth.finisher import harmonic_fill  # noqa: E402
from segsynth.retrieval import brute_force_rank, layout_queries, retrieve  # noqa: E402


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def retrieval_workload(n_banks, n_queries, seed):
    rng = np.random.default_rng(seed)
    work = []
    for _ in range(n_banks):
        bank, pairs = random_bank(rng, max_segments=500)
        qs = [q for _, lay, _ in pairs for q in layout_queries(lay, 4, 1)]
        pick = rng.choice(len(qs), size=min(n_queries, len(qs)), replace=False)
        work.append((bank, [qs[i] for i in pick]))
    return work


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--banks", type=int, default=20)
    ap.add_argument("--queries", type=int, default=20, help="queries per bank")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is timed")
    work = retrieval_workload(args.banks, args.queries, args.seed)
    n = sum(len(qs) for _, qs in work)
    print(f"retrieval: {n} queries over {len(work)} banks")
    for bank, qs in work:          # build the per-class indexes outside the timed region
        for q in qs:
            retrieve(q, bank)
    rows = []
    for name, mod in sorted(backends.items()):
        t = best_of(lambda: [retrieve(q, b, backend=mod) for b, qs in work for q in qs], args.repeat)
        rows.append((f"retrieve [{name}]", t))
    t = best_of(lambda: [brute_force_rank(q, b) for b, qs in work for q in qs], args.repeat)
    rows.append(("brute force", t))

    rng = np.random.default_rng(args.seed)
    img = rng.uniform(0, 255, size=(192, 256, 3))
    hole = np.zeros(img.shape[:2], bool)
    hole[40:150, 60:200] = True
    for name, mod in sorted(backends.items()):
        t = best_of(lambda: harmonic_fill(img, hole, tol=1e-4, backend=mod), args.repeat)
        rows.append((f"harmonic fill 192x256 [{name}]", t))

    color = rng.uniform(0, 255, size=(128, 128, 3))
    mask = (rng.random((128, 128)) < 0.7).astype(float)
    ys, xs = np.mgrid[0:256, 0:256] * 0.5
    for name, mod in sorted(backends.items()):
        t = best_of(lambda: mod.bilinear_sample(color, mask, xs, ys), args.repeat)
        rows.append((f"bilinear 256x256 [{name}]", t))

    width = max(len(r[0]) for r in rows)
    for label, t in rows:
        print(f"  {label:<{width}}  {t * 1000:9.1f} ms")


if __name__ == "__main__":
    main()
