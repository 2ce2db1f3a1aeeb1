"""Time the candidate-scan backends against each other and against brute force.

    python benchmarks/bench_kernels.py [--depths 8 64 256] [--repeats 50]

For each feature depth it times one full single-swap scan (all 49 x 49
candidates) with the compiled kernel and with the numpy fallback, plus the
brute-force path that composes and classifies every candidate map. The scan
column times the kernel alone; single_edit adds the shared per-cell logit
contributions. A greedy explanation (all_edits) is timed per backend too.
"""
import argparse
import time

import numpy as np

from eegcf import cfsearch
from eegcf._backend import available_backends
from eegcf.compactnet import ClassifierHead, FeatureMap, classify, softmax


def instance(d, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    fI = FeatureMap(rng.standard_normal((7, 7, d)))
    fIp = FeatureMap(rng.standard_normal((7, 7, d)))
    head = ClassifierHead(rng.standard_normal((classes, d)), rng.standard_normal(classes))
    return fI, fIp, head, classes - 1


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def brute_force(fI, fIp, head, target):
    best = (-1.0, 0, 0)
    for q in range(fI.hw):
        for d in range(fIp.hw):
            p = softmax(classify(head, cfsearch.compose(fI, fIp, [(q, d)])))[target]
            if p > best[0]:
                best = (p, q, d)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depths", type=int, nargs="+", default=[8, 64, 256])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; timing the numpy fallback only")
    print(f"{'depth':>5} {'path':>12} {'scan':>10} {'single_edit':>12} {'all_edits':>11}")
    for d in args.depths:
        fI, fIp, head, target = instance(d)
        B, A = cfsearch.cell_contributions(fI, fIp, head)
        z = classify(head, fI)
        free = np.zeros(fI.hw, dtype=np.uint8)
        rows, scans = {}, {}
        for name, mod in sorted(backends.items()):
            cfsearch.kernels = mod
            scan = best_of(lambda: mod.best_candidate(B, A, z, target, float(fI.hw), free), args.repeats)
            single = best_of(lambda: cfsearch.single_edit(fI, fIp, head, target), args.repeats)
            greedy = best_of(lambda: cfsearch.all_edits(fI, fIp, head, target), max(args.repeats // 5, 1))
            rows[name], scans[name] = single, scan
            print(f"{d:>5} {name:>12} {scan * 1e6:>8.1f}us {single * 1e6:>10.1f}us {greedy * 1e3:>9.2f}ms")
        brute = best_of(lambda: brute_force(fI, fIp, head, target), 1)
        print(f"{d:>5} {'brute force':>12} {'':>10} {brute * 1e6:>10.1f}us")
        ratios = ", ".join(f"{name} {brute / t:.0f}x" for name, t in sorted(rows.items()))
        print(f"{'':>5} single_edit speedup over brute force: {ratios}")
        if "cython" in rows:
            print(f"{'':>5} cython over numpy: scan {scans['python'] / scans['cython']:.1f}x, "
                  f"single_edit {rows['python'] / rows['cython']:.1f}x")
    cfsearch.kernels = available_backends().get("cython", backends["python"])


if __name__ == "__main__":
    main()
