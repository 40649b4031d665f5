"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends make identical decisions (see tests/test_kernels.py); only
speed differs. Prints one line per kernel with the best-of-N time of each
backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from diadetect import _pykernels, kernels
from diadetect.data import build_windows, synth_load


def _tree_case():
    ds = build_windows(synth_load(120, 1), 14)
    X, y = ds.scaled_inputs, ds.scaled_targets
    u = np.random.default_rng(0).random(2 * len(X) * 20 + 1)
    return (X, y, 2, 5, u)


def _forest_case(backend):
    X, y, n_min, k, _ = _tree_case()
    trees = [backend.build_tree(X, y, n_min, k, np.random.default_rng(b).random(2 * len(X) * 20 + 1))
             for b in range(20)]
    cols = [np.concatenate([t[i] for t in trees]) for i in range(5)]
    offsets = np.concatenate([[0], np.cumsum([len(t[0]) for t in trees])]).astype(np.int64)
    return (*cols, offsets, np.ascontiguousarray(X[:2000]))


def _mcd_case():
    rng = np.random.default_rng(0)
    X = np.ascontiguousarray(rng.standard_normal((168, 1)) * 0.02)
    starts = np.argpartition(rng.random((50, len(X))), 1, axis=1)[:, :2]
    return (X, starts, (len(X) + 2) // 2, 2, 10, 30, 1e-12, 1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is kept)")
    args = ap.parse_args(argv)
    compiled = kernels.compiled_backend
    if compiled is None:
        raise SystemExit("compiled extension not built; run: python setup.py build_ext --inplace")
    cases = {
        "build_tree": lambda b: _tree_case(),
        "predict_forest": _forest_case,
        "mcd_search": lambda b: _mcd_case(),
    }
    print(f"{'kernel':<16}{'cython':>12}{'python':>12}{'speedup':>10}")
    for name, make in cases.items():
        times = []
        for backend in (compiled, _pykernels):
            fn, case = getattr(backend, name), make(backend)
            number = 1 if backend is _pykernels else 5
            best = min(timeit.repeat(lambda: fn(*case), number=number, repeat=args.repeat))
            times.append(best / number)
        print(f"{name:<16}{times[0] * 1e3:>10.2f}ms{times[1] * 1e3:>10.2f}ms"
              f"{times[1] / times[0]:>9.1f}x")


if __name__ == "__main__":
    main()
