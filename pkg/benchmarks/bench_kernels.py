"""Compare the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--resolution 128]

Prints the best-of-``repeat`` wall time per kernel for each backend and the
speedup of the compiled one. Outputs are checked for agreement first.
"""
import argparse
import time

import numpy as np

from ghostbench import kernels
from ghostbench.cellmaps import RetinaSpec, cell_map_for_stage
from ghostbench.core import RoiSpec
from ghostbench.kernels import _pykernels


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
                       rtol=0, atol=1e-12)


def cases(M, count):
    rng = np.random.default_rng(0)
    keys = _pykernels.mix64(np.arange(count, dtype=np.uint64))
    cmap = cell_map_for_stage(RetinaSpec.default(M, RoiSpec.centered(M, M, M / 4)), M, M)
    img = rng.random((M, M))
    dx, dy = rng.standard_normal((2, M, M))
    field = rng.standard_normal((2, M, M))
    words = np.arange(1 << 20, dtype=np.uint64)
    return {
        "mix64 (1M words)": lambda k: k.mix64(words),
        f"pattern_masks ({count} x {M}^2)": lambda k: k.pattern_masks(keys, cmap.cell_of_pixel),
        "gaussian_stream (1M draws)": lambda k: k.gaussian_stream(np.uint64(7), 0, 1 << 20),
        f"grad_forward ({M}^2)": lambda k: k.grad_forward(img),
        f"grad_adjoint ({M}^2)": lambda k: k.grad_adjoint(dx, dy),
        f"shrink (2 x {M}^2)": lambda k: k.shrink(field, 0.1),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--resolution", type=int, default=128)
    parser.add_argument("--count", type=int, default=1024, help="patterns per mask batch")
    args = parser.parse_args()

    if kernels.BACKEND != "cython":
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"resolution {args.resolution}, best of {args.repeat}")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, run in cases(args.resolution, args.count).items():
        if not agree(run(_pykernels), run(kernels)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = best_time(lambda: run(_pykernels), args.repeat)
        t_c = best_time(lambda: run(kernels), args.repeat)
        print(f"{name:34s} {t_py * 1e3:10.2f} {t_c * 1e3:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
