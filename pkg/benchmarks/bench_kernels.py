"""Compare the compiled and pure-Python occupation-basis kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one line per (kernel, size) with the best-of-N wall time for each
backend and the speedup.  Outputs are checked for equality first.
"""
import argparse
import math
import timeit

import numpy as np

from grosslab import _pykernels

try:
    from grosslab import _ckernels
except ImportError:
    _ckernels = None

SIZES = [(6, 4), (10, 4), (16, 4), (10, 8), (24, 3)]


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; reinstall without GROSSLAB_NO_EXT to compare")
        return

    print(f"{'kernel':<18}{'modes':>6}{'nmax':>6}{'states':>9}{'python s':>11}{'cython s':>11}{'speedup':>9}")
    for m, n in SIZES:
        occ_py = _pykernels.enumerate_states(m, n)
        occ_c = _ckernels.enumerate_states(m, n)
        assert np.array_equal(occ_py, occ_c), "enumerate_states mismatch"
        assert np.array_equal(_pykernels.raise_table(occ_py, n), _ckernels.raise_table(occ_c, n)), "raise_table mismatch"
        assert len(occ_py) == math.comb(m + n, n)
        for name in ("enumerate_states", "raise_table"):
            if name == "enumerate_states":
                f_py = lambda: _pykernels.enumerate_states(m, n)  # noqa: E731
                f_c = lambda: _ckernels.enumerate_states(m, n)  # noqa: E731
            else:
                f_py = lambda: _pykernels.raise_table(occ_py, n)  # noqa: E731
                f_c = lambda: _ckernels.raise_table(occ_c, n)  # noqa: E731
            t_py, t_c = best(f_py, args.repeat), best(f_c, args.repeat)
            print(f"{name:<18}{m:>6}{n:>6}{len(occ_py):>9}{t_py:>11.4f}{t_c:>11.4f}{t_py / t_c:>9.1f}")


if __name__ == "__main__":
    main()
