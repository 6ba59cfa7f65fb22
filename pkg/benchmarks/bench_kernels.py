"""Compare the numba kernels with their plain numpy originals.

Two measurements:

* the integrator kernel called directly, jitted against ``_kernels.PY``;
* an end-to-end distance estimate run in a subprocess with and without
  ``SUBRIE_DISABLE_NUMBA=1``.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from subrie import _kernels as K
from subrie.flow import Control
from subrie.structure import heisenberg, step3alpha

END_TO_END = (
    "import time; from subrie.structure import heisenberg; from subrie.endpoint import estimate_dsr;"
    "t = time.perf_counter(); estimate_dsr(heisenberg(), (0, 0, 0), (0, 0, 1));"
    "print(time.perf_counter() - t)"
)


def kernel_args(s, ctrl, sens):
    d = s.dim
    y0 = np.full(d, 0.05)
    if sens:
        y0 = np.concatenate([y0, np.zeros(d * ctrl.n_basis * s.rank)])
    return (y0, ctrl.breaks(0.0, 1.0), d, s.rank, *s.compiled.arrays(), *ctrl.kernel_args(),
            sens, 1e-10, 1e-12, False, np.zeros(d), np.zeros(d), False, 100000)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"numba active in this process: {K.USE_NUMBA}")
    rng = np.random.default_rng(0)
    cases = [("heisenberg", heisenberg()), ("step3alpha(-1)", step3alpha(-1))]
    print(f"{'kernel case':<32}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, s in cases:
        ctrl = Control.sampled(rng.uniform(-0.5, 0.5, (9, s.rank)))
        for sens in (False, True):
            a = kernel_args(s, ctrl, sens)
            K.dopri5(*a)  # compile outside the timing
            fast = best_of(lambda: K.dopri5(*a), args.repeat)
            slow = best_of(lambda: K.PY["dopri5"](*a), max(2, args.repeat // 2))
            label = f"{name}{' +sens' if sens else ''}"
            print(f"{label:<32}{fast:>12.5f}{slow:>12.5f}{slow / fast:>10.1f}")
    print("\nend-to-end d(0, e3) on heisenberg (fresh interpreter, compile cache warm):")
    for flag in ("0", "1"):
        env = dict(os.environ, SUBRIE_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, check=True)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True,
                             text=True, check=True).stdout.strip()
        print(f"  SUBRIE_DISABLE_NUMBA={flag}: {float(out):.3f}s")


if __name__ == "__main__":
    main()
