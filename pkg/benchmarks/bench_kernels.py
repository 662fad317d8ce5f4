"""Throughput comparison of the two denoiser kernel implementations.

The compiled kernel and the numpy kernel expose the same two entry points;
this script times both on the default four-mode mixture and reports the
speedup, plus the worst cross-kernel deviation as a sanity check.

    python3 benchmarks/bench_kernels.py --batches 16,128,1024 --steps 28
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from noisesearch._kernels import _gmm_np
from noisesearch.toydiff import default_mixture

try:
    from noisesearch._kernels import _gmm_cy
except ImportError:
    _gmm_cy = None

BETA_MIN, BETA_MAX, T_MIN = 0.1, 20.0, 1e-3


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(batches: list[int], steps: int, repeats: int) -> None:
    mixture = default_mixture()
    w, m, c = mixture.weights, mixture.means, mixture.covs
    rng = np.random.default_rng(0)
    kernels = [("numpy", _gmm_np)] + ([("cython", _gmm_cy)] if _gmm_cy else [])
    if _gmm_cy is None:
        print("compiled kernel unavailable; timing the numpy kernel only")

    header = f"{'op':<8} {'batch':>6} " + "".join(f"{name:>12}" for name, _ in kernels)
    if _gmm_cy is not None:
        header += f"{'speedup':>10}"
    print(header)

    for batch in batches:
        x = rng.standard_normal((batch, mixture.dim))
        for op, make in (
            ("score", lambda k: (lambda: k.gmm_score_batch(x, 0.5, w, m, c,
                                                           BETA_MIN, BETA_MAX))),
            ("denoise", lambda k: (lambda: k.heun_denoise_batch(x, steps, w, m, c,
                                                                BETA_MIN, BETA_MAX,
                                                                T_MIN))),
        ):
            times = [_time(make(kernel), repeats) for _, kernel in kernels]
            row = f"{op:<8} {batch:>6} " + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.2f}x"
            print(row)

    if _gmm_cy is not None:
        x = rng.standard_normal((256, mixture.dim))
        ds = np.max(np.abs(
            _gmm_np.gmm_score_batch(x, 0.5, w, m, c, BETA_MIN, BETA_MAX)
            - _gmm_cy.gmm_score_batch(x, 0.5, w, m, c, BETA_MIN, BETA_MAX)))
        dd = np.max(np.abs(
            _gmm_np.heun_denoise_batch(x, steps, w, m, c, BETA_MIN, BETA_MAX, T_MIN)
            - _gmm_cy.heun_denoise_batch(x, steps, w, m, c, BETA_MIN, BETA_MAX, T_MIN)))
        print(f"cross-kernel max abs diff: score {ds:.2e}, denoise {dd:.2e}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batches", default="16,128,1024",
                        help="comma-separated batch sizes")
    parser.add_argument("--steps", type=int, default=28, help="ODE steps per denoise")
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best-of)")
    args = parser.parse_args()
    batches = [int(b) for b in args.batches.split(",") if b.strip()]
    bench(batches, args.steps, args.repeats)


if __name__ == "__main__":
    main()
