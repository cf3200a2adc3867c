"""Time the 3x3 convolution kernels: compiled (numba) path vs the
pure-numpy fallback, forward and backward, across the shapes the
unfolded network actually runs.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 50]

The compiled path is skipped automatically when numba is unavailable or
disabled via CSDMP_DISABLE_NUMBA=1.
"""

import argparse
import time

import numpy as np

from csdmp import kernels

# (label, Cin, Cout, H, W) -- matching the default model's hot shapes
SHAPES = [
    ("step stack 9->8, 32x32", 9, 8, 32, 32),
    ("reverse model 24->24, 32x32", 24, 24, 32, 32),
    ("head 1->8, 64x64", 1, 8, 64, 64),
    ("reverse model 24->24, 96x96", 24, 24, 96, 96),
]


def timeit(fn, args, repeats):
    fn(*args)  # warm-up (triggers JIT compilation on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.Generator(np.random.PCG64(0))
    print(f"numba path available: {kernels.NUMBA_ENABLED}")
    header = f"{'shape':<32}{'dir':<10}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, cin, cout, h, w in SHAPES:
        x = rng.standard_normal((cin, h, w))
        wt = rng.standard_normal((cout, cin, 3, 3))
        b = rng.standard_normal(cout)
        g = rng.standard_normal((cout, h, w))
        for direction, np_fn, nb_fn, fa in (
                ("forward", kernels.conv2d_forward_np,
                 kernels.conv2d_forward, (x, wt, b)),
                ("backward", kernels.conv2d_backward_np,
                 kernels.conv2d_backward, (x, wt, g))):
            t_np = timeit(np_fn, fa, args.repeats)
            if kernels.NUMBA_ENABLED:
                t_nb = timeit(nb_fn, fa, args.repeats)
                speed = f"{t_np / t_nb:8.2f}x"
                nb_ms = f"{1e3 * t_nb:10.3f}"
            else:
                nb_ms, speed = f"{'-':>10}", f"{'-':>9}"
            print(f"{label:<32}{direction:<10}{1e3 * t_np:10.3f}"
                  f"{nb_ms}{speed}")
        # correctness cross-check while we are here
        if kernels.NUMBA_ENABLED:
            np.testing.assert_allclose(
                kernels.conv2d_forward(x, wt, b),
                kernels.conv2d_forward_np(x, wt, b), atol=1e-12)
            for a, bb in zip(kernels.conv2d_backward(x, wt, g),
                             kernels.conv2d_backward_np(x, wt, g)):
                np.testing.assert_allclose(a, bb, atol=1e-12)


if __name__ == "__main__":
    main()
