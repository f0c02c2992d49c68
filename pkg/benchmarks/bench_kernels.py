"""Time the numba and numpy flavours of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--size 321] [--repeat 5]

The numba column excludes compilation (one warm-up call first). Outputs of
the two flavours are compared before timing.
"""
import argparse
import time

import numpy as np

from supercut import _jit, kernels
from supercut.superpixels import _init_centers, rgb_to_lab


def best_of(func, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        func()
        times.append(time.perf_counter() - start)
    return min(times)


def make_cases(size, m_target, seed):
    rng = np.random.default_rng(seed)
    h, w = size, int(size * 1.5)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack([np.sin(xx / 17.0), np.cos(yy / 11.0), np.sin((xx + yy) / 23.0)], -1) * 0.4 + 0.5
    img = np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)
    lab = np.ascontiguousarray(rgb_to_lab(img))
    centers = _init_centers(lab, m_target)
    step = float(np.sqrt(h * w / m_target))
    noisy = rng.integers(0, 6, size=(h, w))
    a = rng.integers(0, 200, size=h * w)
    b = rng.integers(0, 50, size=h * w)

    def assign(fn):
        def run():
            labels = np.zeros((h, w), dtype=np.int64)
            dist = np.full((h, w), np.inf)
            fn(lab, centers, step, 10.0, labels, dist)
            return labels
        return run

    labels0 = assign(kernels._slic_assign_numpy)()

    def update(fn):
        def run():
            c = centers.copy()
            fn(lab, labels0, c)
            return c
        return run

    return [
        ("slic_assign", assign(kernels._slic_assign_numba), assign(kernels._slic_assign_numpy)),
        ("slic_update", update(kernels._slic_update_numba), update(kernels._slic_update_numpy)),
        ("components", lambda: kernels._components_numba(noisy)[0], lambda: kernels._components_numpy(noisy)[0]),
        ("contingency", lambda: kernels._contingency_numba(a, b, 200, 50), lambda: kernels._contingency_numpy(a, b, 200, 50)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=321, help="image height; width is 1.5x")
    parser.add_argument("--m", type=int, default=100, help="SLIC seeds")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if not _jit.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"image {args.size}x{int(args.size * 1.5)}, best of {args.repeat}")
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  match")
    for name, fast, slow in make_cases(args.size, args.m, args.seed):
        out_fast, out_slow = fast(), slow()  # warm-up doubles as the equality check
        same = np.array_equal(out_fast, out_slow) or np.allclose(out_fast, out_slow, rtol=1e-12, atol=1e-9)
        t_fast = best_of(fast, args.repeat)
        t_slow = best_of(slow, args.repeat)
        print(f"{name:<14}{t_fast * 1e3:>10.2f}{t_slow * 1e3:>10.2f}{t_slow / t_fast:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
