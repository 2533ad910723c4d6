"""Benchmark the numba kernels against the pure-numpy reference backend.

Times the two lowering primitives on classifier-shaped workloads plus one
end-to-end conv forward/backward, and prints a per-backend table. Run as:

    python benchmarks/bench_kernels.py [--batch 64] [--repeats 7]
"""

import argparse
import statistics
import time

import numpy as np

from advshield import autograd as ag
from advshield import kernels


def _median_time(fn, repeats):
    fn()  # warmup (includes any JIT compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(batch):
    rng = np.random.Generator(np.random.PCG64(0))
    # (name, padded input shape, kernel, stride, out_h, out_w)
    shapes = [
        ("im2col 1->16 s1 30x30", (batch, 1, 30, 30), 3, 1, 28, 28),
        ("im2col 16->32 s2 30x30", (batch, 16, 30, 30), 3, 2, 14, 14),
        ("im2col 32->32 s2 16x16", (batch, 32, 16, 16), 3, 2, 7, 7),
    ]
    for name, shape, k, stride, oh, ow in shapes:
        xp = rng.random(shape, dtype=np.float32)
        yield name, xp, k, stride, oh, ow


def bench_backend(name, batch, repeats):
    kernels.use_backend(name)
    rows = []
    for case, xp, k, stride, oh, ow in _cases(batch):
        cols = kernels.im2col(xp, k, stride, oh, ow)
        n, c, hp, wp = xp.shape
        fwd = _median_time(lambda: kernels.im2col(xp, k, stride, oh, ow), repeats)
        bwd = _median_time(
            lambda: kernels.col2im_add(cols, n, c, hp, wp, k, stride, oh, ow),
            repeats)
        rows.append((case, fwd, bwd))

    rng = np.random.Generator(np.random.PCG64(1))
    x = ag.Tensor(rng.random((batch, 16, 14, 14), dtype=np.float32),
                  requires_grad=True)
    w = ag.Tensor((rng.random((32, 16, 3, 3), dtype=np.float32) - 0.5) * 0.1,
                  requires_grad=True)
    b = ag.Tensor(np.zeros(32, dtype=np.float32), requires_grad=True)

    def conv_step():
        x.grad = w.grad = b.grad = None
        out = ag.conv2d(x, w, b, stride=2, pad=1)
        loss = ag.mse(out, ag.Tensor(np.zeros_like(out.data)))
        loss.backward()

    rows.append(("conv2d fwd+bwd 16->32 s2", _median_time(conv_step, repeats),
                 float("nan")))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    results = {}
    for backend in kernels.available_backends():
        results[backend] = bench_backend(backend, args.batch, args.repeats)

    width = max(len(r[0]) for rows in results.values() for r in rows)
    header = f"{'case':<{width}}  " + "  ".join(
        f"{b + ' fwd':>12} {b + ' bwd':>12}" for b in sorted(results))
    print(header)
    print("-" * len(header))
    by_case = {}
    for backend, rows in results.items():
        for case, fwd, bwd in rows:
            by_case.setdefault(case, {})[backend] = (fwd, bwd)
    for case, per in by_case.items():
        cells = []
        for backend in sorted(per):
            fwd, bwd = per[backend]
            bwd_txt = f"{bwd * 1e3:10.3f}ms" if bwd == bwd else f"{'-':>12}"
            cells.append(f"{fwd * 1e3:10.3f}ms {bwd_txt}")
        print(f"{case:<{width}}  " + "  ".join(cells))

    if len(results) > 1:
        print()
        for case, per in by_case.items():
            if "numba" in per and "numpy" in per:
                speedup = per["numpy"][0] / per["numba"][0]
                print(f"{case}: numba {speedup:.2f}x vs numpy (forward)")


if __name__ == "__main__":
    main()
