"""Time the numba and numpy kernel backends on conv-stream sized inputs.

    python3 benchmarks/bench_kernels.py --batch 64 --size 32 --reps 20
"""

import argparse
import time

import numpy as np

from monoheight.nn import kernels


def bench(fn, reps):
    fn()  # warm-up (includes JIT compilation for numba)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--out-channels", type=int, default=8)
    ap.add_argument("--kernel", type=int, default=3)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.batch, args.channels, args.size, args.size))
    w = rng.normal(size=(args.out_channels, args.channels, args.kernel, args.kernel))
    out_size = kernels.conv_out_size(args.size, args.kernel, 1)
    g = rng.normal(size=(args.batch, args.out_channels, out_size, out_size))

    print(f"{'kernel':18s}" + "".join(f"{b:>12s}" for b in kernels.BACKENDS) + "   max |diff|")
    for name, call in (
        ("conv2d_forward", lambda k: k["conv2d_forward"](x, w, 1)),
        ("conv2d_backward", lambda k: k["conv2d_backward"](x, w, g, 1)),
        ("avgpool_forward", lambda k: k["avgpool_forward"](x, 2)),
        ("avgpool_backward", lambda k: k["avgpool_backward"](g[:, :, ::2, ::2], 2, g.shape)),
    ):
        times, outs = [], []
        for impl in kernels.BACKENDS.values():
            times.append(bench(lambda: call(impl), args.reps))
            outs.append(call(impl))
        ref = outs[0] if not isinstance(outs[0], tuple) else outs[0][0]
        diff = max(
            float(np.max(np.abs((o if not isinstance(o, tuple) else o[0]) - ref))) for o in outs
        )
        print(f"{name:18s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times) + f"   {diff:.1e}")


if __name__ == "__main__":
    main()
