"""Timing comparison of the jit kernels against the numpy reference.

Runs every conv/pool kernel on both backends over a few realistic shapes,
checks that the results agree, and prints per-op timings with the speedup.

    python3 benchmarks/bench_kernels.py [--repeats N] [--quick]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pmadnet.kernels import jit, reference


def _time(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def _cases(quick: bool):
    rng = np.random.default_rng(0)
    shapes = [(4, 8, 32, 32, 16, 3, 1, 1)]
    if not quick:
        shapes += [(8, 16, 64, 64, 32, 3, 1, 1),
                   (4, 32, 32, 32, 64, 3, 2, 1)]
    for n, ci, h, w, co, k, stride, pad in shapes:
        x = rng.standard_normal((n, ci, h, w)).astype(np.float32)
        wt = rng.standard_normal((co, ci, k, k)).astype(np.float32) * 0.1
        b = rng.standard_normal(co).astype(np.float32) * 0.1
        tag = f"{n}x{ci}x{h}x{w} k{k}s{stride}"
        y = reference.conv2d_fw(x, wt, b, stride, pad, pad)
        gy = rng.standard_normal(y.shape).astype(np.float32)
        yield (f"conv2d_fw    {tag}", "conv2d_fw",
               (x, wt, b, stride, pad, pad))
        yield (f"conv2d_bw_x  {tag}", "conv2d_bw_x",
               (gy, wt, stride, pad, pad, h, w))
        yield (f"conv2d_bw_w  {tag}", "conv2d_bw_w",
               (x, gy, stride, pad, pad, k, k))

        wt_t = rng.standard_normal((ci, co, 2, 2)).astype(np.float32) * 0.1
        yt = reference.tconv2d_fw(x, wt_t, 2, 0, 0)
        gyt = rng.standard_normal(yt.shape).astype(np.float32)
        yield (f"tconv2d_fw   {tag}", "tconv2d_fw", (x, wt_t, 2, 0, 0))
        yield (f"tconv2d_bw_x {tag}", "tconv2d_bw_x", (gyt, wt_t, 2, 0, 0))
        yield (f"tconv2d_bw_w {tag}", "tconv2d_bw_w",
               (x, gyt, 2, 0, 0, 2, 2))

        yp, idx = reference.maxpool2d_fw(x, 2, 2)
        gp = rng.standard_normal(yp.shape).astype(np.float32)
        yield (f"maxpool2d_fw {tag}", "maxpool2d_fw", (x, 2, 2))
        yield (f"maxpool2d_bw {tag}", "maxpool2d_bw", (gp, idx, h, w))
        yield (f"avgpool2d_fw {tag}", "avgpool2d_fw", (x, 2, 2))
        yield (f"avgpool2d_bw {tag}", "avgpool2d_bw", (gp, 2, 2, h, w))


def _first(result):
    return result[0] if isinstance(result, tuple) else result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--quick", action="store_true",
                        help="single small shape only")
    args = parser.parse_args()

    print(f"{'case':<42} {'numpy':>10} {'numba':>10} {'speedup':>8}  parity")
    mismatches = 0
    for label, op, call_args in _cases(args.quick):
        ref_fn = getattr(reference, op)
        jit_fn = getattr(jit, op)
        jit_fn(*call_args)  # compile outside the timed region
        ref_out = _first(ref_fn(*call_args))
        jit_out = _first(jit_fn(*call_args))
        # float32 reductions accumulate in backend-specific order; allow
        # the corresponding rounding spread, scaled to the output.
        scale = float(np.abs(ref_out).max()) + 1.0
        agree = np.allclose(ref_out, jit_out, rtol=1e-3, atol=1e-4 * scale)
        mismatches += not agree
        t_ref = _time(ref_fn, call_args, args.repeats)
        t_jit = _time(jit_fn, call_args, args.repeats)
        print(f"{label:<42} {t_ref * 1e3:>8.2f}ms {t_jit * 1e3:>8.2f}ms "
              f"{t_ref / t_jit:>7.1f}x  {'ok' if agree else 'MISMATCH'}")
    if mismatches:
        print(f"{mismatches} case(s) disagreed between backends")
        return 1
    print("all cases agree between backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
