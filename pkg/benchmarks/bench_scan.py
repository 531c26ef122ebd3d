"""Benchmark the hot kernels' numba lane against the numpy fallback.

Runs the selective-scan forward/backward and the depthwise causal time
convolution at training-like shapes, reports median wall time per call,
and verifies the lane-agreement contracts (scan: bitwise; fused
backward and conv: float-rounding tolerance).

    python3 benchmarks/bench_scan.py [--repeat N] [--rows R] [--frames T]
"""

import argparse
import statistics
import time

import numpy as np

from melclean import kernels


def close(got, want, tol=1e-4):
    """Normalized worst-case deviation, robust to reduction length."""
    pairs = zip(got, want) if isinstance(got, tuple) else [(got, want)]
    return all(np.abs(g - w).max() <= tol * max(np.abs(w).max(), 1e-12)
               for g, w in pairs)


def timed(fn, args, repeat):
    fn(*args)   # warm-up (numba compiles here)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def scan_inputs(rng, rows, frames, state, ch):
    a = np.exp(-np.abs(rng.standard_normal((rows, frames, state, ch))
                       .astype(np.float32)))
    du = rng.standard_normal((rows, frames, ch)).astype(np.float32)
    b = rng.standard_normal((rows, frames, state)).astype(np.float32)
    c = rng.standard_normal((rows, frames, state)).astype(np.float32)
    h0 = np.zeros((rows, state, ch), dtype=np.float32)
    return a, du, b, c, h0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--rows", type=int, default=1028,
                    help="batch x frequency rows (default: toy batch 4)")
    ap.add_argument("--frames", type=int, default=63)
    ap.add_argument("--state", type=int, default=4)
    ap.add_argument("--channels", type=int, default=48)
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    kernels.USE_NUMBA = True   # route dispatchers to the numba lane

    rng = np.random.default_rng(0)
    a, du, b, c, h0 = scan_inputs(rng, args.rows, args.frames, args.state,
                                  args.channels)
    shape = f"[{args.rows}, {args.frames}, {args.state}, {args.channels}]"
    print(f"shapes: a {shape}, repeat {args.repeat}")
    rows = []

    y_nb, hist = kernels.scan_fwd(a, du, b, c, h0)
    y_np, hist_np = kernels.scan_fwd_np(a, du, b, c, h0)
    exact = np.array_equal(y_nb, y_np) and np.array_equal(hist, hist_np)
    rows.append(("scan_fwd",
                 timed(kernels.scan_fwd, (a, du, b, c, h0), args.repeat),
                 timed(kernels.scan_fwd_np, (a, du, b, c, h0), args.repeat),
                 "bitwise" if exact else "DIFFER"))

    gy = rng.standard_normal(y_nb.shape).astype(np.float32)
    at = rng.standard_normal((args.state, args.channels)).astype(np.float32)
    delta = rng.standard_normal(du.shape).astype(np.float32)
    fused = (gy, a, du, b, c, hist, h0, at, delta)
    out_nb = kernels.scan_bwd_fused(*fused)
    out_np = kernels.scan_bwd_fused_np(*fused)
    ok = close(out_nb, out_np)
    rows.append(("scan_bwd_fused",
                 timed(kernels.scan_bwd_fused, fused, args.repeat),
                 timed(kernels.scan_bwd_fused_np, fused, args.repeat),
                 "close" if ok else "DIFFER"))

    x = rng.standard_normal((args.rows, args.frames,
                             2 * args.channels)).astype(np.float32)
    w = rng.standard_normal((4, 2 * args.channels)).astype(np.float32)
    bias = rng.standard_normal(2 * args.channels).astype(np.float32)
    yc_nb = kernels.dtconv_fwd(x, w, bias)
    yc_np = kernels.dtconv_fwd_np(x, w, bias)
    ok = close(yc_nb, yc_np, tol=1e-6)
    rows.append(("dtconv_fwd",
                 timed(kernels.dtconv_fwd, (x, w, bias), args.repeat),
                 timed(kernels.dtconv_fwd_np, (x, w, bias), args.repeat),
                 "close" if ok else "DIFFER"))

    gc = rng.standard_normal(yc_nb.shape).astype(np.float32)
    out_nb = kernels.dtconv_bwd(gc, x, w)
    out_np = kernels.dtconv_bwd_np(gc, x, w)
    ok = close(out_nb, out_np, tol=1e-5)
    rows.append(("dtconv_bwd",
                 timed(kernels.dtconv_bwd, (gc, x, w), args.repeat),
                 timed(kernels.dtconv_bwd_np, (gc, x, w), args.repeat),
                 "close" if ok else "DIFFER"))

    print(f"\n{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}"
          f"{'speedup':>9}  agreement")
    for name, nb, npy, agree in rows:
        print(f"{name:<16}{nb:>10.2f}{npy:>10.2f}{npy / nb:>8.1f}x  {agree}")
    if any(r[3] == "DIFFER" for r in rows):
        raise SystemExit("lane agreement violated")


if __name__ == "__main__":
    main()
