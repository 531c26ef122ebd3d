"""Hot-path kernels: the selective-scan recurrence and the depthwise
causal time convolution.

Each kernel has two interchangeable lanes:

  * a numba @njit lane (default when numba imports)
  * a pure-numpy fallback

Lane selection: MELCLEAN_NUMBA=0 forces numpy, MELCLEAN_NUMBA=1 demands
numba (ImportError if missing); unset picks numba when available.

The scan lanes compute the recurrence with identical floating-point
operation order, so their outputs are bitwise equal; the conv lanes
agree up to the treatment of the implicit zero padding (adding an exact
zero is omitted in the numba lane). Within a lane every kernel is
deterministic per element, which the streaming paths rely on.

Scan layout is [rows, time, state, channels] with channels contiguous;
benchmarks/bench_scan.py compares the lanes. fastmath is deliberately
off: it benchmarked slower here and would break cross-lane equality.

Scan recurrence per row r, state s, channel d:
    h[s, d] = a[t, s, d] * h[s, d] + du[t, d] * b[t, s]
    y[t, d] = sum_s c[t, s] * h[s, d]
"""

from __future__ import annotations

import os

import numpy as np

# the bundled TBB is too old for numba's TBB layer; omp works and avoids
# a startup warning about the fallback
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_env = os.environ.get("MELCLEAN_NUMBA", "").strip()
if _env == "0":
    USE_NUMBA = False
elif _env == "1":
    if not HAVE_NUMBA:
        raise ImportError("MELCLEAN_NUMBA=1 but numba is not importable")
    USE_NUMBA = True
else:
    USE_NUMBA = HAVE_NUMBA


# ------------------------------------------------------------ numpy lane

def scan_fwd_np(a, du, b, c, h0):
    """Forward scan storing the full state history (training).

    a: [R, T, S, D], du: [R, T, D], b, c: [R, T, S], h0: [R, S, D].
    Returns (y [R, T, D], hist [R, T, S, D]); hist[t] is the post-update
    state, hist[-1] the carry-out.

    The y accumulation loops states in ascending order so the result is
    bitwise equal to the numba lane (numpy .sum() would use a different
    reduction order).
    """
    n_rows, n_t, n_state, n_ch = a.shape
    y = np.zeros_like(du)
    hist = np.empty_like(a)
    h = h0.copy()
    for t in range(n_t):
        h = a[:, t] * h + du[:, t, None, :] * b[:, t, :, None]
        hist[:, t] = h
        for s in range(n_state):
            y[:, t] += c[:, t, s, None] * h[:, s]
    return y, hist


def scan_infer_np(a, du, b, c, h0):
    """Forward scan without history; returns (y, h_last) for streaming."""
    n_rows, n_t, n_state, n_ch = a.shape
    y = np.zeros_like(du)
    h = h0.copy()
    for t in range(n_t):
        h = a[:, t] * h + du[:, t, None, :] * b[:, t, :, None]
        for s in range(n_state):
            y[:, t] += c[:, t, s, None] * h[:, s]
    return y, h


def scan_bwd_np(gy, a, du, b, c, hist, h0):
    """Adjoint of scan_fwd; returns (ga, gdu, gb, gc, gh0)."""
    n_rows, n_t, n_state, n_ch = a.shape
    ga = np.empty_like(a)
    gdu = np.zeros_like(du)
    gb = np.empty_like(b)
    gc = np.empty_like(c)
    gh = np.zeros((n_rows, n_state, n_ch), dtype=a.dtype)
    for t in range(n_t - 1, -1, -1):
        gh = gh + gy[:, t, None, :] * c[:, t, :, None]
        gc[:, t] = (gy[:, t, None, :] * hist[:, t]).sum(axis=2)
        h_prev = hist[:, t - 1] if t > 0 else h0
        ga[:, t] = gh * h_prev
        gdu[:, t] = (gh * b[:, t, :, None]).sum(axis=1)
        gb[:, t] = (gh * du[:, t, None, :]).sum(axis=2)
        gh = gh * a[:, t]
    return ga, gdu, gb, gc, gh


def scan_bwd_fused_np(gy, a, du, b, c, hist, h0, at, delta):
    """scan_bwd with the decay chain folded in: a is exp(delta * A),
    at is A transposed [S, D]. Returns (gdelta_scan, g_amat, gdu, gb, gc);
    gdelta_scan excludes the du product term, which the caller owns."""
    ga, gdu, gb, gc, _ = scan_bwd_np(gy, a, du, b, c, hist, h0)
    ga *= a
    gdelta = np.einsum("rtsd,sd->rtd", ga, at)
    g_amat = np.einsum("rtsd,rtd->ds", ga, delta)
    return gdelta, g_amat, gdu, gb, gc


def dtconv_fwd_np(x, w, b):
    """Depthwise causal conv over time: x [R, T, D], w [K, D], b [D]."""
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (k - 1, 0), (0, 0)))
    length = x.shape[-2]
    y = None
    for j in range(k):
        tap = xp[:, j:j + length, :] * w[j]
        y = tap if y is None else y + tap
    return y + b


def dtconv_bwd_np(g, x, w):
    """Adjoint of dtconv_fwd; returns (gx, gw, gb)."""
    k = w.shape[0]
    length = x.shape[-2]
    xp = np.pad(x, ((0, 0), (k - 1, 0), (0, 0)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for j in range(k):
        gw[j] = (xp[:, j:j + length, :] * g).sum(axis=(0, 1))
        gxp[:, j:j + length, :] += g * w[j]
    gx = np.ascontiguousarray(gxp[:, k - 1:k - 1 + length, :])
    return gx, gw, g.sum(axis=(0, 1))




# ------------------------------------------------------------ numba lane

if HAVE_NUMBA:

    @njit(cache=True, nogil=True, parallel=True)
    def _scan_fwd_nb(a, du, b, c, h0, y, hist):
        n_rows, n_t, n_state, n_ch = a.shape
        for r in prange(n_rows):
            h = h0[r].copy()
            for t in range(n_t):
                for d in range(n_ch):
                    y[r, t, d] = 0.0
                for s in range(n_state):
                    bs = b[r, t, s]
                    cs = c[r, t, s]
                    for d in range(n_ch):
                        h[s, d] = a[r, t, s, d] * h[s, d] + du[r, t, d] * bs
                        y[r, t, d] += cs * h[s, d]
                        hist[r, t, s, d] = h[s, d]

    @njit(cache=True, nogil=True, parallel=True)
    def _scan_infer_nb(a, du, b, c, h0, y, h_out):
        n_rows, n_t, n_state, n_ch = a.shape
        for r in prange(n_rows):
            h = h0[r].copy()
            for t in range(n_t):
                for d in range(n_ch):
                    y[r, t, d] = 0.0
                for s in range(n_state):
                    bs = b[r, t, s]
                    cs = c[r, t, s]
                    for d in range(n_ch):
                        h[s, d] = a[r, t, s, d] * h[s, d] + du[r, t, d] * bs
                        y[r, t, d] += cs * h[s, d]
            h_out[r] = h

    @njit(cache=True, nogil=True, parallel=True)
    def _scan_bwd_fused_nb(gy, a, du, b, c, hist, h0, at, delta,
                           gdelta, gamr, gdu, gb, gc):
        n_rows, n_t, n_state, n_ch = a.shape
        for r in prange(n_rows):
            gh = np.zeros((n_state, n_ch), dtype=a.dtype)
            gam = np.zeros((n_state, n_ch), dtype=a.dtype)
            for t in range(n_t - 1, -1, -1):
                for d in range(n_ch):
                    gdu[r, t, d] = 0.0
                    gdelta[r, t, d] = 0.0
                for s in range(n_state):
                    cs = c[r, t, s]
                    gc[r, t, s] = 0.0
                    gb[r, t, s] = 0.0
                    for d in range(n_ch):
                        ghsd = gh[s, d] + gy[r, t, d] * cs
                        gc[r, t, s] += gy[r, t, d] * hist[r, t, s, d]
                        h_prev = h0[r, s, d] if t == 0 else hist[r, t - 1, s, d]
                        gad = ghsd * h_prev * a[r, t, s, d]
                        gdelta[r, t, d] += gad * at[s, d]
                        gam[s, d] += gad * delta[r, t, d]
                        gdu[r, t, d] += ghsd * b[r, t, s]
                        gb[r, t, s] += ghsd * du[r, t, d]
                        gh[s, d] = ghsd * a[r, t, s, d]
            gamr[r] = gam

    @njit(cache=True, nogil=True)
    def _dtconv_fwd_nb(x, w, b, y):
        n_rows, n_t, n_ch = x.shape
        k = w.shape[0]
        for r in range(n_rows):
            for t in range(n_t):
                for d in range(n_ch):
                    y[r, t, d] = 0
                for j in range(k):
                    src = t + j - (k - 1)
                    if src >= 0:
                        for d in range(n_ch):
                            y[r, t, d] += x[r, src, d] * w[j, d]
                for d in range(n_ch):
                    y[r, t, d] += b[d]

    @njit(cache=True, nogil=True)
    def _dtconv_bwd_nb(g, x, w, gx, gw, gb):
        n_rows, n_t, n_ch = x.shape
        k = w.shape[0]
        gw[:] = 0
        gb[:] = 0
        gx[:] = 0
        for r in range(n_rows):
            for t in range(n_t):
                for j in range(k):
                    src = t + j - (k - 1)
                    if src >= 0:
                        for d in range(n_ch):
                            gw[j, d] += x[r, src, d] * g[r, t, d]
                            gx[r, src, d] += w[j, d] * g[r, t, d]
                for d in range(n_ch):
                    gb[d] += g[r, t, d]

    @njit(cache=True, nogil=True, parallel=True)
    def _scan_bwd_nb(gy, a, du, b, c, hist, h0, ga, gdu, gb, gc, gh0):
        n_rows, n_t, n_state, n_ch = a.shape
        for r in prange(n_rows):
            gh = np.zeros((n_state, n_ch), dtype=a.dtype)
            for t in range(n_t - 1, -1, -1):
                for d in range(n_ch):
                    gdu[r, t, d] = 0.0
                for s in range(n_state):
                    cs = c[r, t, s]
                    # accumulate into the output arrays so the arithmetic
                    # stays in the array dtype
                    gc[r, t, s] = 0.0
                    gb[r, t, s] = 0.0
                    for d in range(n_ch):
                        ghsd = gh[s, d] + gy[r, t, d] * cs
                        gc[r, t, s] += gy[r, t, d] * hist[r, t, s, d]
                        h_prev = h0[r, s, d] if t == 0 else hist[r, t - 1, s, d]
                        ga[r, t, s, d] = ghsd * h_prev
                        gdu[r, t, d] += ghsd * b[r, t, s]
                        gb[r, t, s] += ghsd * du[r, t, d]
                        gh[s, d] = ghsd * a[r, t, s, d]
            gh0[r] = gh


def _as_c(arr):
    return np.ascontiguousarray(arr)


def scan_fwd(a, du, b, c, h0):
    """Lane dispatcher for the training forward scan."""
    if USE_NUMBA:
        a, du, b, c, h0 = map(_as_c, (a, du, b, c, h0))
        y = np.empty_like(du)
        hist = np.empty_like(a)
        _scan_fwd_nb(a, du, b, c, h0, y, hist)
        return y, hist
    return scan_fwd_np(a, du, b, c, h0)


def scan_infer(a, du, b, c, h0):
    """Lane dispatcher for the stateful inference scan."""
    if USE_NUMBA:
        a, du, b, c, h0 = map(_as_c, (a, du, b, c, h0))
        y = np.empty_like(du)
        h_out = np.empty_like(h0)
        _scan_infer_nb(a, du, b, c, h0, y, h_out)
        return y, h_out
    return scan_infer_np(a, du, b, c, h0)


def scan_bwd(gy, a, du, b, c, hist, h0):
    """Lane dispatcher for the adjoint scan."""
    if USE_NUMBA:
        gy, a, du, b, c, hist, h0 = map(_as_c, (gy, a, du, b, c, hist, h0))
        ga = np.empty_like(a)
        gdu = np.empty_like(du)
        gb = np.empty_like(b)
        gc = np.empty_like(c)
        gh0 = np.empty_like(h0)
        _scan_bwd_nb(gy, a, du, b, c, hist, h0, ga, gdu, gb, gc, gh0)
        return ga, gdu, gb, gc, gh0
    return scan_bwd_np(gy, a, du, b, c, hist, h0)


def scan_bwd_fused(gy, a, du, b, c, hist, h0, at, delta):
    """Lane dispatcher for the fused adjoint scan. Unlike the plain scan
    lanes the two fused lanes only agree to float rounding: the row sum
    of the A gradient runs in a different order."""
    if USE_NUMBA:
        gy, a, du, b, c, hist, h0, at, delta = map(
            _as_c, (gy, a, du, b, c, hist, h0, at, delta))
        n_rows, _, n_state, n_ch = a.shape
        gdelta = np.empty_like(du)
        gamr = np.empty((n_rows, n_state, n_ch), dtype=a.dtype)
        gdu = np.empty_like(du)
        gb = np.empty_like(b)
        gc = np.empty_like(c)
        _scan_bwd_fused_nb(gy, a, du, b, c, hist, h0, at, delta,
                           gdelta, gamr, gdu, gb, gc)
        g_amat = np.ascontiguousarray(gamr.sum(axis=0).T)
        return gdelta, g_amat, gdu, gb, gc
    return scan_bwd_fused_np(gy, a, du, b, c, hist, h0, at, delta)


def dtconv_fwd(x, w, b):
    """Lane dispatcher for the depthwise causal time conv."""
    if USE_NUMBA:
        x, w, b = map(_as_c, (x, w, b))
        y = np.empty_like(x)
        _dtconv_fwd_nb(x, w, b, y)
        return y
    return dtconv_fwd_np(x, w, b)


def dtconv_bwd(g, x, w):
    """Lane dispatcher for the depthwise conv adjoint."""
    if USE_NUMBA:
        g, x, w = map(_as_c, (g, x, w))
        gx = np.empty_like(x)
        gw = np.empty_like(w)
        gb = np.empty(w.shape[1:], dtype=w.dtype)
        _dtconv_bwd_nb(g, x, w, gx, gw, gb)
        return gx, gw, gb
    return dtconv_bwd_np(g, x, w)
