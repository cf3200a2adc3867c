"""Hot numeric kernels: 3x3 same-size convolution forward/backward.

Two interchangeable implementations are provided:

* ``*_nb`` -- numba ``@njit`` loop kernels (default when numba imports),
* ``*_np`` -- vectorized pure-numpy fallbacks.

Selection happens once at import time.  Set the environment variable
``CSDMP_DISABLE_NUMBA=1`` to force the numpy path (also used when numba
is not installed).  ``benchmarks/bench_kernels.py`` times both paths.

All kernels use zero padding of 1 so spatial dims are preserved, and
accumulate in float64.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "conv2d_forward",
    "conv2d_backward",
    "conv2d_forward_np",
    "conv2d_backward_np",
]


def _numba_requested() -> bool:
    if os.environ.get("CSDMP_DISABLE_NUMBA", "0") not in ("", "0", "false"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_requested()


# ---------------------------------------------------------------------------
# pure-numpy path
# ---------------------------------------------------------------------------

def _shifted_patches(xp, H, W):
    # xp: (C, H+2, W+2) zero-padded input; returns (C, 3, 3, H, W) views
    cols = np.empty((xp.shape[0], 3, 3, H, W), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy:dy + H, dx:dx + W]
    return cols


def conv2d_forward_np(x, w, b):
    """x: (Cin,H,W), w: (Cout,Cin,3,3), b: (Cout,) -> (Cout,H,W)."""
    cin, H, W = x.shape
    xp = np.zeros((cin, H + 2, W + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1] = x
    cols = _shifted_patches(xp, H, W)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [0, 1, 2]))
    out += b[:, None, None]
    return out


def conv2d_backward_np(x, w, gout):
    """Gradients of conv2d_forward w.r.t. (x, w, b) given upstream gout."""
    cin, H, W = x.shape
    xp = np.zeros((cin, H + 2, W + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1] = x
    cols = _shifted_patches(xp, H, W)
    gb = gout.sum(axis=(1, 2))
    gw = np.tensordot(gout, cols, axes=([1, 2], [3, 4]))
    # scatter w^T * gout back onto the padded input grid
    t = np.tensordot(w, gout, axes=([0], [0]))  # (Cin,3,3,H,W)
    gxp = np.zeros((cin, H + 2, W + 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            gxp[:, dy:dy + H, dx:dx + W] += t[:, dy, dx]
    gx = gxp[:, 1:-1, 1:-1]
    return gx, gw, gb


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True)
    def _conv2d_forward_nb(x, w, b):
        cin, H, W = x.shape
        cout = w.shape[0]
        out = np.empty((cout, H, W), dtype=np.float64)
        for o in range(cout):
            for h in range(H):
                for c in range(W):
                    acc = b[o]
                    for i in range(cin):
                        for dy in range(3):
                            hy = h + dy - 1
                            if hy < 0 or hy >= H:
                                continue
                            for dx in range(3):
                                wx = c + dx - 1
                                if wx < 0 or wx >= W:
                                    continue
                                acc += w[o, i, dy, dx] * x[i, hy, wx]
                    out[o, h, c] = acc
        return out

    @njit(cache=True)
    def _conv2d_backward_nb(x, w, gout):
        cin, H, W = x.shape
        cout = w.shape[0]
        gx = np.zeros((cin, H, W), dtype=np.float64)
        gw = np.zeros((cout, cin, 3, 3), dtype=np.float64)
        gb = np.zeros(cout, dtype=np.float64)
        for o in range(cout):
            for h in range(H):
                for c in range(W):
                    g = gout[o, h, c]
                    gb[o] += g
                    for i in range(cin):
                        for dy in range(3):
                            hy = h + dy - 1
                            if hy < 0 or hy >= H:
                                continue
                            for dx in range(3):
                                wx = c + dx - 1
                                if wx < 0 or wx >= W:
                                    continue
                                gw[o, i, dy, dx] += g * x[i, hy, wx]
                                gx[i, hy, wx] += g * w[o, i, dy, dx]
        return gx, gw, gb

    def conv2d_forward(x, w, b):
        return _conv2d_forward_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(b))

    def conv2d_backward(x, w, gout):
        return _conv2d_backward_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(gout))
else:
    conv2d_forward = conv2d_forward_np
    conv2d_backward = conv2d_backward_np
