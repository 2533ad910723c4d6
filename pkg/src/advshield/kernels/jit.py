"""Numba-compiled lowering kernels.

Same contracts as kernels.reference; tight loops instead of stride tricks.
First call per dtype pays a JIT compile that is cached on disk afterwards.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, k, stride, out_h, out_w):
    n, c, hp, wp = xp.shape
    cols = np.empty((n * out_h * out_w, c * k * k), xp.dtype)
    for i in range(n):
        for oh in range(out_h):
            ih0 = oh * stride
            for ow in range(out_w):
                row = (i * out_h + oh) * out_w + ow
                iw0 = ow * stride
                col = 0
                for ci in range(c):
                    for kh in range(k):
                        for kw in range(k):
                            cols[row, col] = xp[i, ci, ih0 + kh, iw0 + kw]
                            col += 1
    return cols


@njit(cache=True)
def col2im_add(cols, n, c, hp, wp, k, stride, out_h, out_w):
    xp = np.zeros((n, c, hp, wp), cols.dtype)
    for i in range(n):
        for oh in range(out_h):
            ih0 = oh * stride
            for ow in range(out_w):
                row = (i * out_h + oh) * out_w + ow
                iw0 = ow * stride
                col = 0
                for ci in range(c):
                    for kh in range(k):
                        for kw in range(k):
                            xp[i, ci, ih0 + kh, iw0 + kw] += cols[row, col]
                            col += 1
    return xp
