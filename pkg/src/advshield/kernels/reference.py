"""Pure-numpy lowering kernels (stride tricks + fancy slicing)."""

import numpy as np


def im2col(xp, k, stride, out_h, out_w):
    """Unfold k x k windows of a padded NCHW batch into a row matrix.

    Rows are ordered (n, oh, ow) row-major; within a row the layout is
    (c, kh, kw) fastest-last, matching a weight tensor reshaped to
    [filters, c*k*k].  Caller guarantees (out_h-1)*stride + k <= padded height.
    """
    n, c, hp, wp = xp.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    # [n, c, oh, ow, kh, kw] -> [n, oh, ow, c, kh, kw]; reshape forces the copy
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * k * k)


def col2im_add(cols, n, c, hp, wp, k, stride, out_h, out_w):
    """Fold a row matrix back into a zeroed padded batch, accumulating overlaps.

    Exact adjoint of im2col: im2col followed by col2im_add distributes every
    window entry back to the pixel it came from.
    """
    xp = np.zeros((n, c, hp, wp), cols.dtype)
    t = cols.reshape(n, out_h, out_w, c, k, k)
    he = (out_h - 1) * stride + 1
    we = (out_w - 1) * stride + 1
    for kh in range(k):
        for kw in range(k):
            xp[:, :, kh:kh + he:stride, kw:kw + we:stride] += t[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
    return xp
