import numpy as np
import pytest

from advshield import kernels
from advshield.kernels import reference


def _loop_im2col(xp, k, stride, out_h, out_w):
    """Straight-line definition of the lowering, used as the oracle."""
    n, c, _, _ = xp.shape
    cols = np.zeros((n * out_h * out_w, c * k * k), dtype=xp.dtype)
    for img in range(n):
        for oy in range(out_h):
            for ox in range(out_w):
                patch = xp[img, :, oy * stride:oy * stride + k,
                           ox * stride:ox * stride + k]
                cols[(img * out_h + oy) * out_w + ox] = patch.reshape(-1)
    return cols


_SHAPES = [
    (2, 1, 6, 6, 3, 1),
    (1, 3, 8, 8, 3, 2),
    (3, 2, 5, 5, 2, 1),
    (2, 4, 7, 7, 3, 2),
]


@pytest.mark.parametrize("n,c,h,w,k,stride", _SHAPES)
def test_im2col_matches_loop_oracle(rng, n, c, h, w, k, stride):
    xp = rng.random((n, c, h, w), dtype=np.float32)
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    want = _loop_im2col(xp, k, stride, out_h, out_w)
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        got = kernels.im2col(xp, k, stride, out_h, out_w)
        np.testing.assert_array_equal(got, want, err_msg=backend)
    kernels.use_backend("auto")


@pytest.mark.parametrize("n,c,h,w,k,stride", _SHAPES)
def test_backend_parity(rng, n, c, h, w, k, stride):
    if "numba" not in kernels.available_backends():
        pytest.skip("numba backend unavailable")
    xp = rng.random((n, c, h, w), dtype=np.float32)
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    kernels.use_backend("numpy")
    cols_np = kernels.im2col(xp, k, stride, out_h, out_w)
    back_np = kernels.col2im_add(cols_np, n, c, h, w, k, stride, out_h, out_w)
    kernels.use_backend("numba")
    cols_nb = kernels.im2col(xp, k, stride, out_h, out_w)
    back_nb = kernels.col2im_add(cols_nb, n, c, h, w, k, stride, out_h, out_w)
    kernels.use_backend("auto")
    np.testing.assert_array_equal(cols_np, cols_nb)
    np.testing.assert_allclose(back_np, back_nb, atol=1e-6)


def test_col2im_is_adjoint_of_im2col(rng):
    # <im2col(x), y> == <x, col2im_add(y)> defines the scatter exactly.
    n, c, h, w, k, stride = 2, 3, 6, 6, 3, 1
    out_h = out_w = (h - k) // stride + 1
    x = rng.random((n, c, h, w), dtype=np.float64)
    y = rng.random((n * out_h * out_w, c * k * k), dtype=np.float64)
    cols = reference.im2col(x, k, stride, out_h, out_w)
    back = reference.col2im_add(y, n, c, h, w, k, stride, out_h, out_w)
    assert np.isclose((cols * y).sum(), (x * back).sum(), rtol=1e-12)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError, match="unknown kernel backend"):
        kernels.use_backend("cuda")


def test_backend_selection_round_trip():
    original = kernels.active_backend()
    try:
        assert "numpy" in kernels.available_backends()
        assert kernels.use_backend("numpy") == "numpy"
        assert kernels.active_backend() == "numpy"
        resolved = kernels.use_backend("auto")
        assert resolved in kernels.available_backends()
    finally:
        kernels.use_backend(original)
