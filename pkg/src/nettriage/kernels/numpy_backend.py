"""Pure-NumPy implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable.
Both backends must produce bitwise-identical results: the column layout,
window scan order, and per-element accumulation order are part of the
kernel contract, not an implementation detail.

Kernel contract
---------------
* Arrays are C-contiguous, NHWC, float32 or float64.
* ``im2col3x3``: 3x3 patches at stride 1 with one-pixel zero padding.
  ``cols[n*H*W + i*W + j, (ky*3 + kx)*C + c] = x_pad[n, i+ky, j+kx, c]``.
* ``col2im3x3``: exact adjoint of ``im2col3x3``; per-element contributions
  are accumulated in ascending ``(ky, kx)`` order.
* ``maxpool2x2_forward``: 2x2 windows at stride 2, floor semantics for odd
  extents.  ``idx`` holds the flat within-window argmax (``dy*2 + dx``),
  ties resolved to the first position in row-major window order.
"""

import numpy as np


def im2col3x3(x):
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:h + 1, 1:w + 1, :] = x
    cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx, :] = xp[:, ky:ky + h, kx:kx + w, :]
    return cols.reshape(n * h * w, 9 * c)


def col2im3x3(cols, n, h, w, c):
    cols = cols.reshape(n, h, w, 3, 3, c)
    xp = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            xp[:, ky:ky + h, kx:kx + w, :] += cols[:, :, :, ky, kx, :]
    return np.ascontiguousarray(xp[:, 1:h + 1, 1:w + 1, :])


def maxpool2x2_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :ho * 2, :wo * 2, :].reshape(n, ho, 2, wo, 2, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(dy, idx, h, w):
    n, ho, wo, c = dy.shape
    buf = np.zeros((n, ho, wo, c, 4), dtype=dy.dtype)
    np.put_along_axis(buf, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    dx[:, :ho * 2, :wo * 2, :] = (
        buf.reshape(n, ho, wo, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, ho * 2, wo * 2, c)
    )
    return dx
