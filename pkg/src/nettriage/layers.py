"""Layer forward/backward passes with explicit parameter and gradient access.

Every layer caches what its backward pass needs during forward, so the
call protocol is strictly forward-then-backward.  Parameters live in
plain dicts (name -> ndarray) and are updated in place by the optimizer;
layers never reallocate them after construction.
"""

import numpy as np

from . import kernels
from .errors import (
    DegenerateBatchError,
    InvalidLabelError,
    ShapeMismatchError,
)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Conv2D:
    """3x3 cross-correlation, stride 1, one-pixel zero padding (same size).

    Weights are [3, 3, C_in, C_out]; bias is [C_out].  Constructed with
    ``rng=None`` the parameters are NaN-filled: a placeholder awaiting an
    explicit initialization scheme.
    """

    def __init__(self, c_in, c_out, rng=None, dtype=np.float32):
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.dtype = np.dtype(dtype)
        if rng is None:
            self.W = np.full((3, 3, self.c_in, self.c_out), np.nan, dtype=self.dtype)
            self.b = np.full((self.c_out,), np.nan, dtype=self.dtype)
        else:
            self.W = glorot_uniform(rng, (3, 3, self.c_in, self.c_out),
                                    9 * self.c_in, 9 * self.c_out, self.dtype)
            self.b = np.zeros(self.c_out, dtype=self.dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._in_shape = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeMismatchError(
                f"conv expects [N,H,W,{self.c_in}], got {tuple(x.shape)}")
        n, h, w, _ = x.shape
        cols = kernels.im2col3x3(np.ascontiguousarray(x, dtype=self.dtype))
        y = cols @ self.W.reshape(9 * self.c_in, self.c_out) + self.b
        self._cols = cols if train else None
        self._in_shape = x.shape
        return y.reshape(n, h, w, self.c_out)

    def backward(self, dy):
        if self._cols is None:
            raise ShapeMismatchError("conv backward before forward(train=True)")
        n, h, w, _ = self._in_shape
        if dy.shape != (n, h, w, self.c_out):
            raise ShapeMismatchError(
                f"conv grad shape {tuple(dy.shape)} != {(n, h, w, self.c_out)}")
        dy_m = np.ascontiguousarray(dy, dtype=self.dtype).reshape(-1, self.c_out)
        self.dW[...] = (self._cols.T @ dy_m).reshape(self.W.shape)
        self.db[...] = dy_m.sum(axis=0)
        dcols = np.ascontiguousarray(dy_m @ self.W.reshape(-1, self.c_out).T)
        return kernels.col2im3x3(dcols, n, h, w, self.c_in)


class BatchNorm2D:
    """Per-channel batch normalization over [N, H, W, C] inputs.

    Train mode normalizes by batch statistics (biased variance) and
    updates the running stats by ``r <- m*r + (1-m)*batch``; eval mode is
    a deterministic affine map through the running stats.
    """

    def __init__(self, c, eps=1e-5, momentum=0.99, dtype=np.float32):
        self.c = int(c)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.dtype = np.dtype(dtype)
        self.gamma = np.ones(self.c, dtype=self.dtype)
        self.beta = np.zeros(self.c, dtype=self.dtype)
        self.running_mean = np.zeros(self.c, dtype=self.dtype)
        self.running_var = np.ones(self.c, dtype=self.dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def reset_identity(self):
        self.gamma[...] = 1
        self.beta[...] = 0
        self.running_mean[...] = 0
        self.running_var[...] = 1

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.c:
            raise ShapeMismatchError(
                f"batchnorm expects [N,H,W,{self.c}], got {tuple(x.shape)}")
        if train:
            m = x.shape[0] * x.shape[1] * x.shape[2]
            if m < 2:
                raise DegenerateBatchError(
                    f"need >= 2 elements per channel in train mode, got {m}")
            mu = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * ivar
            self.running_mean[...] = (self.momentum * self.running_mean
                                      + (1 - self.momentum) * mu)
            self.running_var[...] = (self.momentum * self.running_var
                                     + (1 - self.momentum) * var)
            self._cache = ("train", xhat.astype(self.dtype, copy=False), ivar)
        else:
            ivar = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * ivar
            self._cache = ("eval", xhat.astype(self.dtype, copy=False), ivar)
        return (self.gamma * xhat + self.beta).astype(self.dtype, copy=False)

    def backward(self, dy):
        if self._cache is None:
            raise ShapeMismatchError("batchnorm backward before forward")
        mode, xhat, ivar = self._cache
        if dy.shape != xhat.shape:
            raise ShapeMismatchError(
                f"batchnorm grad shape {tuple(dy.shape)} != {tuple(xhat.shape)}")
        self.dgamma[...] = (dy * xhat).sum(axis=(0, 1, 2))
        self.dbeta[...] = dy.sum(axis=(0, 1, 2))
        if mode == "eval":
            return (dy * (self.gamma * ivar)).astype(self.dtype, copy=False)
        m = dy.shape[0] * dy.shape[1] * dy.shape[2]
        dxhat = dy * self.gamma
        dx = (ivar / m) * (m * dxhat
                           - dxhat.sum(axis=(0, 1, 2))
                           - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
        return dx.astype(self.dtype, copy=False)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        if self._mask is None or dy.shape != self._mask.shape:
            raise ShapeMismatchError("relu grad shape mismatch")
        return dy * self._mask


class MaxPool2x2:
    """2x2 max pooling, stride 2; floor semantics for odd spatial extents.

    The within-window argmax is cached on forward and the backward pass
    routes each gradient solely to that position (ties already resolved
    to the first element in row-major window order by the kernel).
    """

    def __init__(self):
        self._idx = None
        self._in_shape = None

    def forward(self, x, train=True):
        if x.ndim != 4:
            raise ShapeMismatchError(f"maxpool expects rank 4, got {tuple(x.shape)}")
        y, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x))
        self._idx = idx
        self._in_shape = x.shape
        return y

    def backward(self, dy):
        n, h, w, c = self._in_shape
        if dy.shape != self._idx.shape:
            raise ShapeMismatchError(
                f"maxpool grad shape {tuple(dy.shape)} != {tuple(self._idx.shape)}")
        return kernels.maxpool2x2_backward(np.ascontiguousarray(dy), self._idx, h, w)


class Flatten:
    def __init__(self):
        self._in_shape = None

    def forward(self, x, train=True):
        self._in_shape = x.shape
        return np.ascontiguousarray(x).reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense:
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.dtype = np.dtype(dtype)
        if rng is None:
            self.W = np.full((self.n_in, self.n_out), np.nan, dtype=self.dtype)
            self.b = np.full((self.n_out,), np.nan, dtype=self.dtype)
        else:
            self.W = glorot_uniform(rng, (self.n_in, self.n_out),
                                    self.n_in, self.n_out, self.dtype)
            self.b = np.zeros(self.n_out, dtype=self.dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatchError(
                f"dense expects [N,{self.n_in}], got {tuple(x.shape)}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        if dy.shape != (self._x.shape[0], self.n_out):
            raise ShapeMismatchError(
                f"dense grad shape {tuple(dy.shape)} != {(self._x.shape[0], self.n_out)}")
        self.dW[...] = self._x.T @ dy
        self.db[...] = dy.sum(axis=0)
        return dy @ self.W.T


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Returns ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / N``.
    """
    if logits.ndim != 2:
        raise ShapeMismatchError(f"logits must be [N,K], got {tuple(logits.shape)}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels must be [{n}], got {tuple(labels.shape)}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidLabelError(f"labels must lie in [0,{k})")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    loss = float(-np.log(np.maximum(p[np.arange(n), labels], 1e-38)).mean())
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False)
