"""SGD with momentum/weight decay and the plateau learning-rate schedule."""

import math

import numpy as np

from .errors import ConfigValidationError, InvalidMetricError, RegistryMismatchError


class SGDMomentum:
    """Momentum SGD with loss-coupled L2 weight decay.

    Per parameter: ``g' = g + weight_decay*p``; ``v <- rho*v + g'``;
    ``p <- p - lr*v``.  Velocity buffers are keyed by registry name and
    created lazily, so one optimizer instance can drive any stable subset
    of a network's registry (e.g. only a compressed layer).
    """

    def __init__(self, lr, rho=0.9, weight_decay=0.0):
        if lr <= 0:
            raise ConfigValidationError("lr", "must be > 0")
        if not 0 <= rho < 1:
            raise ConfigValidationError("momentum", "must lie in [0,1)")
        if weight_decay < 0:
            raise ConfigValidationError("weight_decay", "must be >= 0")
        self.lr = float(lr)
        self.rho = float(rho)
        self.weight_decay = float(weight_decay)
        self.velocity = {}

    def step(self, params, grads):
        if set(params) != set(grads):
            raise RegistryMismatchError(
                f"param/grad names differ: {sorted(set(params) ^ set(grads))}")
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise RegistryMismatchError(
                    f"{name}: grad shape {g.shape} != param shape {p.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            if self.weight_decay:
                g = g + p.dtype.type(self.weight_decay) * p
            v *= p.dtype.type(self.rho)
            v += g
            p -= p.dtype.type(self.lr) * v


class PlateauScheduler:
    """Learning-rate decay on metric plateaus.

    Each epoch: an improving metric records the new best and resets the
    wait counter; otherwise, if cooling down, the cooldown counter
    decrements; otherwise the wait counter increments and once it exceeds
    ``patience`` the rate is multiplied by ``factor`` (floored at
    ``min_lr``), the wait resets, and a cooldown starts.
    """

    def __init__(self, opt, factor, patience, cooldown, min_lr, mode="max"):
        if not 0 < factor < 1:
            raise ConfigValidationError("lr_decay", "factor must lie in (0,1)")
        if patience < 0:
            raise ConfigValidationError("patience", "must be >= 0")
        if cooldown < 0:
            raise ConfigValidationError("cooldown", "must be >= 0")
        if min_lr < 0:
            raise ConfigValidationError("lr_min", "must be >= 0")
        if mode not in ("max", "min"):
            raise ConfigValidationError("mode", "must be 'max' or 'min'")
        self.opt = opt
        self.factor = float(factor)
        self.patience = int(patience)
        self.cooldown = int(cooldown)
        self.min_lr = float(min_lr)
        self.mode = mode
        self.best = None
        self.wait = 0
        self.cooling = 0

    def _improved(self, metric):
        if self.best is None:
            return True
        if self.mode == "max":
            return metric > self.best
        return metric < self.best

    def update(self, metric):
        """Consume one epoch's monitored metric; returns the current lr."""
        metric = float(metric)
        if math.isnan(metric):
            raise InvalidMetricError("plateau metric is NaN")
        if self._improved(metric):
            self.best = metric
            self.wait = 0
        elif self.cooling > 0:
            self.cooling -= 1
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
                self.wait = 0
                self.cooling = self.cooldown
        return self.opt.lr
