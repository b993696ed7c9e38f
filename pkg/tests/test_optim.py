"""Optimizer update rule (hand-iterated values) and plateau scheduler
state machine, plus property tests over random metric sequences."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nettriage.errors import (ConfigValidationError, InvalidMetricError,
                              RegistryMismatchError)
from nettriage.optim import PlateauScheduler, SGDMomentum


def one_param(value):
    p = {"w": np.array([float(value)], dtype=np.float64)}
    return p


def test_plain_sgd_step():
    opt = SGDMomentum(lr=1.0, rho=0.0, weight_decay=0.0)
    p = one_param(1.0)
    opt.step(p, {"w": np.array([0.5])})
    assert p["w"][0] == pytest.approx(0.5)


def test_zero_grad_fixed_point():
    opt = SGDMomentum(lr=0.1, rho=0.9, weight_decay=0.0)
    p = one_param(3.0)
    opt.step(p, {"w": np.array([0.0])})
    assert p["w"][0] == 3.0


def test_momentum_two_step_hand_iteration():
    # v1 = 1, p1 = -0.1; v2 = 0.9*1 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
    opt = SGDMomentum(lr=0.1, rho=0.9, weight_decay=0.0)
    p = one_param(0.0)
    g = {"w": np.array([1.0])}
    opt.step(p, g)
    assert p["w"][0] == pytest.approx(-0.1, rel=1e-12)
    opt.step(p, g)
    assert p["w"][0] == pytest.approx(-0.29, rel=1e-12)


def test_weight_decay_couples_into_gradient():
    # g' = g + wd*p with g=0: pure shrink by lr*wd*p each step
    opt = SGDMomentum(lr=0.1, rho=0.0, weight_decay=0.5)
    p = one_param(2.0)
    opt.step(p, {"w": np.array([0.0])})
    assert p["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, rel=1e-12)


def test_weight_decay_zero_grad_monotone_shrink():
    opt = SGDMomentum(lr=0.01, rho=0.9, weight_decay=0.1)
    p = one_param(5.0)
    prev = abs(p["w"][0])
    for _ in range(20):
        opt.step(p, {"w": np.array([0.0])})
        cur = abs(p["w"][0])
        assert cur < prev
        prev = cur


def test_rho_zero_equals_vanilla_gd():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 3))
    opt = SGDMomentum(lr=0.05, rho=0.0, weight_decay=0.0)
    p = {"w": w.copy()}
    opt.step(p, {"w": g})
    np.testing.assert_allclose(p["w"], w - 0.05 * g, rtol=0, atol=1e-15)


def test_registry_mismatch_rejected():
    opt = SGDMomentum(lr=0.1)
    with pytest.raises(RegistryMismatchError):
        opt.step(one_param(1.0), {"other": np.array([1.0])})
    with pytest.raises(RegistryMismatchError):
        opt.step(one_param(1.0), {"w": np.zeros(2)})


def test_invalid_hyperparameters_rejected():
    with pytest.raises(ConfigValidationError):
        SGDMomentum(lr=0.0)
    with pytest.raises(ConfigValidationError):
        SGDMomentum(lr=0.1, rho=1.0)
    with pytest.raises(ConfigValidationError):
        SGDMomentum(lr=0.1, weight_decay=-0.1)


def make_sched(lr=0.001, factor=0.5, patience=1, cooldown=3, min_lr=1e-5,
               mode="max"):
    opt = SGDMomentum(lr=lr)
    return opt, PlateauScheduler(opt, factor=factor, patience=patience,
                                 cooldown=cooldown, min_lr=min_lr, mode=mode)


def test_scheduler_improving_never_decays():
    opt, sched = make_sched()
    for m in [0.1, 0.2, 0.3, 0.4, 0.5]:
        assert sched.update(m) == 0.001
    assert opt.lr == 0.001


def test_scheduler_plateau_trace_worked_example():
    opt, sched = make_sched(lr=0.001, factor=0.5, patience=1)
    assert sched.update(0.5) == 0.001   # first metric becomes best
    assert sched.update(0.5) == 0.001   # wait 1, not > patience
    assert sched.update(0.5) == 0.0005  # wait 2 > patience: decay
    assert opt.lr == 0.0005


def test_scheduler_min_lr_clamp():
    opt, sched = make_sched(lr=2e-5, factor=0.5, patience=0, cooldown=0,
                            min_lr=1e-5)
    sched.update(0.5)
    assert sched.update(0.5) == 1e-5
    for _ in range(5):
        assert sched.update(0.5) == 1e-5


def test_scheduler_cooldown_swallows_plateau_epochs():
    opt, sched = make_sched(lr=0.001, factor=0.5, patience=0, cooldown=2)
    sched.update(0.5)            # best
    assert sched.update(0.4) == 0.0005   # immediate decay, cooldown = 2
    assert sched.update(0.4) == 0.0005   # cooling 2 -> 1
    assert sched.update(0.4) == 0.0005   # cooling 1 -> 0
    assert sched.update(0.4) == 0.00025  # next plateau epoch decays again


def test_scheduler_improvement_during_cooldown_keeps_cooldown():
    opt, sched = make_sched(lr=0.001, factor=0.5, patience=0, cooldown=1)
    sched.update(0.5)
    sched.update(0.4)            # decay -> 0.0005, cooldown 1
    sched.update(0.6)            # improvement: cooldown NOT consumed
    sched.update(0.5)            # cooldown consumed here
    assert opt.lr == 0.0005
    sched.update(0.5)            # now waits are live again: decay
    assert opt.lr == 0.00025


def test_scheduler_rejects_nan():
    _, sched = make_sched()
    with pytest.raises(InvalidMetricError):
        sched.update(float("nan"))


def test_scheduler_min_mode_monitors_loss():
    opt, sched = make_sched(mode="min", patience=0, cooldown=0)
    sched.update(1.0)
    assert sched.update(0.5) == 0.001   # improving loss
    assert sched.update(0.7) == 0.0005  # worse loss decays


@given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False),
                min_size=1, max_size=60),
       st.integers(min_value=0, max_value=3),
       st.integers(min_value=0, max_value=4))
def test_scheduler_lr_nonincreasing_and_floored(metrics, patience, cooldown):
    opt, sched = make_sched(lr=0.001, factor=0.5, patience=patience,
                            cooldown=cooldown, min_lr=1e-5)
    prev = opt.lr
    for m in metrics:
        lr = sched.update(m)
        assert lr <= prev
        assert lr >= 1e-5
        prev = lr


@given(st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False),
                min_size=1, max_size=30))
def test_sgd_keeps_shapes_and_finiteness(grads):
    opt = SGDMomentum(lr=0.01, rho=0.9, weight_decay=0.001)
    p = {"w": np.ones(4, dtype=np.float64)}
    for g in grads:
        opt.step(p, {"w": np.full(4, g)})
        assert p["w"].shape == (4,)
        assert np.all(np.isfinite(p["w"]))
