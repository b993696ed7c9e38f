import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nettriage.errors import (EmptyBatchError, InvalidMetricError,
                              InvalidShapeError)
from nettriage.metrics import accuracy, convergence_epoch


def logits_for(preds, k=4):
    out = np.zeros((len(preds), k), dtype=np.float32)
    for i, p in enumerate(preds):
        out[i, p] = 1.0
    return out


def test_accuracy_all_correct():
    assert accuracy(logits_for([0, 1, 2]), np.array([0, 1, 2])) == 1.0


def test_accuracy_none_correct():
    assert accuracy(logits_for([0, 0, 0]), np.array([1, 2, 3])) == 0.0


def test_accuracy_three_of_four():
    assert accuracy(logits_for([0, 1, 2, 0]), np.array([0, 1, 2, 3])) == 0.75


def test_accuracy_tie_breaks_to_lowest_class():
    logits = np.zeros((1, 5), dtype=np.float32)
    assert accuracy(logits, np.array([0])) == 1.0
    assert accuracy(logits, np.array([3])) == 0.0


def test_accuracy_empty_batch():
    with pytest.raises(EmptyBatchError):
        accuracy(np.zeros((0, 3), dtype=np.float32), np.zeros(0, dtype=int))


def test_convergence_worked_example():
    # threshold 0.99 * 0.915 = 0.90585: first reach at epoch 2
    assert convergence_epoch([0.5, 0.9, 0.91, 0.915]) == 2


def test_convergence_constant_series():
    assert convergence_epoch([0.7, 0.7, 0.7]) == 0


def test_convergence_frac_one_is_argmax():
    assert convergence_epoch([0.1, 0.2, 0.3, 0.4], frac=1.0) == 3


def test_convergence_additive_mode():
    # max 0.90, threshold 0.90 - 0.01 = 0.89
    assert convergence_epoch([0.5, 0.895, 0.9], frac=0.99,
                             mode="additive") == 1


def test_convergence_rejects_bad_input():
    with pytest.raises(InvalidShapeError):
        convergence_epoch([])
    with pytest.raises(InvalidMetricError):
        convergence_epoch([0.5, float("nan")])
    with pytest.raises(InvalidShapeError):
        convergence_epoch([0.5], frac=1.5)


series_strat = st.lists(
    st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
    min_size=1, max_size=40)


@given(series_strat)
def test_convergence_bounds(series):
    e = convergence_epoch(series)
    assert 0 <= e < len(series)
    assert series[e] >= 0.99 * max(series) - 1e-12


@given(series_strat)
def test_convergence_is_first_crossing(series):
    e = convergence_epoch(series)
    threshold = 0.99 * max(series)
    for i in range(e):
        assert series[i] < threshold


@given(series_strat)
def test_convergence_prefix_monotonicity(series):
    # appending values below the old threshold never moves the epoch earlier
    e = convergence_epoch(series)
    extended = series + [0.0]
    assert convergence_epoch(extended) == e


@given(series_strat,
       st.floats(min_value=0.01, max_value=1.0, allow_nan=False),
       st.floats(min_value=0.01, max_value=1.0, allow_nan=False))
def test_convergence_monotone_in_frac(series, f1, f2):
    lo, hi = sorted((f1, f2))
    assert convergence_epoch(series, frac=lo) <= convergence_epoch(series,
                                                                   frac=hi)


@given(series_strat,
       st.floats(min_value=0.01, max_value=1.0, allow_nan=False))
def test_convergence_never_after_argmax(series, frac):
    import numpy as np
    assert convergence_epoch(series, frac=frac) <= int(np.argmax(series))


@given(st.lists(st.integers(min_value=0, max_value=3), min_size=1,
                max_size=20),
       st.randoms(use_true_random=False))
def test_accuracy_permutation_invariant(labels, rnd):
    labels = np.array(labels)
    logits = np.random.default_rng(0).normal(size=(len(labels), 4)).astype(np.float32)
    perm = list(range(len(labels)))
    rnd.shuffle(perm)
    assert (accuracy(logits, labels)
            == accuracy(logits[perm], labels[perm]))
