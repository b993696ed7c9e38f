"""Criticality measures: accuracy and epochs-to-convergence."""

import numpy as np

from .errors import EmptyBatchError, InvalidMetricError, InvalidShapeError


def accuracy(logits, labels):
    """Fraction of argmax predictions matching the labels.

    Argmax ties resolve to the lowest class index.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise InvalidShapeError(
            f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    if logits.shape[0] == 0:
        raise EmptyBatchError("accuracy over an empty batch")
    return float((logits.argmax(axis=1) == labels).mean())


def convergence_epoch(series, frac=0.99, mode="multiplicative"):
    """Smallest epoch index whose accuracy reaches the share ``frac`` of
    the series maximum.

    ``multiplicative`` thresholds at ``frac * max``; ``additive`` at
    ``max - (1 - frac)``.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size == 0:
        raise InvalidShapeError("series must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(series)):
        raise InvalidMetricError("accuracy series contains NaN/Inf")
    if not 0 < frac <= 1:
        raise InvalidShapeError(f"frac must lie in (0,1], got {frac}")
    if mode == "multiplicative":
        threshold = frac * series.max()
    elif mode == "additive":
        threshold = series.max() - (1.0 - frac)
    else:
        raise InvalidShapeError(f"unknown mode {mode!r}")
    return int(np.argmax(series >= threshold))
