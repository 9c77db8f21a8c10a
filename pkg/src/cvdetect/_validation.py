"""Input validation helpers shared by the estimators and pipeline functions."""

import math
import numbers

import numpy as np


def check_unit_weight(value, name):
    """Return ``value`` as float, raising if it is not a real number in [0, 1]."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return int(value)


def check_rate(value, name, upper_inclusive=False):
    """Probability-like rate in [0, 1) (or [0, 1] with ``upper_inclusive``)."""
    value = float(value)
    ok = 0.0 <= value <= 1.0 if upper_inclusive else 0.0 <= value < 1.0
    if not ok:
        bound = "]" if upper_inclusive else ")"
        raise ValueError(f"{name} must lie in [0, 1{bound}, got {value!r}")
    return value


def check_finite(array, name):
    array = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return array


def check_vector(x, name, dim=None):
    x = check_finite(x, name)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"{name} has dimension {x.shape[0]}, expected {dim}")
    return x


def check_scores_labels(scores, labels):
    """Validate a score/label pair for binary detection metrics.

    Labels may be booleans, 0/1 integers or the strings ``"pos"``/``"neg"``.
    Returns float scores and a boolean positive mask.
    """
    scores = check_finite(scores, "scores").ravel()
    labels = np.asarray(labels)
    if labels.dtype.kind in "US":
        unknown = set(np.unique(labels)) - {"pos", "neg"}
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}")
        positive = labels == "pos"
    else:
        positive = labels.astype(bool)
        if not np.array_equal(positive.astype(labels.dtype), labels):
            raise ValueError("numeric labels must be 0 or 1")
    positive = positive.ravel()
    if scores.shape != positive.shape:
        raise ValueError(f"{scores.shape[0]} scores but {positive.shape[0]} labels")
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == positive.size:
        raise ValueError("both positive and negative labels are required")
    return scores, positive


def weight_grid(step=0.1):
    """Weights 0, step, ..., 1 computed from integer multiples (no drift)."""
    n = int(round(1.0 / step))
    if not math.isclose(n * step, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"step {step} does not divide [0, 1] evenly")
    return [i / n for i in range(n + 1)]
