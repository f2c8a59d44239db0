"""Input validation helpers shared across the package.

Estimators and feature ops accept either bare numpy arrays or the richer
dataclasses (Waveform, FeatureMatrix); these helpers normalize and check
them in one place so error messages stay consistent.
"""

import numbers

import numpy as np


def check_finite(x, name="array"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_feature_array(x, expected_dim=None, name="features"):
    """Coerce to a 2-D float array of shape (T, D) and validate it."""
    values = getattr(x, "values", x)
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames x dims), got shape {values.shape}")
    if values.shape[0] < 1 or values.shape[1] < 1:
        raise ValueError(f"{name} must have at least one frame and one dim, got {values.shape}")
    check_finite(values, name)
    if expected_dim is not None and values.shape[1] != expected_dim:
        raise ValueError(
            f"{name} has dim {values.shape[1]}, expected {expected_dim}"
        )
    return values


def check_feature_list(xs, expected_dim=None, name="features"):
    if len(xs) == 0:
        raise ValueError(f"{name}: empty input list")
    return [check_feature_array(x, expected_dim, f"{name}[{i}]") for i, x in enumerate(xs)]


def check_sample_rate(sample_rate):
    if not isinstance(sample_rate, numbers.Integral) or sample_rate <= 0:
        raise ValueError(f"sample_rate must be a positive integer, got {sample_rate!r}")
    return int(sample_rate)


def check_seed(seed):
    if not isinstance(seed, numbers.Integral):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    return int(seed)


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def check_in_vocab(value, vocabulary, field):
    if value not in vocabulary:
        raise ValueError(
            f"unknown {field} value {value!r}; expected one of {sorted(vocabulary)}"
        )
    return value
