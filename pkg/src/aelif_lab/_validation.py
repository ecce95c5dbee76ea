"""Small input checks shared by the estimators and the functional API."""

import numpy as np

from .exceptions import ConfigError, NotUnitNorm, ShapeMismatch

UNIT_TOL = 1e-9


def check_fraction(p, name="p"):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_nonnegative(x, name):
    x = float(x)
    if not x >= 0.0:
        raise ConfigError(f"{name} must be >= 0, got {x}")
    return x


def check_embedding(z):
    """Return ``z`` as a finite float64 array of shape (L, d)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ShapeMismatch(f"expected an (L, d) embedding sequence, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ShapeMismatch("embedding sequence contains non-finite values")
    return z


def check_vector(v, dim=None, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ShapeMismatch(f"{name} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ShapeMismatch(f"{name} contains non-finite values")
    return v


def check_unit(v, name="vector"):
    v = check_vector(v, name=name)
    norm = np.sqrt(v @ v)
    if abs(norm - 1.0) > UNIT_TOL:
        raise NotUnitNorm(f"{name} must be unit-norm, has norm {norm!r}")
    return v


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a SeedSequence or an existing Generator (returned
    as-is so callers can share a stream).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
