"""Feature extraction and distances used by both evaluation pipelines.

Features are a fixed random projection of the latent followed by L2
normalization, so every distance below lives on the unit sphere.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import UNIT_TOL, check_unit, check_vector
from .exceptions import DegenerateFeature, NotUnitNorm, ShapeMismatch

FEATURE_DIM = 32
FEATURE_SEED = 3141592653
MAX_SET_SIZE = 512
SET_LABELS = ("X_O", "X_A", "X_t")


def make_projection(latent_dim, n_features=FEATURE_DIM, seed=FEATURE_SEED):
    return np.random.default_rng(seed).standard_normal((n_features, latent_dim))


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Frozen projection + normalization standing in for an image embedder.

    ``fit`` only records the latent dimension; the projection is a pure
    function of ``(seed, n_features, latent_dim)``.
    """

    def __init__(self, n_features=FEATURE_DIM, seed=FEATURE_SEED, latent_dim=None):
        self.n_features = n_features
        self.seed = seed
        self.latent_dim = latent_dim

    def fit(self, X=None, y=None):
        dim = self.latent_dim
        if dim is None:
            if X is None:
                raise ShapeMismatch("latent_dim unknown: pass it or fit on data")
            dim = np.atleast_2d(X).shape[1]
        self.projection_ = make_projection(dim, self.n_features, self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "projection_"):
            self.fit(X)
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.projection_.shape[1]:
            raise ShapeMismatch(f"expected latents of dimension {self.projection_.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ShapeMismatch("latents must be finite")
        F = X @ self.projection_.T
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateFeature("cannot normalize a zero feature vector")
        F = F / norms
        return F[0] if single else F


def extract_features(z, fe):
    """Project a single latent and normalize it to unit length."""
    z = check_vector(z, name="latent")
    if not np.any(z):
        raise DegenerateFeature("zero latent has no direction")
    return fe.transform(z)


def cosine_similarity(a, b):
    """Cosine of two unit vectors, computed as 1 - ||a - b||^2 / 2.

    The polarization form is exact (1.0) for identical inputs, which a raw
    dot product of normalized vectors is not.
    """
    a = check_unit(a, "a")
    b = check_unit(b, "b")
    diff = a - b
    return float(np.clip(1.0 - 0.5 * (diff @ diff), -1.0, 1.0))


def w2_point(a, b):
    """2-Wasserstein distance between two Dirac measures: ||a - b||."""
    a = check_unit(a, "a")
    b = check_unit(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatch("feature vectors differ in dimension")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    label: str = "X_O"

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if v.shape[0] < 1:
            raise ShapeMismatch("an embedding set needs at least one vector")
        if not np.all(np.abs(np.linalg.norm(v, axis=1) - 1.0) <= UNIT_TOL):
            raise NotUnitNorm("every vector in an embedding set must be unit-norm")
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return self.vectors.shape[0]


def _as_set(X):
    return X if isinstance(X, EmbeddingSet) else EmbeddingSet(X)


def squared_cost_matrix(A, B):
    return np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)


def optimal_assignment(A, B):
    """Permutation ``perm`` minimizing sum_i ||A[i] - B[perm[i]]||^2."""
    A, B = _as_set(A), _as_set(B)
    if len(A) != len(B):
        raise ShapeMismatch(f"set sizes differ: {len(A)} vs {len(B)}")
    if len(A) > MAX_SET_SIZE:
        raise ShapeMismatch(f"sets larger than {MAX_SET_SIZE} are not supported")
    cost = squared_cost_matrix(A.vectors, B.vectors)
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)], cost


def w2_set(A, B, method="exact"):
    """2-Wasserstein distance between two equal-size empirical measures.

    ``method="exact"`` solves the assignment problem; ``"gaussian_diag"``
    fits diagonal Gaussians to each set and uses the closed form.
    """
    A, B = _as_set(A), _as_set(B)
    if method == "gaussian_diag":
        return w2_gaussian_diag(A, B)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    perm, cost = optimal_assignment(A, B)
    total = cost[np.arange(len(A)), perm].sum()
    return float(np.sqrt(total / len(A)))


def w2_gaussian_diag(A, B):
    """W2 between diagonal-covariance Gaussians fitted to each set."""
    A, B = _as_set(A).vectors, _as_set(B).vectors
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatch("feature dimensions differ")
    dm = A.mean(axis=0) - B.mean(axis=0)
    ds = A.std(axis=0) - B.std(axis=0)
    return float(np.sqrt(dm @ dm + ds @ ds))


@dataclass(frozen=True)
class WinRateRow:
    category: str
    proportion: float

    def __post_init__(self):
        if not 0.0 <= self.proportion <= 100.0:
            raise ValueError(f"proportion must be a percentage, got {self.proportion}")


def win_rate(d_orig, d_aug, category=""):
    """Percentage of aligned pairs where the augmented distance is strictly lower.

    Ties count against the augmented model.
    """
    d_orig = np.asarray(d_orig, dtype=np.float64)
    d_aug = np.asarray(d_aug, dtype=np.float64)
    if d_orig.shape != d_aug.shape or d_orig.ndim != 1:
        raise ShapeMismatch("distance lists must be 1-D and of equal length")
    if d_orig.size == 0:
        raise ShapeMismatch("need at least one pair")
    wins = int(np.count_nonzero(d_aug < d_orig))
    return WinRateRow(category=category, proportion=100.0 * wins / d_orig.size)


def best_of_aug(d_mask, d_noise):
    """Per-prompt distance of the better augmented model."""
    return min(float(d_mask), float(d_noise))
