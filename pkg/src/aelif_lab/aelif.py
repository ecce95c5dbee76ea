"""Embedding-level augmentations applied between the text encoder and the
denoiser: token masking and multiplicative noise.

Both operators pick exactly ``floor(L * p)`` token positions without
replacement and leave every other position bitwise unchanged.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_embedding, check_fraction, check_nonnegative, check_random_state
from .exceptions import ConfigError

MODES = ("none", "mask", "noise_conv")


@dataclass(frozen=True)
class AelifConfig:
    """Augmentation settings as they appear in run-config JSON.

    During training each example is augmented with probability
    ``apply_prob``, with magnitude drawn uniformly from ``[0, p_max]``.
    At inference ``p_max`` is used directly as the magnitude.
    """

    mode: str = "none"
    p_max: float = 0.3
    mu: float = 0.0
    sigma: float = 1.0
    apply_prob: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown AELIF mode {self.mode!r}; expected one of {MODES}")
        check_fraction(self.p_max, "p_max")
        check_fraction(self.apply_prob, "apply_prob")
        check_nonnegative(self.sigma, "sigma")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"mode", "p_max", "mu", "sigma", "apply_prob"}
        if unknown:
            raise ConfigError(f"unknown AELIF config keys: {sorted(unknown)}")
        return cls(**data)


NO_AUGMENTATION = AelifConfig(mode="none")


def n_selected(L, p):
    # floor(L * p) computed in floats would give floor(10 * 0.3) == 2;
    # round first to absorb representation error on grid values.
    return min(L, math.floor(round(L * p, 9)))


def select_positions(L, p, rng):
    """Draw ``floor(L * p)`` distinct positions in ``[0, L)``, sorted.

    The generator is left untouched when nothing is selected, so ``p = 0``
    never perturbs downstream draws.
    """
    p = check_fraction(p)
    if L < 1:
        raise ConfigError(f"sequence length must be >= 1, got {L}")
    n = n_selected(L, p)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(L, size=n, replace=False))


def aelif_mask(z, p, rng):
    """Replace the selected token embeddings with the zero vector."""
    z = check_embedding(z)
    return augment_with_multiplier(z, "mask", p, 0.0, 0.0, rng)[0]


def aelif_noise_conv(z, p, mu, sigma, rng):
    """Multiply each selected token embedding elementwise by N(mu, sigma^2) noise."""
    z = check_embedding(z)
    sigma = check_nonnegative(sigma, "sigma")
    return augment_with_multiplier(z, "noise_conv", p, mu, sigma, rng)[0]


def augment_with_multiplier(z, mode, p, mu, sigma, rng):
    """Apply one operator and also return the per-element multiplier.

    ``z_aug == z * multiplier`` elementwise (masked rows are set to +0.0
    rather than computed, so negative entries never become -0.0). The
    multiplier is what a backward pass needs to route gradients to the
    encoder. The input is never mutated.
    """
    L, d = z.shape
    multiplier = np.ones((L, d))
    if mode == "none":
        return z.copy(), multiplier
    if mode not in MODES:
        raise ConfigError(f"unknown AELIF mode {mode!r}")
    positions = select_positions(L, p, rng)
    out = z.copy()
    if positions.size == 0:
        return out, multiplier
    if mode == "mask":
        multiplier[positions] = 0.0
        out[positions] = 0.0
    else:
        multiplier[positions] = rng.normal(mu, sigma, size=(positions.size, d))
        out[positions] = z[positions] * multiplier[positions]
    return out, multiplier


def nested_noise_conv(z, p_grid, mu, sigma, rng):
    """Noise-convolve ``z`` at several magnitudes with common random numbers.

    One permutation of positions and one (L, d) noise matrix are drawn; the
    sequence for magnitude ``p`` perturbs the first ``floor(L * p)`` entries
    of that permutation. Each output is marginally an ``aelif_noise_conv``
    draw, and larger magnitudes perturb a superset of the positions.
    """
    z = check_embedding(z)
    sigma = check_nonnegative(sigma, "sigma")
    L, d = z.shape
    order = rng.permutation(L)
    noise = rng.normal(mu, sigma, size=(L, d))
    out = []
    for p in p_grid:
        sel = order[: n_selected(L, check_fraction(p))]
        zp = z.copy()
        zp[sel] = z[sel] * noise[sel]
        out.append(zp)
    return out


def augment_for_training(z, config, rng):
    """Training-time policy: augment with probability ``apply_prob``,
    magnitude ~ U[0, p_max]."""
    if config.mode == "none":
        return augment_with_multiplier(z, "none", 0.0, 0.0, 0.0, rng)
    apply = rng.random() < config.apply_prob
    p = rng.uniform(0.0, config.p_max)
    if not apply:
        return augment_with_multiplier(z, "none", 0.0, 0.0, 0.0, rng)
    return augment_with_multiplier(z, config.mode, p, config.mu, config.sigma, rng)


def augment_for_inference(z, config, rng):
    """Inference-time policy: always apply at magnitude ``p_max``."""
    if config.mode == "none":
        return z
    z_aug, _ = augment_with_multiplier(z, config.mode, config.p_max, config.mu, config.sigma, rng)
    return z_aug


class AelifAugmenter(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping ``aelif_mask`` / ``aelif_noise_conv``.

    Parameters
    ----------
    mode : {"mask", "noise_conv", "none"}
    p : float
        Fraction of token positions to perturb.
    mu, sigma : float
        Noise distribution for ``noise_conv``.
    random_state : int, Generator or None

    ``transform`` accepts a single (L, d) array or a list of them (prompts
    of differing length) and returns the same structure.
    """

    def __init__(self, mode="mask", p=0.1, mu=0.0, sigma=1.0, random_state=None):
        self.mode = mode
        self.p = p
        self.mu = mu
        self.sigma = sigma
        self.random_state = random_state

    def fit(self, X=None, y=None):
        AelifConfig(mode=self.mode, p_max=self.p, mu=self.mu, sigma=self.sigma)
        self.rng_ = check_random_state(self.random_state)
        return self

    def _one(self, z):
        if self.mode == "mask":
            return aelif_mask(z, self.p, self.rng_)
        if self.mode == "noise_conv":
            return aelif_noise_conv(z, self.p, self.mu, self.sigma, self.rng_)
        return check_embedding(z).copy()

    def transform(self, X):
        if not hasattr(self, "rng_"):
            self.fit()
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return self._one(X)
        return [self._one(z) for z in X]
