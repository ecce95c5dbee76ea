"""Minimal conditional DDPM over small synthetic latents.

The denoiser is a two-hidden-layer SiLU MLP fed with the noisy latent, a
sinusoidal time embedding and a text condition (the mean of the, possibly
augmented, token embeddings). Gradients are derived by hand and flow into
the text encoder tables as well, so fine-tuning touches both networks.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_random_state
from .aelif import NO_AUGMENTATION, AelifConfig, augment_for_inference, augment_for_training
from .exceptions import ConfigError, NumericFailure, ShapeMismatch
from .text_model import (
    EMBED_DIM,
    MAX_LEN,
    TextEncoderParams,
    TokenSequence,
    Vocabulary,
    build_vocab,
    encode,
    init_encoder_params,
    tokenize,
)

LATENT_DIM = 8
HIDDEN = 64
TIME_FEATURES = 8
TIME_MAX_PERIOD = 1000.0

# 1000-step DDPM betas (1e-4 .. 0.02) rescaled by 1000 / T for T = 100, so the
# total injected noise matches the standard schedule and alpha_bar[-1] ~ 4e-5.
DEFAULT_T = 100
DEFAULT_BETA_MIN = 1e-3
DEFAULT_BETA_MAX = 0.2


# --------------------------------------------------------------------------
# noise schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray = field(repr=False)

    @property
    def T(self):
        return self.beta.shape[0]

    def to_dict(self):
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, data):
        return schedule_from_betas(data["beta"])


def schedule_from_betas(beta):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size < 1:
        raise ConfigError("beta must be a non-empty 1-D sequence")
    if np.any(beta <= 0) or np.any(beta >= 1):
        raise ConfigError("every beta must lie in (0, 1)")
    if np.any(np.diff(beta) < 0):
        raise ConfigError("beta must be nondecreasing")
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def make_schedule(T=DEFAULT_T, beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX):
    """Linear beta schedule with cumulative products alpha_bar."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    return schedule_from_betas(np.linspace(beta_min, beta_max, int(T)))


def _check_t(t, schedule):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise ConfigError(f"timestep out of range [0, {schedule.T})")
    return t


def forward_noise(z0, t, eps, schedule):
    """z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps.

    Works on a single latent (scalar ``t``) or a batch (``t`` of shape (B,)).
    """
    t = _check_t(t, schedule)
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not np.all(np.isfinite(eps)):
        raise ShapeMismatch("eps contains non-finite values")
    ab = schedule.alpha_bar[t]
    if z0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(t, n_features=TIME_FEATURES):
    """Sinusoidal features: [sin(t w_k), cos(t w_k)] for n_features / 2 frequencies."""
    t = np.asarray(t, dtype=np.float64)
    half = n_features // 2
    freqs = np.exp(-math.log(TIME_MAX_PERIOD) * np.arange(half) / half)
    args = t[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass
class DenoiserParams:
    """Weights of the noise predictor plus the text encoder tables."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    encoder: TextEncoderParams

    @property
    def latent_dim(self):
        return self.W3.shape[0]

    @property
    def cond_dim(self):
        return self.encoder.dim

    def arrays(self):
        """Name -> array view of every trainable tensor, encoder included."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "encoder"}
        out["embedding_table"] = self.encoder.embedding_table
        out["positional_table"] = self.encoder.positional_table
        return out

    @classmethod
    def from_arrays(cls, arrays):
        enc = TextEncoderParams(arrays["embedding_table"], arrays["positional_table"])
        return cls(**{k: arrays[k] for k in ("W1", "b1", "W2", "b2", "W3", "b3")}, encoder=enc)

    def copy(self):
        return DenoiserParams.from_arrays({k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self):
        return DenoiserParams.from_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})

    def axpy(self, alpha, other):
        """In place: self += alpha * other."""
        for mine, theirs in zip(self.arrays().values(), other.arrays().values()):
            mine += alpha * theirs
        return self

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def to_dict(self):
        return {k: v.tolist() for k, v in self.arrays().items()}

    @classmethod
    def from_dict(cls, data):
        return cls.from_arrays({k: np.asarray(v, dtype=np.float64) for k, v in data.items()})


def init_denoiser_params(vocab, rng, latent_dim=LATENT_DIM, hidden=HIDDEN,
                         cond_dim=EMBED_DIM, max_len=MAX_LEN):
    rng = check_random_state(rng)
    encoder = init_encoder_params(vocab, rng, dim=cond_dim, max_len=max_len)
    n_in = latent_dim + TIME_FEATURES + cond_dim

    def dense(n_out, n_inputs):
        return rng.standard_normal((n_out, n_inputs)) / np.sqrt(n_inputs)

    return DenoiserParams(
        W1=dense(hidden, n_in), b1=np.zeros(hidden),
        W2=dense(hidden, hidden), b2=np.zeros(hidden),
        W3=dense(latent_dim, hidden), b3=np.zeros(latent_dim),
        encoder=encoder,
    )


# --------------------------------------------------------------------------
# network forward / backward
# --------------------------------------------------------------------------


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _silu(a):
    return a * _sigmoid(a)


def _silu_grad(a):
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


def _mlp_forward(params, x):
    a1 = x @ params.W1.T + params.b1
    h1 = _silu(a1)
    a2 = h1 @ params.W2.T + params.b2
    h2 = _silu(a2)
    out = h2 @ params.W3.T + params.b3
    return out, (x, a1, h1, a2, h2)


def _mlp_backward(params, cache, dout):
    """Gradients of sum(dout * out) w.r.t. the MLP weights and its input."""
    x, a1, h1, a2, h2 = cache
    grads = {"W3": dout.T @ h2, "b3": dout.sum(axis=0)}
    da2 = (dout @ params.W3) * _silu_grad(a2)
    grads["W2"] = da2.T @ h1
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ params.W2) * _silu_grad(a1)
    grads["W1"] = da1.T @ x
    grads["b1"] = da1.sum(axis=0)
    return grads, da1 @ params.W1


def _network_input(z_t, t, cond):
    return np.concatenate([z_t, timestep_embedding(t), cond], axis=-1)


def denoise_predict(params, z_t, t, cond):
    """Predict the injected noise for one latent or a batch of latents.

    ``cond`` is the text condition (mean of the token embedding sequence).
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    single = z_t.ndim == 1
    z_t2 = np.atleast_2d(z_t)
    cond2 = np.atleast_2d(cond)
    t2 = np.atleast_1d(np.asarray(t))
    if z_t2.shape[1] != params.latent_dim:
        raise ShapeMismatch(f"latent must have dimension {params.latent_dim}, got {z_t2.shape[1]}")
    if cond2.shape[1] != params.cond_dim:
        raise ShapeMismatch(f"condition must have dimension {params.cond_dim}, got {cond2.shape[1]}")
    if not (z_t2.shape[0] == cond2.shape[0] == t2.shape[0]):
        raise ShapeMismatch("batch sizes of z_t, t and cond disagree")
    out, _ = _mlp_forward(params, _network_input(z_t2, t2, cond2))
    return out[0] if single else out


def denoise_vjp(params, z_t, t, cond, upstream):
    """Vector-Jacobian product of ``denoise_predict`` w.r.t. the MLP weights.

    Returns a dict of weight gradients for ``sum(upstream * output)``, plus
    the gradient w.r.t. ``cond`` under the key ``"cond"``.
    """
    x = _network_input(np.atleast_2d(z_t), np.atleast_1d(t), np.atleast_2d(cond))
    _, cache = _mlp_forward(params, x)
    grads, dx = _mlp_backward(params, cache, np.atleast_2d(upstream))
    grads["cond"] = dx[:, params.latent_dim + TIME_FEATURES:]
    return grads


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def noise_prediction_loss(eps, eps_hat):
    """Batch mean of the squared L2 residual ||eps - eps_hat||^2."""
    eps = np.atleast_2d(eps)
    return float(np.mean(np.sum((eps - np.atleast_2d(eps_hat)) ** 2, axis=1)))


def _as_batch(batch):
    batch = list(batch)
    if not batch:
        raise ConfigError("batch must contain at least one (latent, tokens) pair")
    z0 = np.stack([np.asarray(z, dtype=np.float64) for z, _ in batch])
    tokens = [tok if isinstance(tok, TokenSequence) else TokenSequence(tuple(tok)) for _, tok in batch]
    return z0, tokens


def ldm_loss(params, batch, schedule, aelif=NO_AUGMENTATION, rng=None, aug_rng=None):
    """Noise-prediction loss E||eps - eps_theta(z_t, t, tau(y))||^2 and its gradient.

    Parameters
    ----------
    params : DenoiserParams
    batch : sequence of (z0, TokenSequence)
    schedule : NoiseSchedule
    aelif : AelifConfig
        Training-time augmentation applied to each encoded prompt before
        it is pooled into the condition.
    rng : Generator
        Draws the timesteps and the noise (t first, then eps).
    aug_rng : Generator, optional
        Stream for augmentation draws; defaults to ``rng``. Keeping it
        separate lets differently-augmented runs share t and eps.

    Returns
    -------
    loss : float
    grads : DenoiserParams
    """
    rng = check_random_state(rng)
    aug_rng = rng if aug_rng is None else aug_rng
    z0, tokens = _as_batch(batch)
    B, D = z0.shape
    if D != params.latent_dim:
        raise ShapeMismatch(f"latents must have dimension {params.latent_dim}, got {D}")

    t = rng.integers(0, schedule.T, size=B)
    eps = rng.standard_normal((B, D))
    z_t = forward_noise(z0, t, eps, schedule)

    multipliers = []
    cond = np.empty((B, params.cond_dim))
    for i, tok in enumerate(tokens):
        emb = encode(tok, params.encoder)
        emb_aug, mult = augment_for_training(emb, aelif, aug_rng)
        multipliers.append(mult)
        cond[i] = emb_aug.mean(axis=0)

    x = _network_input(z_t, t, cond)
    eps_hat, cache = _mlp_forward(params, x)
    resid = eps_hat - eps
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))

    mlp_grads, dx = _mlp_backward(params, cache, 2.0 * resid / B)
    dcond = dx[:, D + TIME_FEATURES:]
    g_emb = np.zeros_like(params.encoder.embedding_table)
    g_pos = np.zeros_like(params.encoder.positional_table)
    for i, tok in enumerate(tokens):
        L = len(tok)
        d_rows = multipliers[i] * (dcond[i] / L)
        np.add.at(g_emb, np.asarray(tok.tokens), d_rows)
        g_pos[:L] += d_rows
    grads = DenoiserParams.from_arrays({**mlp_grads, "embedding_table": g_emb, "positional_table": g_pos})
    return loss, grads


def dreambooth_loss(params, inst_batch, prior_batch, lam, schedule, aelif=NO_AUGMENTATION,
                    rng=None, aug_rng=None, prior_rng=None, prior_aug_rng=None):
    """Instance loss + lam * prior-preservation loss, with gradients.

    The instance term consumes ``rng`` first, so with ``lam = 0`` the result
    equals ``ldm_loss`` on the instance batch. The prior term continues on
    the same streams unless ``prior_rng`` / ``prior_aug_rng`` are given.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    rng = check_random_state(rng)
    inst_loss, inst_grads = ldm_loss(params, inst_batch, schedule, aelif, rng, aug_rng)
    prior_rng = rng if prior_rng is None else prior_rng
    prior_aug_rng = aug_rng if prior_aug_rng is None else prior_aug_rng
    prior_loss, prior_grads = ldm_loss(params, prior_batch, schedule, aelif, prior_rng, prior_aug_rng)
    return inst_loss + lam * prior_loss, inst_grads.axpy(lam, prior_grads)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 1e-2
    seed: int = 0
    lam: float = 1.0
    aelif: AelifConfig = NO_AUGMENTATION

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (half instance, half prior)")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    def to_dict(self):
        return {"steps": self.steps, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "seed": self.seed,
                "lambda": self.lam, "aelif": self.aelif.to_dict()}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        aelif = AelifConfig.from_dict(data.pop("aelif", {"mode": "none"}))
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data, aelif=aelif)


@dataclass(frozen=True)
class DreamBoothDataset:
    """Instance latents paired with P_inst, prior latents paired with P_prior."""

    instance_latents: np.ndarray
    prior_latents: np.ndarray
    instance_tokens: TokenSequence
    prior_tokens: TokenSequence
    schedule: NoiseSchedule = None


class _ShuffledIndex:
    """Endless index stream that reshuffles after every pass."""

    def __init__(self, n, rng):
        self.n, self.rng = n, rng
        self.order, self.pos = rng.permutation(n), 0

    def take(self, k):
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            if self.pos == self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            out[i] = self.order[self.pos]
            self.pos += 1
        return out


def train(params, dataset, config):
    """Plain SGD on the prior-preserving DreamBooth objective.

    Each minibatch is half instance pairs, half prior pairs. Returns a new
    parameter set and the per-step loss trace; ``params`` is not modified.

    Raises
    ------
    NumericFailure
        If the loss or the weights become non-finite; ``.step`` holds the
        offending step index.
    """
    params = params.copy()
    trace = []
    if config.steps == 0:
        return params, trace
    root = np.random.SeedSequence(config.seed)
    data_ss, noise_ss, aug_ss = root.spawn(3)
    data_rng = np.random.default_rng(data_ss)
    noise_rng = np.random.default_rng(noise_ss)
    aug_rng = np.random.default_rng(aug_ss)

    inst = np.asarray(dataset.instance_latents, dtype=np.float64)
    prior = np.asarray(dataset.prior_latents, dtype=np.float64)
    inst_idx = _ShuffledIndex(len(inst), data_rng)
    prior_idx = _ShuffledIndex(len(prior), data_rng)
    n_inst = config.batch_size // 2
    n_prior = config.batch_size - n_inst
    schedule = dataset.schedule if dataset.schedule is not None else make_schedule()

    for step in range(config.steps):
        inst_batch = [(inst[i], dataset.instance_tokens) for i in inst_idx.take(n_inst)]
        prior_batch = [(prior[i], dataset.prior_tokens) for i in prior_idx.take(n_prior)]
        # divergence is reported through NumericFailure below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = dreambooth_loss(params, inst_batch, prior_batch, config.lam, schedule,
                                          config.aelif, noise_rng, aug_rng)
        if not math.isfinite(loss):
            raise NumericFailure(f"loss became non-finite at step {step}", step=step)
        with np.errstate(over="ignore", invalid="ignore"):
            params.axpy(-config.learning_rate, grads)
        if not params.is_finite():
            raise NumericFailure(f"parameters became non-finite at step {step}", step=step)
        trace.append(loss)
    return params, trace


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def split_streams(rng):
    """(augmentation stream, diffusion stream) derived from one generator."""
    aug_rng, diff_rng = check_random_state(rng).spawn(2)
    return aug_rng, diff_rng


def sample_from_conditions(params, cond, schedule, diff_rngs):
    """DDPM ancestral sampling from z_T ~ N(0, I) given pooled conditions.

    ``cond`` has shape (n, d); each row gets its own generator, which
    supplies z_T and every intermediate noise draw. Returns (n, D).
    """
    if not isinstance(schedule, NoiseSchedule) or schedule.T < 1:
        raise ConfigError("invalid noise schedule")
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if cond.shape != (len(diff_rngs), params.cond_dim):
        raise ShapeMismatch(f"expected conditions of shape ({len(diff_rngs)}, {params.cond_dim})")
    n, D = cond.shape[0], params.latent_dim
    z = np.stack([r.standard_normal(D) for r in diff_rngs])
    beta, ab = schedule.beta, schedule.alpha_bar
    for t in range(schedule.T - 1, -1, -1):
        eps_hat, _ = _mlp_forward(params, _network_input(z, np.full(n, t), cond))
        z = (z - beta[t] / np.sqrt(1.0 - ab[t]) * eps_hat) / np.sqrt(1.0 - beta[t])
        if t > 0:
            var = beta[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t])
            z = z + np.sqrt(var) * np.stack([r.standard_normal(D) for r in diff_rngs])
    if not np.all(np.isfinite(z)):
        raise NumericFailure("sampling produced non-finite latents")
    return z


def sample_many(params, token_seqs, schedule, rngs, aelif_at_inference=NO_AUGMENTATION):
    """Ancestral sampling for several prompts at once, one generator each.

    Every generator is split into an augmentation stream and a diffusion
    stream, so the starting noise z_T does not depend on the AELIF setting.
    Returns an (n, D) array.
    """
    if len(token_seqs) != len(rngs):
        raise ShapeMismatch("need one generator per prompt")
    cond = np.empty((len(token_seqs), params.cond_dim))
    diff_rngs = []
    for i, (tok, rng) in enumerate(zip(token_seqs, rngs)):
        aug_rng, diff_rng = split_streams(rng)
        emb = encode(tok, params.encoder)
        cond[i] = augment_for_inference(emb, aelif_at_inference, aug_rng).mean(axis=0)
        diff_rngs.append(diff_rng)
    return sample_from_conditions(params, cond, schedule, diff_rngs)


def sample(params, tokens, schedule, rng, aelif_at_inference=NO_AUGMENTATION):
    """Draw one latent z_0 conditioned on ``tokens``."""
    return sample_many(params, [tokens], schedule, [rng], aelif_at_inference)[0]


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def checkpoint_dict(params, vocab, schedule, config, seed):
    return {
        "config": config.to_dict(),
        "vocabulary": {"word_ids": vocab.word_ids, "char_ids": vocab.char_ids},
        "encoder_params": {
            "embedding_table": params.encoder.embedding_table.tolist(),
            "positional_table": params.encoder.positional_table.tolist(),
        },
        "denoiser_params": {k: v.tolist() for k, v in params.arrays().items()
                            if k not in ("embedding_table", "positional_table")},
        "schedule": schedule.to_dict(),
        "seed": seed,
    }


def load_checkpoint_dict(data):
    """Inverse of ``checkpoint_dict``: (params, vocab, schedule, config, seed)."""
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in data["denoiser_params"].items()}
    arrays.update({k: np.asarray(v, dtype=np.float64) for k, v in data["encoder_params"].items()})
    return (
        DenoiserParams.from_arrays(arrays),
        Vocabulary.from_dict(data["vocabulary"]),
        NoiseSchedule.from_dict(data["schedule"]),
        TrainConfig.from_dict(data["config"]),
        data["seed"],
    )


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------


class DreamBoothDiffusion(BaseEstimator):
    """DreamBooth-style fine-tuning of a tiny conditional DDPM.

    ``fit`` takes instance latents and prior-class latents; the prompts are
    given as estimator parameters so ``get_params``/``clone`` capture the
    whole experiment. ``sample`` draws latents for arbitrary prompts.

    Parameters
    ----------
    instance_prompt, prior_prompt : str
    aelif_mode : {"none", "mask", "noise_conv"}
    p_max, mu, sigma, apply_prob : float
        Training-time augmentation policy (see ``AelifConfig``).
    steps, batch_size, learning_rate, prior_weight : training settings
    timesteps, beta_min, beta_max : noise schedule
    hidden : int
    random_state : int
        Seeds initialization (``random_state``) and training
        (``random_state + 1``).
    """

    def __init__(self, instance_prompt="a photo of sks dog", prior_prompt="a photo of a dog",
                 aelif_mode="none", p_max=0.3, mu=0.0, sigma=1.0, apply_prob=0.5,
                 steps=5000, batch_size=32, learning_rate=1e-2, prior_weight=1.0,
                 timesteps=DEFAULT_T, beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX,
                 hidden=HIDDEN, random_state=0):
        self.instance_prompt = instance_prompt
        self.prior_prompt = prior_prompt
        self.aelif_mode = aelif_mode
        self.p_max = p_max
        self.mu = mu
        self.sigma = sigma
        self.apply_prob = apply_prob
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.prior_weight = prior_weight
        self.timesteps = timesteps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.hidden = hidden
        self.random_state = random_state

    def train_config(self):
        aelif = AelifConfig(mode=self.aelif_mode, p_max=self.p_max, mu=self.mu,
                            sigma=self.sigma, apply_prob=self.apply_prob)
        return TrainConfig(steps=self.steps, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.random_state + 1,
                           lam=self.prior_weight, aelif=aelif)

    def fit(self, X_instance, X_prior, vocab=None):
        X_instance = np.atleast_2d(np.asarray(X_instance, dtype=np.float64))
        X_prior = np.atleast_2d(np.asarray(X_prior, dtype=np.float64))
        if X_instance.shape[1] != X_prior.shape[1]:
            raise ShapeMismatch("instance and prior latents must share a dimension")
        if len(X_instance) < 1 or len(X_prior) < 1:
            raise ConfigError("need at least one instance and one prior latent")
        config = self.train_config()
        self.vocab_ = vocab or build_vocab([self.instance_prompt, self.prior_prompt])
        self.schedule_ = make_schedule(self.timesteps, self.beta_min, self.beta_max)
        init = init_denoiser_params(self.vocab_, np.random.default_rng(self.random_state),
                                    latent_dim=X_instance.shape[1], hidden=self.hidden)
        dataset = DreamBoothDataset(X_instance, X_prior,
                                    tokenize(self.instance_prompt, self.vocab_),
                                    tokenize(self.prior_prompt, self.vocab_),
                                    self.schedule_)
        self.params_, self.loss_trace_ = train(init, dataset, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit() before sampling")

    def encode_prompt(self, prompt):
        self._check_fitted()
        return tokenize(prompt, self.vocab_)

    def sample(self, prompts, seeds, aelif=NO_AUGMENTATION):
        """One latent per (prompt, seed) pair; returns an (n, D) array."""
        self._check_fitted()
        if isinstance(prompts, str):
            prompts = [prompts] * len(seeds)
        if len(prompts) != len(seeds):
            raise ShapeMismatch("need one seed per prompt")
        toks = [tokenize(p, self.vocab_) for p in prompts]
        rngs = [np.random.default_rng(s) for s in seeds]
        return sample_many(self.params_, toks, self.schedule_, rngs, aelif)

    def to_checkpoint(self):
        self._check_fitted()
        out = checkpoint_dict(self.params_, self.vocab_, self.schedule_, self.train_config(),
                              self.random_state)
        out["estimator"] = {k: v for k, v in self.get_params().items()}
        return out

    @classmethod
    def from_checkpoint(cls, data):
        est = cls(**data["estimator"])
        est.params_, est.vocab_, est.schedule_, _, _ = load_checkpoint_dict(data)
        est.loss_trace_ = []
        return est
