"""End-to-end evaluation: synthetic DreamBooth categories, per-variant
training, the set-level (augmentation) and per-prompt (robustness)
procedures, and report files.

Randomness is split hierarchically from one master seed::

    master -> category -> {data, init, train, perturb, sample, eval}

so no stage shares a stream with another and results do not depend on the
order or parallelism in which categories are processed.
"""

import csv
import io
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .aelif import NO_AUGMENTATION, AelifConfig, nested_noise_conv
from .diffusion import (
    DEFAULT_BETA_MAX,
    DEFAULT_BETA_MIN,
    DEFAULT_T,
    DreamBoothDataset,
    TrainConfig,
    init_denoiser_params,
    make_schedule,
    sample_from_conditions,
    sample_many,
    split_streams,
    train,
)
from .exceptions import ConfigError, EmptyReport, NumericFailure
from .metrics import FeatureExtractor, EmbeddingSet, best_of_aug, cosine_similarity, w2_point, w2_set, win_rate
from .perturb import PerturbConfig, gen_adversarial_set
from .text_model import MAX_LEN, build_vocab, encode, tokenize

log = logging.getLogger(__name__)

CATEGORIES = (
    "backpack", "candle", "dog_data", "cat", "colorful_sneaker", "dog2",
    "dog3", "backpack_dog", "clock", "vase", "teapot",
)
ITEM_NAMES = {
    "backpack": "backpack", "candle": "candle", "dog_data": "dog", "cat": "cat",
    "colorful_sneaker": "sneaker", "dog2": "dog", "dog3": "dog",
    "backpack_dog": "backpack", "clock": "clock", "vase": "vase", "teapot": "teapot",
}
CENTER_SCALE = 2.0
PRIOR_STD = 0.5
INSTANCE_STD = 0.05
INSTANCE_OFFSET = 1.0

AUG_COLUMNS = ("item", "noise_conv_vs_train", "mask_vs_train", "orig_vs_train")
DETAIL_COLUMNS = ("prompt", "orig", "mask", "noise")
SUMMARY_COLUMNS = ("category", "proportion")
VARIANT_COLUMNS = ("category", "best_of", "mask", "noise_conv")
THREADS_ENV = "AELIF_LAB_THREADS"


# --------------------------------------------------------------------------
# seeds
# --------------------------------------------------------------------------


def _key(part):
    return part if isinstance(part, int) else zlib.crc32(str(part).encode())


def derive_seed(master_seed, *path):
    """Deterministic 63-bit seed for the stream named by ``path``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def item_name(category):
    if category in ITEM_NAMES:
        return ITEM_NAMES[category]
    return category.rstrip("0123456789").replace("_", " ").strip()


def instance_prompt(category):
    return f"a photo of sks {item_name(category)}"


def prior_prompt(category):
    return f"a photo of a {item_name(category)}"


@dataclass(frozen=True)
class CategorySpec:
    name: str
    cluster_seed: int
    instance_count: int = 4
    prior_count: int = 200

    def __post_init__(self):
        if self.instance_count < 1 or self.prior_count < 1:
            raise ConfigError("instance_count and prior_count must be >= 1")


def default_variants():
    return {
        "none": NO_AUGMENTATION,
        "mask": AelifConfig(mode="mask", p_max=0.3, apply_prob=0.5),
        "noise_conv": AelifConfig(mode="noise_conv", p_max=0.3, mu=0.0, sigma=1.0, apply_prob=0.5),
    }


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    categories: tuple = CATEGORIES
    instance_count: int = 4
    prior_count: int = 200
    train: TrainConfig = TrainConfig()
    variants: dict = field(default_factory=default_variants)
    perturb: PerturbConfig = PerturbConfig()
    ref_index: int = 0
    timesteps: int = DEFAULT_T
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX
    echo_template: bool = False

    def __post_init__(self):
        if "none" not in self.variants or len(self.variants) < 2:
            raise ConfigError("variants must include 'none' and at least one augmented variant")
        for name, cfg in self.variants.items():
            if name == "none" and cfg.mode != "none":
                raise ConfigError("variant 'none' must not augment")
        if not self.categories:
            raise ConfigError("at least one category is required")
        if not 0 <= self.ref_index < self.instance_count:
            raise ConfigError(f"ref_index must lie in [0, {self.instance_count})")

    def category_specs(self):
        return [CategorySpec(c, derive_seed(self.master_seed, c, "data"),
                             self.instance_count, self.prior_count) for c in self.categories]

    def schedule(self):
        return make_schedule(self.timesteps, self.beta_min, self.beta_max)

    def to_dict(self):
        train_cfg = self.train.to_dict()
        train_cfg.pop("aelif")
        train_cfg.pop("seed")
        return {
            "master_seed": self.master_seed,
            "categories": list(self.categories),
            "instance_count": self.instance_count,
            "prior_count": self.prior_count,
            "train": train_cfg,
            "variants": {k: v.to_dict() for k, v in self.variants.items()},
            "perturb": {k: v for k, v in self.perturb.to_dict().items() if k != "seed"},
            "ref_index": self.ref_index,
            "schedule": {"T": self.timesteps, "beta_min": self.beta_min, "beta_max": self.beta_max},
            "echo_template": self.echo_template,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {"master_seed", "categories", "instance_count", "prior_count", "train",
                 "variants", "perturb", "ref_index", "schedule", "echo_template"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key in ("master_seed", "instance_count", "prior_count", "ref_index", "echo_template"):
            if key in data:
                kwargs[key] = data[key]
        if "categories" in data:
            kwargs["categories"] = tuple(data["categories"])
        if "train" in data:
            kwargs["train"] = TrainConfig.from_dict(data["train"])
        if "variants" in data:
            kwargs["variants"] = {k: AelifConfig.from_dict(v) for k, v in data["variants"].items()}
        if "perturb" in data:
            kwargs["perturb"] = PerturbConfig(**data["perturb"])
        if "schedule" in data:
            sched = data["schedule"]
            kwargs["timesteps"] = sched.get("T", DEFAULT_T)
            kwargs["beta_min"] = sched.get("beta_min", DEFAULT_BETA_MIN)
            kwargs["beta_max"] = sched.get("beta_max", DEFAULT_BETA_MAX)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


# --------------------------------------------------------------------------
# data and models
# --------------------------------------------------------------------------


def synth_dataset(spec, latent_dim=8):
    """Gaussian stand-ins for a category's prior images and instance photos.

    The category center is drawn from ``spec.cluster_seed``; instances sit
    around a sub-center at distance 1 from it. Spreads are standard
    deviations (0.5 for the prior, 0.05 for instances).
    """
    rng = np.random.default_rng(spec.cluster_seed)
    center = CENTER_SCALE * rng.standard_normal(latent_dim)
    direction = rng.standard_normal(latent_dim)
    inst_center = center + INSTANCE_OFFSET * direction / np.linalg.norm(direction)
    prior = center + PRIOR_STD * rng.standard_normal((spec.prior_count, latent_dim))
    instance = inst_center + INSTANCE_STD * rng.standard_normal((spec.instance_count, latent_dim))
    return {"instance": instance, "prior": prior, "center": center, "instance_center": inst_center}


@dataclass
class CategoryModels:
    """Everything trained for one category, shared by both pipelines."""

    category: str
    data: dict
    vocab: object
    schedule: object
    params: dict
    loss_traces: dict


def train_category_models(config, spec):
    """Train every configured variant from one shared initialization.

    All variants see the same minibatches, timesteps and noise; only the
    augmentation draws differ.
    """
    data = synth_dataset(spec)
    vocab = build_vocab([instance_prompt(spec.name), prior_prompt(spec.name)])
    schedule = config.schedule()
    dataset = DreamBoothDataset(data["instance"], data["prior"],
                                tokenize(instance_prompt(spec.name), vocab),
                                tokenize(prior_prompt(spec.name), vocab), schedule)
    init = init_denoiser_params(vocab, np.random.default_rng(derive_seed(config.master_seed, spec.name, "init")))
    train_seed = derive_seed(config.master_seed, spec.name, "train")
    params, traces = {}, {}
    for variant, aelif in config.variants.items():
        tcfg = replace(config.train, seed=train_seed, aelif=aelif)
        try:
            params[variant], traces[variant] = train(init, dataset, tcfg)
        except NumericFailure as exc:
            raise NumericFailure(f"category {spec.name!r}, variant {variant!r}: {exc}", exc.step) from exc
        log.info("trained %s/%s: final loss %.4f", spec.name, variant,
                 traces[variant][-1] if traces[variant] else float("nan"))
    return CategoryModels(spec.name, data, vocab, schedule, params, traces)


def _thread_cap():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from exc


def _map_ordered(fn, items):
    """Map over categories, optionally in worker processes; order preserved."""
    items = list(items)
    workers = min(_thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    kind: str
    config: dict
    seeds: dict = field(default_factory=dict)
    aug_rows: list = field(default_factory=list)
    robust_details: dict = field(default_factory=dict)
    win_rates: list = field(default_factory=list)
    mean_win_rate: float = None
    mean_variant_win_rates: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": self.kind, "config": self.config, "seeds": self.seeds,
            "aug_rows": self.aug_rows, "robust_details": self.robust_details,
            "win_rates": self.win_rates, "mean_win_rate": self.mean_win_rate,
            "mean_variant_win_rates": self.mean_variant_win_rates,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def is_empty(self):
        return not self.aug_rows and not self.win_rates


def _features(latents, fe):
    return fe.transform(np.atleast_2d(latents))


def _eval_augmentation(config, models):
    fe = FeatureExtractor().fit(models.data["instance"])
    target = EmbeddingSet(_features(models.data["instance"], fe), "X_t")
    n = len(models.data["instance"])
    seeds = [derive_seed(config.master_seed, models.category, "sample", i) for i in range(n)]
    tokens = tokenize(instance_prompt(models.category), models.vocab)
    dist = {}
    for variant, params in models.params.items():
        lat = sample_many(params, [tokens] * n, models.schedule,
                          [np.random.default_rng(s) for s in seeds])
        label = "X_O" if variant == "none" else "X_A"
        dist[variant] = w2_set(EmbeddingSet(_features(lat, fe), label), target)
    row = {"item": models.category,
           "noise_conv_vs_train": dist.get("noise_conv"),
           "mask_vs_train": dist.get("mask"),
           "orig_vs_train": dist["none"]}
    return row, seeds


def _models_for(config, models):
    if models is not None:
        return models
    return _map_ordered(_CategoryTrainer(config), config.category_specs())


class _CategoryTrainer:
    """Picklable ``spec -> train_category_models(config, spec)``."""

    def __init__(self, config):
        self.config = config

    def __call__(self, spec):
        return train_category_models(self.config, spec)


def run_augmentation_eval(config, models=None):
    """Set-level comparison: W2 between generated and instance feature sets.

    For each category every variant generates ``instance_count`` samples of
    the instance prompt with one shared seed list.
    """
    models = _models_for(config, models)
    rows, seeds = [], {}
    for m in sorted(models, key=lambda m: m.category):
        row, s = _eval_augmentation(config, m)
        rows.append(row)
        seeds[m.category] = s
    return EvalReport(kind="augmentation", config=config.to_dict(), seeds=seeds, aug_rows=rows)


def robustness_prompts(config, category):
    template = instance_prompt(category)
    if config.echo_template:
        return [template]
    pcfg = replace(config.perturb, seed=derive_seed(config.master_seed, category, "perturb"))
    return gen_adversarial_set(template, pcfg)


def _eval_robustness(config, models):
    fe = FeatureExtractor().fit(models.data["instance"])
    ref = _features(models.data["instance"][config.ref_index], fe)[0]
    prompts = robustness_prompts(config, models.category)
    seeds = [derive_seed(config.master_seed, models.category, "eval", i) for i in range(len(prompts))]
    tokens = [tokenize(p, models.vocab) for p in prompts]
    dist = {}
    for variant, params in models.params.items():
        lat = sample_many(params, tokens, models.schedule, [np.random.default_rng(s) for s in seeds])
        dist[variant] = [w2_point(f, ref) for f in _features(lat, fe)]

    aug_variants = [v for v in models.params if v != "none"]
    best = dist[aug_variants[0]]
    for v in aug_variants[1:]:
        best = [best_of_aug(a, b) for a, b in zip(best, dist[v])]
    details = [{"prompt": p, "orig": dist["none"][i], "mask": dist.get("mask", [None] * len(prompts))[i],
                "noise": dist.get("noise_conv", [None] * len(prompts))[i]}
               for i, p in enumerate(prompts)]
    summary = {"category": models.category,
               "proportion": win_rate(dist["none"], best, models.category).proportion}
    for v in aug_variants:
        summary[v] = win_rate(dist["none"], dist[v], models.category).proportion
    return details, summary, seeds


def run_robustness_eval(config, models=None):
    """Per-prompt comparison on typo'd prompts against one fixed training point.

    The prompt set and per-prompt sampling seeds are shared by all variants.
    """
    models = _models_for(config, models)
    details, rates, seeds = {}, [], {}
    for m in sorted(models, key=lambda m: m.category):
        d, s, sd = _eval_robustness(config, m)
        details[m.category] = d
        rates.append(s)
        seeds[m.category] = sd
    mean = float(np.mean([r["proportion"] for r in rates]))
    variant_means = {v: float(np.mean([r[v] for r in rates]))
                     for v in rates[0] if v not in ("category", "proportion")}
    return EvalReport(kind="robustness", config=config.to_dict(), seeds=seeds,
                      robust_details=details, win_rates=rates, mean_win_rate=mean,
                      mean_variant_win_rates=variant_means)


def _fmt(x):
    return "" if x is None else repr(float(x))


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def report_files(report):
    """Relative path -> file contents for every file ``emit_report`` writes."""
    if report.is_empty():
        raise EmptyReport("report has no category rows")
    files = {"report.json": json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"}
    if report.aug_rows:
        files["augmentation_distances.csv"] = _csv_text(
            AUG_COLUMNS, [[r["item"]] + [_fmt(r[c]) for c in AUG_COLUMNS[1:]] for r in report.aug_rows])
    if report.win_rates:
        for cat, rows in report.robust_details.items():
            files[f"robustness/{cat}.csv"] = _csv_text(
                DETAIL_COLUMNS, [[r["prompt"]] + [_fmt(r[c]) for c in DETAIL_COLUMNS[1:]] for r in rows])
        summary = [[r["category"], _fmt(r["proportion"])] for r in report.win_rates]
        summary.append(["Mean", _fmt(report.mean_win_rate)])
        files["robustness_summary.csv"] = _csv_text(SUMMARY_COLUMNS, summary)
        per_variant = [[r["category"], _fmt(r["proportion"]), _fmt(r.get("mask")), _fmt(r.get("noise_conv"))]
                       for r in report.win_rates]
        per_variant.append(["Mean", _fmt(report.mean_win_rate),
                            _fmt(report.mean_variant_win_rates.get("mask")),
                            _fmt(report.mean_variant_win_rates.get("noise_conv"))])
        files["robustness_per_variant.csv"] = _csv_text(VARIANT_COLUMNS, per_variant)
    return files


def emit_report(report, out_dir):
    """Write CSV tables and the replayable JSON report under ``out_dir``."""
    files = report_files(report)
    out_dir = Path(out_dir)
    written = []
    for rel, text in files.items():
        path = out_dir / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def load_report(path):
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# magnitude sweep
# --------------------------------------------------------------------------


def sweep_prompt(category, max_len=MAX_LEN):
    """The instance prompt repeated to fill the encoder context."""
    words = instance_prompt(category).split()
    return " ".join((words * (max_len // len(words) + 1))[: max_len - max_len % len(words)])


def magnitude_sweep(params, tokens, schedule, seeds, p_grid, mu=0.0, sigma=100.0, fe=None):
    """Cosine similarity between clean and noise-convolved samples per magnitude.

    For each seed the starting noise and all sampling noise are shared
    across magnitudes, and the token perturbations are nested (see
    ``nested_noise_conv``), so the sweep traces one generation under
    increasing augmentation. Returns an array of shape (len(p_grid), len(seeds)).
    """
    fe = fe or FeatureExtractor(latent_dim=params.latent_dim).fit()
    emb = encode(tokens, params.encoder)
    conds = np.empty((len(p_grid), len(seeds), params.cond_dim))
    for j, s in enumerate(seeds):
        aug_rng, _ = split_streams(np.random.default_rng(s))
        for i, z in enumerate(nested_noise_conv(emb, p_grid, mu, sigma, aug_rng)):
            conds[i, j] = z.mean(axis=0)

    def diff_rngs():
        return [split_streams(np.random.default_rng(s))[1] for s in seeds]

    clean = fe.transform(sample_from_conditions(params, emb.mean(axis=0)[None].repeat(len(seeds), 0),
                                                schedule, diff_rngs()))
    out = np.empty((len(p_grid), len(seeds)))
    for i in range(len(p_grid)):
        feats = fe.transform(sample_from_conditions(params, conds[i], schedule, diff_rngs()))
        out[i] = [cosine_similarity(a, b) for a, b in zip(clean, feats)]
    return out
