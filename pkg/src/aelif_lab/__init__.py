"""Embedding-level prompt augmentation (masking, noise convolution) for a
small DreamBooth-style conditional diffusion model, plus set-level
Wasserstein and perturbed-prompt win-rate evaluation."""

from .aelif import AelifAugmenter, AelifConfig, aelif_mask, aelif_noise_conv, select_positions
from .diffusion import (
    DenoiserParams,
    DreamBoothDiffusion,
    NoiseSchedule,
    TrainConfig,
    denoise_predict,
    dreambooth_loss,
    forward_noise,
    ldm_loss,
    make_schedule,
    sample,
    train,
)
from .metrics import (
    EmbeddingSet,
    FeatureExtractor,
    best_of_aug,
    cosine_similarity,
    extract_features,
    w2_point,
    w2_set,
    win_rate,
)
from .perturb import EditOp, PerturbConfig, TypoPerturber, apply_edit, gen_adversarial_set
from .pipeline import (
    CategorySpec,
    EvalReport,
    RunConfig,
    emit_report,
    run_augmentation_eval,
    run_robustness_eval,
    synth_dataset,
)
from .text_model import Vocabulary, build_vocab, encode, tokenize

__version__ = "0.1.0"
