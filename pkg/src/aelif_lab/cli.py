"""Command-line entry point: ``aelif-lab <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aelif import NO_AUGMENTATION, AelifConfig
from .diffusion import (
    DreamBoothDataset,
    checkpoint_dict,
    init_denoiser_params,
    load_checkpoint_dict,
    sample_many,
    train,
)
from .exceptions import AelifLabError, NumericFailure
from .perturb import PerturbConfig, gen_adversarial_set
from .pipeline import (
    RunConfig,
    derive_seed,
    emit_report,
    instance_prompt,
    load_report,
    prior_prompt,
    report_files,
    run_augmentation_eval,
    run_robustness_eval,
    synth_dataset,
)
from .text_model import build_vocab, tokenize

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("aelif_lab")


def _load_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if getattr(args, "ref_index", None) is not None:
        config = replace(config, ref_index=args.ref_index)
    if getattr(args, "category", None):
        config = replace(config, categories=tuple(args.category))
    return config


def _inference_aelif(args):
    if args.variant in (None, "none") or args.p is None:
        return NO_AUGMENTATION
    mu = 0.0 if args.mu is None else args.mu
    sigma = 1.0 if args.sigma is None else args.sigma
    return AelifConfig(mode=args.variant, p_max=args.p, mu=mu, sigma=sigma, apply_prob=1.0)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    config = _load_config(args)
    category = config.categories[0]
    spec = config.category_specs()[0]
    variant = args.variant or "none"
    if variant not in config.variants:
        raise AelifLabError(f"variant {variant!r} not in config")
    aelif = config.variants[variant]
    if args.p is not None:
        aelif = replace(aelif, p_max=args.p)
    if args.mu is not None:
        aelif = replace(aelif, mu=args.mu)
    if args.sigma is not None:
        aelif = replace(aelif, sigma=args.sigma)

    data = synth_dataset(spec)
    vocab = build_vocab([instance_prompt(category), prior_prompt(category)])
    schedule = config.schedule()
    dataset = DreamBoothDataset(data["instance"], data["prior"],
                                tokenize(instance_prompt(category), vocab),
                                tokenize(prior_prompt(category), vocab), schedule)
    init = init_denoiser_params(vocab, np.random.default_rng(derive_seed(config.master_seed, category, "init")))
    tcfg = replace(config.train, seed=derive_seed(config.master_seed, category, "train"), aelif=aelif)
    params, trace = train(init, dataset, tcfg)

    out = _out_dir(args)
    ckpt = checkpoint_dict(params, vocab, schedule, tcfg, config.master_seed)
    ckpt["category"] = category
    (out / f"checkpoint_{category}_{variant}.json").write_text(json.dumps(ckpt) + "\n")
    with open(out / f"loss_{category}_{variant}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        writer.writerows([i, repr(v)] for i, v in enumerate(trace))
    print(out / f"checkpoint_{category}_{variant}.json")


def cmd_sample(args):
    try:
        ckpt = json.loads(Path(args.checkpoint).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AelifLabError(f"cannot read checkpoint {args.checkpoint}: {exc}") from exc
    params, vocab, schedule, _, _ = load_checkpoint_dict(ckpt)
    prompt = args.prompt or instance_prompt(ckpt.get("category", "dog"))
    seed = 0 if args.seed is None else args.seed
    seeds = [derive_seed(seed, "sample", i) for i in range(args.n)]
    latents = sample_many(params, [tokenize(prompt, vocab)] * args.n, schedule,
                          [np.random.default_rng(s) for s in seeds], _inference_aelif(args))
    out = _out_dir(args)
    path = out / "samples.json"
    path.write_text(json.dumps({"prompt": prompt, "seeds": seeds, "latents": latents.tolist()}) + "\n")
    print(path)


def cmd_perturb(args):
    config = _load_config(args)
    out = _out_dir(args)
    for category in config.categories:
        pcfg = replace(config.perturb, seed=derive_seed(config.master_seed, category, "perturb"))
        if args.count is not None:
            pcfg = replace(pcfg, count=args.count)
        prompts = gen_adversarial_set(instance_prompt(category), pcfg)
        (out / f"prompts_{category}.json").write_text(json.dumps(prompts, indent=1) + "\n")
    print(out)


def cmd_eval_aug(args):
    report = run_augmentation_eval(_load_config(args))
    for path in emit_report(report, _out_dir(args)):
        print(path)


def cmd_eval_robust(args):
    report = run_robustness_eval(_load_config(args))
    for path in emit_report(report, _out_dir(args)):
        print(path)
    print(f"mean win rate: {report.mean_win_rate:.2f}%")


def cmd_report(args):
    report = load_report(args.report)
    if args.out:
        emit_report(report, _out_dir(args))
    files = report_files(report)
    for name in ("augmentation_distances.csv", "robustness_summary.csv"):
        if name in files:
            sys.stdout.write(files[name])


def build_parser():
    parser = argparse.ArgumentParser(prog="aelif-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="run-config JSON")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    def aelif_flags(p):
        p.add_argument("--variant", choices=("none", "mask", "noise_conv"))
        p.add_argument("--p", type=float)
        p.add_argument("--mu", type=float)
        p.add_argument("--sigma", type=float)

    p = common(sub.add_parser("train", help="train one category/variant, write a checkpoint"))
    p.add_argument("--category", action="append")
    aelif_flags(p)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sample", help="draw latents from a checkpoint"))
    p.add_argument("checkpoint")
    p.add_argument("--prompt")
    p.add_argument("-n", type=int, default=1)
    aelif_flags(p)
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("perturb", help="generate typo'd prompt sets"))
    p.add_argument("--category", action="append")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_perturb)

    p = common(sub.add_parser("eval-aug", help="set-level W2 evaluation"))
    p.add_argument("--category", action="append")
    p.set_defaults(func=cmd_eval_aug)

    p = common(sub.add_parser("eval-robust", help="perturbed-prompt win-rate evaluation"))
    p.add_argument("--category", action="append")
    p.add_argument("--ref-index", type=int, dest="ref_index")
    p.set_defaults(func=cmd_eval_robust)

    p = sub.add_parser("report", help="print or re-emit tables from report.json")
    p.add_argument("report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AelifLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
