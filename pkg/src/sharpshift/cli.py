"""Command-line interface: train, evaluate, measure, inspect."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bounds, data, training
from .config import load_config
from .encoder import Encoder
from .errors import SharpshiftError
from .fourier import AugmentConfig, draw_betas, fft_augment_batch


def _add_config_args(parser, with_data=False):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable; wins over the file)",
    )
    if with_data:
        parser.add_argument(
            "--data",
            help='"synthetic" or a directory of CIFAR-10 .bin batches',
        )


def _config_from(args):
    overrides = list(args.overrides)
    data = getattr(args, "data", None)
    if data:
        if data == "synthetic":
            overrides.append("dataset.name=synthetic")
        else:
            overrides.append("dataset.name=cifar10")
            overrides.append(f"dataset.dir={data}")
    return load_config(args.config, overrides)


def _cmd_train(args):
    config = _config_from(args)
    path = training.train_ssl(config, resume=args.resume)
    print(f"checkpoint written to {path}")
    return 0


def _cmd_linear_eval(args):
    if args.seed is not None:
        args.overrides.append(f"probe.seed={args.seed}")
    config = _config_from(args)
    encoder, params, _ = training.load_run(args.checkpoint)
    ks = tuple(int(k) for k in args.k.split(","))
    model, results = training.evaluate_probe(config, encoder, params, ks=ks)
    if args.dump_features:
        images, labels = training.load_eval_data(config)
        feats = encoder.features(params, images, tap=config.probe_tap_point)
        with open(args.dump_features, "w", encoding="utf-8") as fh:
            for row, label in zip(feats, labels):
                fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")
        print(f"features written to {args.dump_features}")
    payload = {"event": "linear_eval", "checkpoint": args.checkpoint, **results}
    training.append_metrics(os.path.dirname(args.checkpoint) or ".", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_robust_eval(args):
    if args.seed is not None:
        args.overrides.append(f"probe.seed={args.seed}")
    config = _config_from(args)
    encoder, params, _ = training.load_run(args.checkpoint)
    _, results = training.evaluate_probe(
        config, encoder, params, ks=(1,), epsilon=args.epsilon
    )
    payload = {
        "event": "robust_eval",
        "checkpoint": args.checkpoint,
        "epsilon": args.epsilon,
        **results,
    }
    training.append_metrics(os.path.dirname(args.checkpoint) or ".", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_shift_gap(args):
    config = _config_from(args)
    encoder, params, _ = training.load_run(args.checkpoint)
    report = training.shift_gap_report(
        config, encoder, params, args.aug,
        n_mc=args.n_mc, exponent=args.exponent, tau_factor=args.tau_factor,
        seed=args.seed,
    )
    record = report.to_json()
    training.append_metrics(os.path.dirname(args.checkpoint) or ".",
                            {"event": "shift_gap", "aug": args.aug,
                             **json.loads(record)})
    print(record)
    return 0


def _cmd_bound_lab(args):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([args.seed])))
    failures = 0
    if args.suite == "mean-classifier":
        for i in range(args.n_worlds):
            world = bounds.make_random_world(
                rng,
                n_points=int(rng.integers(2, 7)),
                n_classes=int(rng.integers(2, 4)),
                dim=3,
            )
            check = bounds.verify_mean_classifier_step(world, tau=0.5)
            print(json.dumps({
                "world": i, "lhs": check.lhs, "rhs": check.rhs,
                "slack": check.slack, "holds": check.holds,
            }, sort_keys=True))
            failures += 0 if check.holds else 1
    elif args.suite == "k-trend":
        for i in range(args.n_worlds):
            world = bounds.make_random_world(rng, n_points=4, n_classes=2, dim=3)
            surrogate = bounds.surrogate_unsup_loss(world, tau=0.5)
            gaps = {}
            for k in (1, 2, 4, 8):
                exact = bounds.exact_info_nce_expectation(world, 0.5, float(k), k)
                gaps[str(k)] = float(abs(exact.value - surrogate - np.log(k)))
            print(json.dumps({"world": i, "gap_by_k": gaps,
                              "shrinks": bool(gaps["8"] < gaps["1"])}, sort_keys=True))
            failures += 0 if gaps["8"] < gaps["1"] else 1
    else:  # pac-penalty
        for i in range(args.n_worlds):
            inputs = bounds.PacPenaltyInputs(
                n_samples=int(rng.integers(10, 10_000)),
                n_params=int(rng.integers(2, 100_000)),
                delta=float(rng.uniform(0.01, 0.5)),
                rho=float(rng.uniform(0.01, 2.0)),
                tau=float(rng.uniform(0.1, 2.0)),
                beta_neg=float(rng.uniform(0.0, 8.0)),
                theta_norm=float(rng.uniform(0.0, 50.0)),
            )
            print(json.dumps({
                "case": i, "n_samples": inputs.n_samples, "n_params": inputs.n_params,
                "penalty": bounds.pac_penalty(inputs),
            }, sort_keys=True))
    return 1 if failures else 0


def _cmd_augment_preview(args):
    config = _config_from(args)
    images, _ = training.load_train_data(config)
    count = min(args.n, len(images))
    batch = np.stack([
        data.base_augment(images[i], [args.seed, i], config.augment_pool())
        for i in range(count)
    ])
    if args.checkpoint:
        encoder, params, _ = training.load_run(args.checkpoint)
    else:
        encoder = Encoder(config.encoder_config())
        params = encoder.init_params(args.seed)
    feats = encoder.forward(params, batch)
    fft_cfg = AugmentConfig(alpha=args.alpha, rng_seed=args.seed)
    mixed = fft_augment_batch(batch, feats, fft_cfg)
    betas = draw_betas(count, fft_cfg)
    os.makedirs(args.out, exist_ok=True)
    for i in range(count):
        data.write_image(os.path.join(args.out, f"view_{i:03d}_before.ppm"), batch[i])
        data.write_image(os.path.join(args.out, f"view_{i:03d}_after.ppm"), mixed[i])
    with open(os.path.join(args.out, "betas.txt"), "w", encoding="utf-8") as fh:
        for i in range(count):
            fh.write(f"view_{i:03d} beta={betas[i]!r}\n")
    print(f"wrote {count} before/after pairs to {args.out}")
    return 0


def _cmd_matrix(args):
    config = _config_from(args)
    wanted = args.variants.split(",")
    available = dict(training.standard_variants(config))
    unknown = [name for name in wanted if name not in available]
    if unknown:
        raise SharpshiftError(f"unknown variants {unknown}; choose from {sorted(available)}")
    rows = training.run_experiment_matrix(
        [(name, available[name]) for name in wanted],
        summary_path=os.path.join(config.resolved_output_dir(), training.SUMMARY_NAME),
    )
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 1 if any("error" in row for row in rows) else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sharpshift",
        description="Contrastive training with sharpness-aware updates and "
                    "frequency-domain augmentation, plus evaluation and bound labs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run self-supervised training")
    _add_config_args(p, with_data=True)
    p.add_argument("--resume", help="checkpoint to resume from (config hash must match)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("linear-eval", help="linear probe on frozen features")
    _add_config_args(p, with_data=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", default="1", help="comma-separated top-k values")
    p.add_argument("--seed", type=int, default=None, help="probe training seed")
    p.add_argument("--dump-features", help="write feature,label rows to this file")
    p.set_defaults(func=_cmd_linear_eval)

    p = sub.add_parser("robust-eval", help="single-step adversarial accuracy")
    _add_config_args(p, with_data=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epsilon", type=float, default=8.0 / 255.0)
    p.add_argument("--seed", type=int, default=None, help="probe training seed")
    p.set_defaults(func=_cmd_robust_eval)

    p = sub.add_parser("shift-gap", help="positive-pair distribution-shift gap")
    _add_config_args(p, with_data=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--aug", choices=("base", "fft", "identity"), default="base")
    p.add_argument("--n-mc", type=int, default=8)
    p.add_argument("--exponent", type=float, choices=(0.5, 1.0), default=0.5)
    p.add_argument("--tau-factor", choices=("none", "inverse_tau", "tau"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_shift_gap)

    p = sub.add_parser("bound-lab", help="exact inequality checks on finite worlds")
    p.add_argument("--suite", choices=("mean-classifier", "k-trend", "pac-penalty"),
                   required=True)
    p.add_argument("--n-worlds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bound_lab)

    p = sub.add_parser("augment-preview", help="write before/after augmentation images")
    _add_config_args(p, with_data=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="use this encoder for pairing (default: fresh init)")
    p.set_defaults(func=_cmd_augment_preview)

    p = sub.add_parser("matrix", help="train and evaluate ablation variants")
    _add_config_args(p, with_data=True)
    p.add_argument("--variants", default="baseline,sam,asam,fft,sam_fft")
    p.set_defaults(func=_cmd_matrix)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SharpshiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
