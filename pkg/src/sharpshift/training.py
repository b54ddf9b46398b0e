"""Training-loop orchestration, metrics stream, and the experiment matrix.

The loop is a single logical sequence: per batch, draw two base-augmented
views per anchor, optionally rewrite them with the frequency-domain
augmentation (using features from the current encoder, computed before any
optimizer perturbation), take the contrastive loss over the paired batch,
and update with either the plain or the sharpness-aware step. All randomness
is derived from the run seed through tagged SeedSequence substreams, so a
fixed config yields bit-identical metrics and checkpoints.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import data as data_mod
from .config import TrainConfig
from .encoder import Encoder, load_checkpoint, save_checkpoint
from .errors import ModelError, OptimizerError, PipelineError
from .evaluation import (
    AttackConfig,
    ProbeModel,
    clean_accuracy,
    robust_accuracy,
    top_k_accuracy,
    train_linear_probe,
)
from .fourier import (
    AugmentConfig,
    amplitude_phase,
    dft2,
    fft_augment_batch,
    mix_amplitude,
    most_similar_index,
    reconstruct,
)
from .losses import LossConfig, info_nce_batch_grad
from .sam import sam_step, sgd_step
from .shift import ShiftGapConfig, estimate_shift_gap

# SeedSequence stream tags; every consumer of randomness gets its own branch.
TAG_INIT, TAG_SHUFFLE, TAG_VIEW, TAG_FFT, TAG_EVAL_DATA = 1, 2, 3, 4, 5

METRICS_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint.ckpt"
SUMMARY_NAME = "summary.tsv"


def derived_seed(*parts):
    """Collapse a tag path into one integer seed."""
    seq = np.random.SeedSequence([int(p) for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass
class MetricsRecord:
    """One line of the metrics stream."""

    epoch: int
    loss: float
    lr: float
    wall_seconds: float | None = None
    extras: dict | None = None

    def to_json(self):
        payload = {"epoch": self.epoch, "loss": self.loss, "lr": self.lr}
        if self.wall_seconds is not None:
            payload["wall_seconds"] = self.wall_seconds
        if self.extras:
            payload.update(self.extras)
        return json.dumps(payload, sort_keys=True)


def load_train_data(config: TrainConfig):
    if config.dataset == "synthetic":
        return data_mod.gen_synthetic(
            config.n_per_class,
            config.num_classes,
            image_size=config.image_size,
            channels=config.channels,
            seed=config.seed,
        )
    images, labels = data_mod.load_cifar10(config.data_dir)
    if config.data_limit:
        images, labels = images[: config.data_limit], labels[: config.data_limit]
    return images, labels


def load_eval_data(config: TrainConfig):
    """Held-out labeled split: same class patterns, fresh sample noise."""
    if config.dataset == "synthetic":
        return data_mod.gen_synthetic(
            config.n_eval_per_class,
            config.num_classes,
            image_size=config.image_size,
            channels=config.channels,
            seed=derived_seed(config.seed, TAG_EVAL_DATA),
            pattern_seed=config.seed,
        )
    images, labels = load_train_data(config)
    split = max(1, int(0.8 * len(labels)))
    return images[split:], labels[split:]


def _feature_loss(tau):
    """Batch contrastive loss closure mapping features -> (loss, grad)."""
    loss_cfg = LossConfig(tau=tau)

    def closure(feats):
        return info_nce_batch_grad(feats, loss_cfg)

    return closure


class _RecordingLoss:
    """Wraps encoder.loss_and_grad to count calls and remember loss values."""

    def __init__(self, encoder, views, feature_loss):
        self.encoder = encoder
        self.views = views
        self.feature_loss = feature_loss
        self.losses = []

    def __call__(self, params):
        loss, grad = self.encoder.loss_and_grad(params, self.views, self.feature_loss)
        self.losses.append(loss)
        return loss, grad


def _make_views(images, indices, epoch, config, pool):
    views = np.empty((2 * len(indices),) + images.shape[1:])
    for slot, idx in enumerate(indices):
        for v in (0, 1):
            seed = [config.seed, TAG_VIEW, epoch, int(idx), v]
            views[2 * slot + v] = data_mod.base_augment(images[idx], seed, pool)
    return views


def train_ssl(config: TrainConfig, resume=None):
    """Run self-supervised training; returns the final checkpoint path.

    A non-finite loss aborts the run with the last written checkpoint left
    intact. With ``resume`` the stored config hash must match the current
    config, otherwise the run fails loudly instead of silently retraining.
    """
    out_dir = config.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, METRICS_NAME)
    final_path = os.path.join(out_dir, CHECKPOINT_NAME)
    config_hash = config.config_hash()

    encoder = Encoder(config.encoder_config())
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.train_config_hash != config_hash:
            raise PipelineError(
                f"refusing to resume: checkpoint config hash {ckpt.train_config_hash[:12]} "
                f"does not match current config {config_hash[:12]}"
            )
        params = ckpt.params.copy()
        start_epoch = ckpt.epoch + 1
        metrics_fh = open(metrics_path, "a", encoding="utf-8")
    else:
        params = encoder.init_params(derived_seed(config.seed, TAG_INIT))
        metrics_fh = open(metrics_path, "w", encoding="utf-8")

    images, _ = load_train_data(config)
    if len(images) < config.batch_size:
        raise PipelineError(
            f"dataset has {len(images)} images, batch_size {config.batch_size} is too large"
        )
    pool = config.augment_pool()
    sam_cfg = config.sam_config()
    feature_loss = _feature_loss(config.tau)
    velocity = np.zeros_like(params) if config.momentum > 0.0 else None
    last_checkpoint = None
    step = 0

    try:
        for epoch in range(start_epoch, config.epochs):
            t0 = time.perf_counter()
            order = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([config.seed, TAG_SHUFFLE, epoch]))
            ).permutation(len(images))
            epoch_losses = []
            for b_start in range(0, len(order), config.batch_size):
                indices = order[b_start:b_start + config.batch_size]
                if len(indices) < 2:
                    continue  # in-batch negatives need at least two anchors
                views = _make_views(images, indices, epoch, config, pool)
                if config.fft_enabled and epoch >= config.fft_warmup_epochs:
                    feats = encoder.forward(params, views)
                    fft_cfg = AugmentConfig(
                        alpha=config.fft_alpha,
                        rng_seed=derived_seed(config.seed, TAG_FFT, epoch, b_start),
                    )
                    views = fft_augment_batch(views, feats, fft_cfg)
                recorder = _RecordingLoss(encoder, views, feature_loss)
                try:
                    if config.sam_enabled:
                        params = sam_step(params, recorder, sam_cfg, step=step,
                                          velocity=velocity)
                    else:
                        params = sgd_step(params, recorder, sam_cfg, step=step,
                                          velocity=velocity)
                except (ModelError, OptimizerError) as exc:
                    raise PipelineError(
                        f"aborting at epoch {epoch} step {step}: {exc}",
                        last_checkpoint=last_checkpoint,
                    ) from exc
                batch_loss = recorder.losses[0]
                if not np.isfinite(batch_loss):
                    raise PipelineError(
                        f"non-finite loss at epoch {epoch}", last_checkpoint=last_checkpoint
                    )
                epoch_losses.append(batch_loss)
                step += 1
            record = MetricsRecord(
                epoch=epoch,
                loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                lr=config.lr,
                wall_seconds=(time.perf_counter() - t0) if config.metrics_timing else None,
            )
            metrics_fh.write(record.to_json() + "\n")
            metrics_fh.flush()
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                path = os.path.join(out_dir, f"checkpoint_ep{epoch:04d}.ckpt")
                _atomic_checkpoint(path, encoder, params, config_hash, epoch)
                last_checkpoint = path
    finally:
        metrics_fh.close()

    _atomic_checkpoint(final_path, encoder, params, config_hash, config.epochs - 1)
    return final_path


def _atomic_checkpoint(path, encoder, params, config_hash, epoch):
    tmp = path + ".tmp"
    save_checkpoint(tmp, encoder, params, config_hash, epoch=epoch)
    os.replace(tmp, path)


def append_metrics(out_dir, payload):
    """Append an eval record to the run's metrics stream."""
    with open(os.path.join(out_dir, METRICS_NAME), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True) + "\n")


# ----- augmentation distributions for the shift metric -----------------------


def make_augment_fn(mode, config, encoder=None, params=None, pool_images=None,
                    n_candidates=8):
    """Augmentation map t(x) used by the shift-gap estimator.

    "identity" returns the input; "base" is the stochastic view pool; "fft"
    additionally amplitude-mixes the view toward the most feature-similar of
    ``n_candidates`` base-augmented images drawn from ``pool_images``, which
    emulates the in-batch pairing at measurement time.
    """
    aug_pool = config.augment_pool()

    if mode == "identity":
        return lambda image, rng: image
    if mode == "base":
        def base_fn(image, rng):
            seed = [int(s) for s in rng.integers(0, 2**62, size=2)]
            return data_mod.base_augment(image, seed, aug_pool)

        return base_fn
    if mode != "fft":
        raise PipelineError(f"unknown augmentation mode {mode!r}")
    if encoder is None or params is None or pool_images is None:
        raise PipelineError("fft augmentation mode needs encoder, params and pool_images")

    def fft_fn(image, rng):
        seed = [int(s) for s in rng.integers(0, 2**62, size=2)]
        view = data_mod.base_augment(image, seed, aug_pool)
        beta = float(rng.uniform(0.0, config.fft_alpha))
        if beta == 0.0:
            return view
        count = min(n_candidates, len(pool_images))
        chosen = rng.choice(len(pool_images), size=count, replace=False)
        candidates = np.empty((count,) + view.shape)
        for slot, idx in enumerate(chosen):
            cand_seed = [int(s) for s in rng.integers(0, 2**62, size=2)]
            candidates[slot] = data_mod.base_augment(pool_images[idx], cand_seed, aug_pool)
        stack = np.concatenate([view[None], candidates])
        feats = encoder.forward(params, stack)
        partner = most_similar_index(feats, 0)
        out = np.empty_like(view)
        for c in range(view.shape[2]):
            amp, phase = amplitude_phase(dft2(view[:, :, c]))
            partner_amp, _ = amplitude_phase(dft2(stack[partner][:, :, c]))
            out[:, :, c] = reconstruct(mix_amplitude(amp, partner_amp, beta), phase)
        return out

    return fft_fn


def shift_gap_report(config, encoder, params, aug_mode, n_mc=8, exponent=0.5,
                     tau_factor="none", seed=0, eval_data=None):
    """Shift gap of a trained encoder under one augmentation mode."""
    if eval_data is None:
        eval_data = load_eval_data(config)
    images, labels = eval_data
    augment_fn = make_augment_fn(
        aug_mode, config, encoder=encoder, params=params, pool_images=images
    )

    def feature_fn(items):
        return encoder.forward(params, np.stack(items))

    gap_cfg = ShiftGapConfig(
        n_mc_aug=n_mc, exponent=exponent, tau_factor=tau_factor, tau=config.tau, seed=seed
    )
    pairs = list(zip(images, labels))
    return estimate_shift_gap(feature_fn, pairs, augment_fn, gap_cfg)


# ----- evaluation glue --------------------------------------------------------


def load_run(checkpoint_path):
    """(encoder, params, checkpoint) from a checkpoint file."""
    ckpt = load_checkpoint(checkpoint_path)
    return Encoder(ckpt.encoder_config), ckpt.params, ckpt


def evaluate_probe(config, encoder, params, ks=(1,), epsilon=None,
                   train_data=None, eval_data=None):
    """Train the linear probe and report clean (and optionally robust) accuracy."""
    if train_data is None:
        train_data = load_train_data(config)
    if eval_data is None:
        eval_data = load_eval_data(config)
    probe_cfg = config.probe_config()
    weights = train_linear_probe(
        encoder, params, train_data, probe_cfg, num_classes=config.num_classes
        if config.dataset == "synthetic" else None,
    )
    model = ProbeModel(
        encoder=encoder, params=params, weights=weights, tap_point=probe_cfg.tap_point
    )
    logits = model.logits(eval_data[0])
    results = {f"top{k}": top_k_accuracy(logits, eval_data[1], k) for k in ks}
    if epsilon is not None:
        attack = AttackConfig(epsilon=epsilon)
        results["robust_top1"] = robust_accuracy(model, eval_data, attack)
        results["clean_top1"] = clean_accuracy(model, eval_data, k=1)
    return model, results


# ----- experiment matrix ------------------------------------------------------


def standard_variants(base: TrainConfig):
    """The five ablation rows: baseline, sam, asam, fft, and the full method."""
    return [
        ("baseline", replace(base, sam_enabled=False, fft_enabled=False,
                             output_dir=os.path.join(base.output_dir, "baseline"))),
        ("sam", replace(base, sam_enabled=True, sam_rho=0.05, sam_adaptive=False,
                        fft_enabled=False,
                        output_dir=os.path.join(base.output_dir, "sam"))),
        ("asam", replace(base, sam_enabled=True, sam_rho=2.0, sam_adaptive=True,
                         fft_enabled=False,
                         output_dir=os.path.join(base.output_dir, "asam"))),
        ("fft", replace(base, sam_enabled=False, fft_enabled=True,
                        output_dir=os.path.join(base.output_dir, "fft"))),
        ("sam_fft", replace(base, sam_enabled=True, sam_rho=0.05, sam_adaptive=False,
                            fft_enabled=True,
                            output_dir=os.path.join(base.output_dir, "sam_fft"))),
    ]


def run_experiment_matrix(variants, summary_path=None, ks=(1,), epsilon=8.0 / 255.0,
                          shift_n_mc=4):
    """Train and evaluate each (name, config) variant; failures mark their row."""
    rows = []
    for name, config in variants:
        row = {"variant": name}
        try:
            ckpt_path = train_ssl(config)
            encoder, params, _ = load_run(ckpt_path)
            _, results = evaluate_probe(config, encoder, params, ks=ks, epsilon=epsilon)
            report = shift_gap_report(
                config, encoder, params, "base", n_mc=shift_n_mc, seed=config.seed
            )
            metrics = _read_metrics(os.path.join(config.resolved_output_dir(), METRICS_NAME))
            row.update(results)
            row["shift_gap"] = report.aggregate
            row["final_loss"] = metrics[-1]["loss"] if metrics else float("nan")
            row["checkpoint"] = ckpt_path
        except Exception as exc:  # isolate per-variant failures
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if summary_path:
        _write_summary(summary_path, rows)
    return rows


def _read_metrics(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _write_summary(path, rows):
    columns = ["variant"]
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(row.get(col, "")) for col in columns) + "\n")
