"""Phase-2 evaluation: linear probe, top-k accuracy, single-step attack.

The probe is a bias-free weight matrix trained with temperature
cross-entropy on frozen features; robustness is measured by perturbing each
pixel by epsilon in the direction of the input-gradient sign and re-scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError

FGSM_DEFAULT_EPSILON = 8.0 / 255.0


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 200
    lr: float = 2.0
    tap_point: str = "backbone"
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise EvaluationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0:
            raise EvaluationError(f"lr must be positive, got {self.lr}")
        if self.tap_point not in ("backbone", "projection"):
            raise EvaluationError(f"unknown tap point {self.tap_point!r}")
        if self.tau <= 0.0:
            raise EvaluationError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = FGSM_DEFAULT_EPSILON
    pixel_min: float = 0.0
    pixel_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise EvaluationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.pixel_min >= self.pixel_max:
            raise EvaluationError("pixel_min must be below pixel_max")


def _as_batch(images, labels):
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if images.ndim == 3:
        images = images[None]
    if labels.ndim == 0:
        labels = labels[None]
    if images.shape[0] != labels.shape[0]:
        raise EvaluationError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return images, labels


def train_linear_probe(encoder, params, labeled_data, config, num_classes=None):
    """Gradient-train a weight matrix on frozen features; returns W (M, d).

    ``labeled_data`` is an (images, labels) pair. The encoder parameters are
    read, never written. Full-batch updates keep the run deterministic for a
    given seed.
    """
    images, labels = _as_batch(*labeled_data)
    n_classes = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    missing = [c for c in range(n_classes) if not np.any(labels == c)]
    if missing:
        raise EvaluationError(f"classes {missing} have no training examples")
    feats = encoder.features(params, images, tap=config.tap_point)
    n, dim = feats.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(config.seed)])))
    weights = 0.01 * rng.standard_normal((n_classes, dim))
    for _ in range(config.epochs):
        logits = feats @ weights.T / config.tau
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        grad = (probs - onehot).T @ feats / (n * config.tau)
        weights -= config.lr * grad
    return weights


def top_k_accuracy(logits, labels, k):
    """Fraction of rows whose label is among the k largest logits.

    Ties rank the lower class index first, so results are deterministic.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n, m = logits.shape
    if not 1 <= k <= m:
        raise EvaluationError(f"k must lie in [1, {m}], got {k}")
    if labels.shape != (n,):
        raise EvaluationError(f"{n} logit rows vs labels shape {labels.shape}")
    order = np.argsort(-logits, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


@dataclass
class ProbeModel:
    """Frozen encoder composed with a trained linear probe."""

    encoder: object
    params: np.ndarray
    weights: np.ndarray
    tap_point: str = "backbone"

    def logits(self, images):
        feats = self.encoder.features(self.params, images, tap=self.tap_point)
        return feats @ self.weights.T

    def input_gradient(self, images, labels):
        """Per-sample gradient of the tau=1 cross-entropy w.r.t. the pixels."""
        images, labels = _as_batch(images, labels)
        logits = self.logits(images)
        logits_shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(logits_shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        dlogits = probs
        dlogits[np.arange(images.shape[0]), labels] -= 1.0
        upstream = dlogits @ self.weights
        return self.encoder.input_gradient(
            self.params, images, upstream, tap=self.tap_point
        )


def fgsm_attack(model, images, labels, config):
    """Sign-gradient perturbation: clip(x + eps * sign(grad_x CE), lo, hi).

    Accepts a single image or a batch; epsilon = 0 returns the input
    unchanged. The result always satisfies the infinity-norm budget and the
    pixel-range bounds.
    """
    single = np.asarray(images).ndim == 3
    images, labels = _as_batch(images, labels)
    if config.epsilon == 0.0:
        out = images.copy()
        return out[0] if single else out
    grad = model.input_gradient(images, labels)
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("non-finite input gradient during attack")
    out = np.clip(
        images + config.epsilon * np.sign(grad), config.pixel_min, config.pixel_max
    )
    return out[0] if single else out


def clean_accuracy(model, labeled_data, k=1):
    images, labels = _as_batch(*labeled_data)
    return top_k_accuracy(model.logits(images), labels, k)


def robust_accuracy(model, labeled_data, config):
    """Top-1 accuracy on attacked inputs; equals clean accuracy at epsilon 0."""
    images, labels = _as_batch(*labeled_data)
    attacked = fgsm_attack(model, images, labels, config)
    return top_k_accuracy(model.logits(attacked), labels, 1)
