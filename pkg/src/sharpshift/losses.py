"""Contrastive and temperature cross-entropy losses.

The scalar loss for an anchor a with positive p and negatives n_1..n_K is

    -log[ exp(a.p/tau) / (exp(a.p/tau) + (beta/K) * sum_k exp(a.n_k/tau)) ]

where beta weighs the averaged negative term; beta = K recovers the standard
softmax contrastive form. Features are expected to be already normalized:
similarities are plain inner products, and with unit vectors the loss is
bounded by 2/tau + log(1 + beta). Analytic gradients with respect to every
feature vector are provided alongside the values so the encoder can backprop
without re-deriving the softmax algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Temperature, negative weight and negative count.

    ``beta_neg = None`` means "use beta = K", the recovering setting used for
    training; an explicit value is only needed for bound experiments.
    ``k_negatives = None`` lets the op infer K from its inputs.
    """

    tau: float = 0.5
    beta_neg: float | None = None
    k_negatives: int | None = None

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ContractViolationError(f"tau must be positive, got {self.tau}")
        if self.beta_neg is not None and self.beta_neg < 0.0:
            raise ContractViolationError(f"beta_neg must be >= 0, got {self.beta_neg}")
        if self.k_negatives is not None and self.k_negatives < 1:
            raise ContractViolationError(f"k_negatives must be >= 1, got {self.k_negatives}")


def paired_index(k):
    """Index of the view sharing anchor with view k (views 2i, 2i+1 pair up)."""
    return k ^ 1


def loss_upper_bound(tau, beta):
    """2/tau + log(1 + beta), valid for unit-norm inputs."""
    return 2.0 / tau + np.log1p(beta)


def _check_unit(vectors, what):
    norms = np.linalg.norm(np.atleast_2d(vectors), axis=1)
    worst = np.max(np.abs(norms - 1.0))
    if worst > UNIT_NORM_TOL:
        raise ContractViolationError(
            f"{what} must be unit-norm within {UNIT_NORM_TOL:g} (worst deviation {worst:.3g})"
        )


def _info_nce_parts(anchor, positive, negatives, config):
    """Shared forward pass: returns (loss, pos_weight, neg_weights)."""
    k_count = negatives.shape[0]
    if config.k_negatives is not None and k_count != config.k_negatives:
        raise ContractViolationError(
            f"expected {config.k_negatives} negatives, got {k_count}"
        )
    beta = float(config.beta_neg) if config.beta_neg is not None else float(k_count)
    s_pos = float(anchor @ positive) / config.tau
    s_neg = (negatives @ anchor) / config.tau
    shift = max(s_pos, float(np.max(s_neg)))
    e_pos = np.exp(s_pos - shift)
    e_neg = np.exp(s_neg - shift)
    denom = e_pos + (beta / k_count) * np.sum(e_neg)
    loss = shift + np.log(denom) - s_pos
    pos_weight = e_pos / denom
    neg_weights = (beta / k_count) * e_neg / denom
    return loss, pos_weight, neg_weights


def info_nce(anchor, positive, negatives, config, validate=True):
    """Scalar contrastive loss for one (anchor, positive, negatives) tuple.

    ``validate`` gates the unit-norm precondition check; tests that probe the
    loss off the unit sphere (finite differences) switch it off.
    """
    anchor = np.asarray(anchor, dtype=float)
    positive = np.asarray(positive, dtype=float)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
    if negatives.shape[0] < 1:
        raise ContractViolationError("need at least one negative")
    if validate:
        _check_unit(anchor, "anchor")
        _check_unit(positive, "positive")
        _check_unit(negatives, "negatives")
    loss, _, _ = _info_nce_parts(anchor, positive, negatives, config)
    return float(loss)


def info_nce_grad(anchor, positive, negatives, config, validate=True):
    """Loss plus analytic gradients w.r.t. anchor, positive and each negative."""
    anchor = np.asarray(anchor, dtype=float)
    positive = np.asarray(positive, dtype=float)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
    if validate:
        _check_unit(anchor, "anchor")
        _check_unit(positive, "positive")
        _check_unit(negatives, "negatives")
    loss, pos_w, neg_w = _info_nce_parts(anchor, positive, negatives, config)
    # dL/ds_pos = pos_w - 1, dL/ds_k = neg_w[k]; similarities are dots / tau.
    g_pos = (pos_w - 1.0) * anchor / config.tau
    g_neg = neg_w[:, None] * anchor / config.tau
    g_anchor = ((pos_w - 1.0) * positive + neg_w @ negatives) / config.tau
    return float(loss), g_anchor, g_pos, g_neg


def _check_batch(views):
    views = np.asarray(views, dtype=float)
    if views.ndim != 2:
        raise ContractViolationError(f"views must be a (2b, d) array, got {views.shape}")
    n = views.shape[0]
    if n < 4 or n % 2 != 0:
        raise ContractViolationError(
            f"in-batch loss needs 2b views with b >= 2, got {n} views"
        )
    return views


def info_nce_batch(views, config, validate=True):
    """Mean contrastive loss over all 2b anchors of a paired batch.

    Views 2i and 2i+1 are the two augmentations of anchor i. For each anchor
    the positive is its paired view and the negatives are the other 2(b - 1)
    views; beta defaults to K = 2(b - 1) unless the config overrides it.
    """
    loss, _ = info_nce_batch_grad(views, config, validate=validate)
    return loss


def info_nce_batch_grad(views, config, validate=True):
    """Batch loss and its gradient w.r.t. every view (same pairing rules)."""
    views = _check_batch(views)
    if validate:
        _check_unit(views, "views")
    n, _ = views.shape
    k_count = n - 2
    beta = float(config.beta_neg) if config.beta_neg is not None else float(k_count)
    sims = views @ views.T / config.tau
    total = 0.0
    grads = np.zeros_like(views)
    for j in range(n):
        pj = paired_index(j)
        neg_idx = np.array([l for l in range(n) if l != j and l != pj])
        s_pos = sims[j, pj]
        s_neg = sims[j, neg_idx]
        shift = max(s_pos, float(np.max(s_neg)))
        e_pos = np.exp(s_pos - shift)
        e_neg = np.exp(s_neg - shift)
        denom = e_pos + (beta / k_count) * np.sum(e_neg)
        total += shift + np.log(denom) - s_pos
        pos_w = e_pos / denom
        neg_w = (beta / k_count) * e_neg / denom
        scale = 1.0 / (n * config.tau)
        grads[pj] += scale * (pos_w - 1.0) * views[j]
        grads[neg_idx] += scale * neg_w[:, None] * views[j]
        grads[j] += scale * ((pos_w - 1.0) * views[pj] + neg_w @ views[neg_idx])
    return float(total / n), grads


def temperature_cross_entropy(logits, label, tau):
    """-log softmax(logits / tau)[label] for a single row of logits."""
    loss, _ = temperature_cross_entropy_grad(logits, label, tau)
    return loss


def temperature_cross_entropy_grad(logits, label, tau):
    """Loss and gradient w.r.t. the logits."""
    if tau <= 0.0:
        raise ContractViolationError(f"tau must be positive, got {tau}")
    logits = np.asarray(logits, dtype=float)
    m = logits.shape[0]
    if not 0 <= label < m:
        raise ContractViolationError(f"label {label} out of range for {m} classes")
    z = logits / tau
    shift = float(np.max(z))
    log_norm = shift + np.log(np.sum(np.exp(z - shift)))
    loss = log_norm - z[label]
    probs = np.exp(z - log_norm)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(loss), grad / tau
