"""Exact numerical checks of proof-step quantities on finite worlds.

A DiscreteWorld is a fully enumerable data model: n abstract points, M
classes with priors and class-conditional distributions over the points, and
a tabulated unit feature vector per point standing in for the encoder. On
such worlds every population expectation is a finite sum, so the
mean-classifier supervised loss, the surrogate contrastive loss, the exact
K-negative contrastive expectation and the concrete PAC-Bayes penalty can be
evaluated to machine precision and compared against each other.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import LabError
from .losses import temperature_cross_entropy

# Exact K-negative enumeration runs over multisets of negatives; this guard
# keeps the count table small. n <= 6 with K <= 4 is always inside it.
MAX_EXACT_MULTISETS = 100_000


@dataclass(frozen=True)
class DiscreteWorld:
    """Finite data space: priors (M,), conditionals (M, n), features (n, d)."""

    priors: np.ndarray
    conditionals: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        conditionals = np.asarray(self.conditionals, dtype=float)
        features = np.asarray(self.features, dtype=float)
        if priors.ndim != 1 or conditionals.ndim != 2 or features.ndim != 2:
            raise LabError("priors must be (M,), conditionals (M, n), features (n, d)")
        m, n = conditionals.shape
        if priors.shape != (m,) or features.shape[0] != n:
            raise LabError(
                f"inconsistent world: priors {priors.shape}, "
                f"conditionals {conditionals.shape}, features {features.shape}"
            )
        if np.any(priors <= 0.0) or abs(priors.sum() - 1.0) > 1e-12:
            raise LabError("priors must be positive and sum to 1")
        if np.any(conditionals < 0.0) or np.max(np.abs(conditionals.sum(axis=1) - 1.0)) > 1e-12:
            raise LabError("each conditional must be a probability vector")
        norms = np.linalg.norm(features, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-10:
            raise LabError("every feature must be unit-norm within 1e-10")
        for arr in (priors, conditionals, features):
            arr.setflags(write=False)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "conditionals", conditionals)
        object.__setattr__(self, "features", features)

    @property
    def n_classes(self):
        return self.priors.shape[0]

    @property
    def n_points(self):
        return self.features.shape[0]

    @property
    def p_data(self):
        """Marginal over points: sum_c pi_c p_c."""
        return self.priors @ self.conditionals

    @property
    def p_pos(self):
        """Positive-pair matrix P[x, x+] = sum_c pi_c p_c(x) p_c(x+)."""
        return self.conditionals.T @ (self.priors[:, None] * self.conditionals)

    @property
    def mean_features(self):
        """Class-conditional mean feature per class, the mean-classifier rows."""
        return self.conditionals @ self.features


def make_random_world(rng, n_points=4, n_classes=2, dim=3):
    """Random valid world; priors and conditionals are bounded away from 0."""
    priors = rng.uniform(0.2, 1.0, size=n_classes)
    priors = priors / priors.sum()
    conditionals = rng.uniform(0.05, 1.0, size=(n_classes, n_points))
    conditionals = conditionals / conditionals.sum(axis=1, keepdims=True)
    features = rng.standard_normal((n_points, dim))
    features = features / np.linalg.norm(features, axis=1, keepdims=True)
    return DiscreteWorld(priors=priors, conditionals=conditionals, features=features)


def sup_loss_mean_classifier(world, tau):
    """Supervised loss of the mean classifier, by full enumeration.

    The classifier row for class c is the class-conditional mean feature; the
    loss is sum_c pi_c sum_x p_c(x) * tauCE(W f(x), c).
    """
    w_bar = world.mean_features
    logits = world.features @ w_bar.T  # (n, M)
    total = 0.0
    for c in range(world.n_classes):
        for x in range(world.n_points):
            weight = world.priors[c] * world.conditionals[c, x]
            if weight == 0.0:
                continue
            total += weight * temperature_cross_entropy(logits[x], c, tau)
    return float(total)


def surrogate_unsup_loss(world, tau):
    """Population surrogate loss: alignment term plus log-partition term.

    E_{(x,x+)~p_pos}[-f(x).f(x+)/tau] + E_x[log E_{x-}[exp(f(x).f(x-)/tau)]],
    both expectations evaluated exactly.
    """
    w_bar = world.mean_features
    align = -np.sum(world.priors * np.sum(w_bar * w_bar, axis=1)) / tau
    p_data = world.p_data
    sims = world.features @ world.features.T / tau
    shift = sims.max(axis=1, keepdims=True)
    log_part = shift[:, 0] + np.log(np.exp(sims - shift) @ p_data)
    return float(align + p_data @ log_part)


class ExpectationResult(NamedTuple):
    value: float
    stderr: float
    exact: bool


def _negative_multisets(n_points, k_negatives, log_p_data):
    """Count vectors over points for K iid negatives, with their probabilities.

    Enumerating multisets instead of ordered tuples turns n^K terms into
    C(K+n-1, n-1) weighted ones; the weight is the multinomial probability.
    """
    counts = []
    log_weights = []
    log_k_fact = math.lgamma(k_negatives + 1)
    for combo in itertools.combinations_with_replacement(range(n_points), k_negatives):
        count = np.bincount(combo, minlength=n_points)
        mass = 0.0
        degenerate = False
        for i, c in enumerate(count):
            if c == 0:
                continue
            if np.isinf(log_p_data[i]):
                degenerate = True
                break
            mass += c * log_p_data[i] - math.lgamma(c + 1)
        if degenerate:
            continue
        counts.append(count)
        log_weights.append(log_k_fact + mass)
    return np.array(counts, dtype=float), np.exp(np.array(log_weights))


def exact_info_nce_expectation(world, tau, beta_neg, k_negatives, mc_samples=None, seed=0):
    """Expectation of the K-negative contrastive loss over the world.

    Exact when the negative-multiset table fits the guard, otherwise a Monte
    Carlo estimate with its standard error (``mc_samples`` must be given).
    """
    if k_negatives < 1:
        raise LabError(f"k_negatives must be >= 1, got {k_negatives}")
    if beta_neg < 0.0:
        raise LabError(f"beta_neg must be >= 0, got {beta_neg}")
    n = world.n_points
    n_multisets = math.comb(k_negatives + n - 1, n - 1)
    if n_multisets <= MAX_EXACT_MULTISETS:
        return ExpectationResult(
            _exact_expectation(world, tau, beta_neg, k_negatives), 0.0, True
        )
    if mc_samples is None:
        raise LabError(
            f"{n_multisets} negative multisets exceed the exact guard "
            f"({MAX_EXACT_MULTISETS}); pass mc_samples for a Monte Carlo estimate"
        )
    return _mc_expectation(world, tau, beta_neg, k_negatives, mc_samples, seed)


def _loss_given_negsum(s_pos, neg_sums, beta, k_negatives, shift):
    # loss = log(exp(s_pos) + (beta/K) * sum_k exp(s_k)) - s_pos, shift-stabilized
    return np.log(np.exp(s_pos - shift) + (beta / k_negatives) * neg_sums) + shift - s_pos


def _exact_expectation(world, tau, beta_neg, k_negatives):
    p_data = world.p_data
    with np.errstate(divide="ignore"):
        log_p_data = np.log(p_data)
    counts, weights = _negative_multisets(world.n_points, k_negatives, log_p_data)
    p_pos = world.p_pos
    sims = world.features @ world.features.T / tau
    total = 0.0
    for x in range(world.n_points):
        if not np.any(p_pos[x] > 0.0):
            continue
        shift = float(np.max(sims[x]))
        neg_sums = counts @ np.exp(sims[x] - shift)  # (n_multisets,)
        for xp in range(world.n_points):
            if p_pos[x, xp] == 0.0:
                continue
            losses = _loss_given_negsum(sims[x, xp], neg_sums, beta_neg, k_negatives, shift)
            total += p_pos[x, xp] * float(weights @ losses)
    return float(total)


def _mc_expectation(world, tau, beta_neg, k_negatives, mc_samples, seed):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)])))
    n = world.n_points
    classes = rng.choice(world.n_classes, size=mc_samples, p=world.priors)
    sims = world.features @ world.features.T / tau
    anchors = np.empty(mc_samples, dtype=int)
    positives = np.empty(mc_samples, dtype=int)
    for c in range(world.n_classes):
        mask = classes == c
        count = int(mask.sum())
        if count == 0:
            continue
        anchors[mask] = rng.choice(n, size=count, p=world.conditionals[c])
        positives[mask] = rng.choice(n, size=count, p=world.conditionals[c])
    negatives = rng.choice(n, size=(mc_samples, k_negatives), p=world.p_data)
    s_pos = sims[anchors, positives]
    s_neg = sims[anchors[:, None], negatives]
    shift = np.maximum(s_pos, s_neg.max(axis=1))
    denom = np.exp(s_pos - shift) + (beta_neg / k_negatives) * np.sum(
        np.exp(s_neg - shift[:, None]), axis=1
    )
    losses = np.log(denom) + shift - s_pos
    stderr = float(np.std(losses, ddof=1) / np.sqrt(mc_samples)) if mc_samples > 1 else np.inf
    return ExpectationResult(float(np.mean(losses)), stderr, False)


@dataclass(frozen=True)
class MeanClassifierCheck:
    lhs: float
    rhs: float
    slack: float
    holds: bool


def verify_mean_classifier_step(world, tau, tol=1e-9):
    """Check sup-loss(mean classifier) <= surrogate + log(1 / min_c pi_c).

    The correction term log(1 / min_c pi_c) accounts for pulling the class
    priors out of the log-sum; it is exactly tight on the constant-feature
    uniform world. The raw slack is reported so near-violations are visible.
    """
    lhs = sup_loss_mean_classifier(world, tau)
    rhs = surrogate_unsup_loss(world, tau) + math.log(1.0 / float(np.min(world.priors)))
    slack = rhs - lhs
    return MeanClassifierCheck(lhs=lhs, rhs=rhs, slack=slack, holds=bool(lhs <= rhs + tol))


@dataclass(frozen=True)
class PacPenaltyInputs:
    """Inputs to the concrete PAC-Bayes penalty evaluator."""

    n_samples: int
    n_params: int
    delta: float
    rho: float
    tau: float
    beta_neg: float
    theta_norm: float

    def __post_init__(self):
        if self.n_samples < 1:
            raise LabError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_params < 1:
            raise LabError(f"n_params must be >= 1, got {self.n_params}")
        if not 0.0 < self.delta < 1.0:
            raise LabError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rho <= 0.0:
            raise LabError(f"rho must be positive, got {self.rho}")
        if self.tau <= 0.0:
            raise LabError(f"tau must be positive, got {self.tau}")
        if self.beta_neg < 0.0:
            raise LabError(f"beta_neg must be >= 0, got {self.beta_neg}")
        if self.theta_norm < 0.0:
            raise LabError(f"theta_norm must be >= 0, got {self.theta_norm}")


def pac_penalty(inputs):
    """Concrete sharpness generalization penalty.

    With sigma = rho / (sqrt(T) + sqrt(log N)) and L = 2/tau + log(1 + beta):

        (1/sqrt(N)) * [ 1/2 + (T/2) log(1 + ||theta||^2 / (T sigma^2))
                        + log(1/delta) + 6 log(N + T) ]
        + L^2 / (8 sqrt(N)) + 2 L / sqrt(N)
    """
    n, t = inputs.n_samples, inputs.n_params
    sigma = inputs.rho / (math.sqrt(t) + math.sqrt(math.log(n)))
    bound_l = 2.0 / inputs.tau + math.log1p(inputs.beta_neg)
    log_term = 0.5 * t * math.log1p(inputs.theta_norm**2 / (t * sigma**2))
    root_n = math.sqrt(n)
    return (
        (0.5 + log_term + math.log(1.0 / inputs.delta) + 6.0 * math.log(n + t)) / root_n
        + bound_l**2 / (8.0 * root_n)
        + 2.0 * bound_l / root_n
    )
