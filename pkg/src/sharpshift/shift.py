"""Monte-Carlo estimator of the positive-pair distribution-shift gap.

For each class c the ideal positive distribution produces features centered
at the class-conditional mean; the practical one produces features centered
at the per-anchor augmentation mean. The gap is the prior-weighted average
over anchors of ||class mean - augmentation mean|| raised to a configurable
exponent, optionally scaled by a temperature factor. Smaller is better: it
measures how far augmentation-based positives are from same-class sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import MetricError

_TAU_FACTORS = ("none", "inverse_tau", "tau")


@dataclass(frozen=True)
class ShiftGapConfig:
    """Estimator knobs.

    The exponent (1/2 or 1) and temperature factor are configurable because
    the quantity appears in several equivalent-looking forms; the defaults
    (exponent 1/2, no temperature factor) match the form used for reporting.
    """

    n_mc_aug: int = 8
    exponent: float = 0.5
    tau_factor: str = "none"
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_mc_aug < 1:
            raise MetricError(f"n_mc_aug must be >= 1, got {self.n_mc_aug}")
        if self.exponent not in (0.5, 1.0):
            raise MetricError(f"exponent must be 0.5 or 1, got {self.exponent}")
        if self.tau_factor not in _TAU_FACTORS:
            raise MetricError(f"tau_factor must be one of {_TAU_FACTORS}")
        if self.tau <= 0.0:
            raise MetricError(f"tau must be positive, got {self.tau}")


@dataclass
class ShiftGapReport:
    per_class_gap: dict
    aggregate: float
    class_priors: dict
    n_mc_aug: int
    exponent: float
    tau_factor: str

    def to_json(self):
        payload = {
            "aggregate": self.aggregate,
            "per_class_gap": {str(k): v for k, v in sorted(self.per_class_gap.items())},
            "class_priors": {str(k): v for k, v in sorted(self.class_priors.items())},
            "n_mc_aug": self.n_mc_aug,
            "exponent": self.exponent,
            "tau_factor": self.tau_factor,
        }
        return json.dumps(payload, sort_keys=True)


def _factor(config):
    if config.tau_factor == "inverse_tau":
        return 1.0 / config.tau
    if config.tau_factor == "tau":
        return config.tau
    return 1.0


def estimate_shift_gap(feature_fn, labeled_data, augment_fn, config, classes=None):
    """Estimate the shift gap of an augmentation pool under a feature map.

    ``feature_fn`` maps a list of items to an (n, d) array of unit features
    (bind the encoder and its parameters before calling). ``labeled_data`` is
    a sequence of (item, class) pairs; ``augment_fn(item, rng)`` is one draw
    from the augmentation distribution. Class means use all same-class items
    once; the augmentation mean of each anchor averages ``n_mc_aug`` draws
    from the substream SeedSequence([seed, anchor_index]), so anchors can be
    processed in any order (or in parallel) without changing the result.
    """
    items = [item for item, _ in labeled_data]
    labels = np.array([label for _, label in labeled_data])
    if len(items) == 0:
        raise MetricError("labeled_data is empty")
    present = set(int(l) for l in labels)
    wanted = sorted(present) if classes is None else sorted(int(c) for c in classes)
    for c in wanted:
        if c not in present:
            raise MetricError(f"class {c} has no examples in labeled_data")

    features = np.asarray(feature_fn(items), dtype=float)
    class_means = {
        c: features[labels == c].mean(axis=0) for c in wanted
    }

    terms = np.empty(len(items))
    for i, (item, label) in enumerate(zip(items, labels)):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([int(config.seed), i]))
        )
        copies = [augment_fn(item, rng) for _ in range(config.n_mc_aug)]
        aug_mean = np.asarray(feature_fn(copies), dtype=float).mean(axis=0)
        gap = float(np.linalg.norm(class_means[int(label)] - aug_mean))
        terms[i] = gap**config.exponent

    factor = _factor(config)
    per_class_gap = {}
    class_priors = {}
    aggregate = 0.0
    n = len(items)
    for c in wanted:
        mask = labels == c
        per_class_gap[c] = factor * float(terms[mask].mean())
        class_priors[c] = float(mask.sum()) / n
        aggregate += class_priors[c] * per_class_gap[c]
    return ShiftGapReport(
        per_class_gap=per_class_gap,
        aggregate=float(aggregate),
        class_priors=class_priors,
        n_mc_aug=config.n_mc_aug,
        exponent=config.exponent,
        tau_factor=config.tau_factor,
    )
