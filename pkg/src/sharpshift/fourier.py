"""Frequency-domain positive-pair augmentation.

Each image channel is moved to the frequency domain with a 2-D DFT and split
into amplitude and phase. The amplitude is linearly interpolated toward the
amplitude of the most feature-similar view in the batch while the phase (which
carries the foreground structure) is kept intact; the inverse transform of the
mixed spectrum is the augmented view. All randomness comes from explicit
seeds, so the whole batch operation is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AugmentationError


@dataclass(frozen=True)
class AugmentConfig:
    """Settings for amplitude-mixing augmentation.

    ``alpha`` is the upper bound of the Uniform(0, alpha) draw for the mixing
    coefficient. View k of a batch draws its coefficient from the substream
    ``SeedSequence([rng_seed, k])``, which makes per-view parallelism safe.
    """

    alpha: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AugmentationError(f"alpha must lie in [0, 1], got {self.alpha}")


def dft2(channel):
    """2-D DFT of a single channel.

    Contract: ``out[u, v] == sum_{h,w} x[h, w] * exp(-2j*pi*(h*u/H + w*v/W))``,
    computed with a fast transform.
    """
    channel = np.asarray(channel)
    if channel.ndim != 2:
        raise AugmentationError(f"dft2 expects an H x W channel, got shape {channel.shape}")
    return np.fft.fft2(channel)


def idft2(spectrum):
    """Inverse 2-D DFT (complex output; callers decide what to do with it)."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2:
        raise AugmentationError(f"idft2 expects an H x W spectrum, got shape {spectrum.shape}")
    return np.fft.ifft2(spectrum)


def amplitude_phase(spectrum):
    """Split a complex spectrum into (amplitude, phase).

    Phase is the two-argument arctangent of (imag, real) in (-pi, pi]; it is
    defined as 0 wherever the amplitude vanishes (the product A*exp(iP) is 0
    there regardless).
    """
    spectrum = np.asarray(spectrum, dtype=complex)
    amplitude = np.abs(spectrum)
    phase = np.where(amplitude == 0.0, 0.0, np.angle(spectrum))
    return amplitude, phase


def mix_amplitude(a_self, a_partner, beta):
    """Linear interpolation (1 - beta) * a_self + beta * a_partner."""
    a_self = np.asarray(a_self, dtype=float)
    a_partner = np.asarray(a_partner, dtype=float)
    if a_self.shape != a_partner.shape:
        raise AugmentationError(
            f"amplitude shape mismatch: {a_self.shape} vs {a_partner.shape}"
        )
    if not 0.0 <= beta <= 1.0:
        raise AugmentationError(f"beta must lie in [0, 1], got {beta}")
    return (1.0 - beta) * a_self + beta * a_partner


def reconstruct(mixed_amplitude, phase, clip=True):
    """Inverse transform of A * exp(iP), imaginary residue discarded.

    The inverse of a mixed spectrum is not exactly real; the imaginary part is
    round-off scale whenever the amplitudes come from real images, so it is
    dropped. With ``clip`` the result is clamped to the [0, 1] pixel range.
    """
    mixed_amplitude = np.asarray(mixed_amplitude, dtype=float)
    phase = np.asarray(phase, dtype=float)
    if mixed_amplitude.shape != phase.shape:
        raise AugmentationError(
            f"amplitude/phase shape mismatch: {mixed_amplitude.shape} vs {phase.shape}"
        )
    pixels = idft2(mixed_amplitude * np.exp(1j * phase)).real
    if clip:
        pixels = np.clip(pixels, 0.0, 1.0)
    return pixels


def most_similar_index(features, k):
    """Index l != k maximizing features[k] . features[l].

    Ties are broken toward the smallest index so the pairing is deterministic.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if n < 2:
        raise AugmentationError(f"need at least 2 feature vectors, got {n}")
    if not 0 <= k < n:
        raise AugmentationError(f"index {k} out of range for {n} features")
    sims = features @ features[k]
    sims[k] = -np.inf
    return int(np.argmax(sims))


def draw_betas(n_views, config):
    """Mixing coefficients for a batch, one Uniform(0, alpha) draw per view.

    View k uses the substream SeedSequence([rng_seed, k]); the same derivation
    is applied whether views are processed sequentially or in parallel.
    """
    betas = np.empty(n_views)
    for k in range(n_views):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.rng_seed, k])))
        betas[k] = rng.uniform(0.0, config.alpha)
    return betas


def fft_augment_batch(views, features, config):
    """Replace every view by its amplitude-mixed counterpart.

    ``views`` is a (2b, H, W, C) stack of positive examples and ``features``
    holds one unit feature vector per view, computed by the current encoder on
    these exact views. For each view k a coefficient beta ~ Uniform(0, alpha)
    is drawn (one draw shared by all channels of the view, which keeps color
    coherence), the most feature-similar other view is located, amplitudes are
    mixed per channel at beta, and the channel is rebuilt from the mixed
    amplitude and the view's own phase. Views with beta == 0 are passed
    through bit-identically, so alpha = 0 makes the whole op the identity.
    """
    views = np.asarray(views, dtype=float)
    features = np.asarray(features, dtype=float)
    if views.ndim != 4:
        raise AugmentationError(f"views must be (n, H, W, C), got shape {views.shape}")
    if features.ndim != 2 or features.shape[0] != views.shape[0]:
        raise AugmentationError(
            f"need one feature vector per view: {features.shape} vs {views.shape[0]} views"
        )
    n, _, _, channels = views.shape
    betas = draw_betas(n, config)
    out = views.copy()
    for k in range(n):
        beta = betas[k]
        if beta == 0.0:
            continue
        partner = most_similar_index(features, k)
        for c in range(channels):
            amp_self, phase = amplitude_phase(dft2(views[k, :, :, c]))
            amp_partner, _ = amplitude_phase(dft2(views[partner, :, :, c]))
            mixed = mix_amplitude(amp_self, amp_partner, beta)
            out[k, :, :, c] = reconstruct(mixed, phase)
    return out
