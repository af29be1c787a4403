"""Freq-MixStyle: mix per-frequency-bin statistics across a batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class FreqMixStyleConfig:
    alpha: float = 0.3
    probability: float = 0.4
    eps: float = 1e-6

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("Freq-MixStyle alpha must be > 0")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError("Freq-MixStyle probability must be in [0, 1]")


def freq_mixstyle(x, cfg: FreqMixStyleConfig, rng: np.random.Generator, lam=None, perm=None):
    """Re-style each sample with frequency statistics mixed from a partner.

    ``x`` is (B, C, F, T). Statistics are the mean and std over (C, T) for
    every frequency bin. ``lam`` (scalar or (B,)) and ``perm`` override the
    random draws; the application coin is always drawn from ``rng`` so the
    random stream does not depend on the overrides. Returns ``x`` itself when
    the coin says skip or the batch has fewer than two samples.
    """
    b = x.shape[0]
    if b < 2 or cfg.probability == 0.0:
        return x
    if rng.random() > cfg.probability:
        return x
    if lam is None:
        lam = rng.beta(cfg.alpha, cfg.alpha, size=b)
    if perm is None:
        perm = rng.permutation(b)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (b,)).reshape(b, 1, 1, 1)
    xd = x.astype(np.float64)
    mu = xd.mean(axis=(1, 3), keepdims=True)
    sig = np.sqrt(xd.var(axis=(1, 3), keepdims=True) + cfg.eps)
    normed = (xd - mu) / sig
    mu_mix = lam * mu + (1.0 - lam) * mu[perm]
    sig_mix = lam * sig + (1.0 - lam) * sig[perm]
    return (normed * sig_mix + mu_mix).astype(x.dtype)
