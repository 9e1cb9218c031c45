"""Loss terms for the adversarial glyph-transfer objective.

The generator objective combines three terms: a non-saturating adversarial
term pushing the discriminator's verdict on generated glyphs toward "real",
an L1 reconstruction term against the ground-truth target glyph (sharper than
L2), and an isotropic total-variation term that discourages speckle along
stroke edges.  The discriminator trains against the standard cross-entropy
objective: accept real target glyphs, reject generated ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "discriminator_loss",
    "generator_adv_loss",
    "l1_loss",
    "tv_loss",
    "generator_total_loss",
]

# added to each radicand so tv_loss stays differentiable at zero difference;
# small enough that a flat image scores (S-1)^2 * 1e-12, far below any real
# signal, while |d/dx sqrt(x^2 + eps)| stays <= 1
TV_STABILIZER = 1e-24


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the generator objective.

    alpha scales the L1 reconstruction term, beta the total-variation term,
    and eps_log clamps probabilities away from 0/1 inside the log terms.
    """

    alpha: float = 100.0
    beta: float = 1e-4
    eps_log: float = 1e-7

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.eps_log < 1e-3:
            raise ConfigError(f"eps_log must be in (0, 1e-3), got {self.eps_log}")


def _check_unit_interval(t: Tensor, name: str) -> None:
    if t.data.size == 0:
        raise DimensionError(f"{name} is empty")
    lo = float(t.data.min())
    hi = float(t.data.max())
    if lo < 0.0 or hi > 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got range [{lo}, {hi}]")


def discriminator_loss(d_real: Tensor, d_fake: Tensor, eps_log: float = 1e-7) -> Tensor:
    """Cross-entropy discriminator objective.

    -mean(log d_real) - mean(log(1 - d_fake)): minimized by judging real
    glyphs as real and generated ones as fake.  ``d_fake`` must come from a
    detached generator output so no gradient reaches the generator here.
    """
    _check_unit_interval(d_real, "d_real")
    _check_unit_interval(d_fake, "d_fake")
    real_term = d_real.clamp(eps_log, 1.0 - eps_log).log().mean()
    fake_term = (1.0 - d_fake).clamp(eps_log, 1.0 - eps_log).log().mean()
    return -real_term - fake_term


def generator_adv_loss(d_fake: Tensor, eps_log: float = 1e-7) -> Tensor:
    """Non-saturating adversarial term: -mean(log d_fake)."""
    _check_unit_interval(d_fake, "d_fake")
    return -(d_fake.clamp(eps_log, 1.0 - eps_log).log().mean())


def l1_loss(generated: Tensor, target: Tensor) -> Tensor:
    """Mean absolute deviation over all elements."""
    if generated.shape != target.shape:
        raise DimensionError(f"l1_loss shape mismatch: {generated.shape} vs {target.shape}")
    return (generated - target).abs().mean()


def tv_loss(z: Tensor) -> Tensor:
    """Isotropic total variation over interior pixel pairs, batch-averaged.

    For each pixel (i, j) with i, j <= S-2 the term is
    sqrt((z[i,j+1] - z[i,j])^2 + (z[i+1,j] - z[i,j])^2 + stabilizer);
    terms are summed per image and averaged over the batch.
    """
    if z.data.ndim != 4:
        raise DimensionError(f"tv_loss expects rank-4 input, got shape {z.shape}")
    n = z.shape[0]
    s_h, s_w = z.shape[2], z.shape[3]
    if s_h < 2 or s_w < 2:
        raise DomainError(f"tv_loss needs at least 2x2 images, got {s_h}x{s_w}")
    base = z[:, :, : s_h - 1, : s_w - 1]
    dx = z[:, :, : s_h - 1, 1:] - base
    dy = z[:, :, 1:, : s_w - 1] - base
    per_term = (dx * dx + dy * dy + TV_STABILIZER).sqrt()
    return per_term.sum() * (1.0 / n)


def generator_total_loss(d_fake: Tensor, generated: Tensor, target: Tensor,
                         weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted generator objective plus a per-term breakdown for logging.

    Returns (total, breakdown) where breakdown holds the unweighted scalar
    value of each term and the weighted total, all as plain floats.
    """
    adv = generator_adv_loss(d_fake, weights.eps_log)
    rec = l1_loss(generated, target)
    tv = tv_loss(generated)
    total = adv + weights.alpha * rec + weights.beta * tv
    breakdown = {
        "adversarial": float(adv.data),
        "l1": float(rec.data),
        "tv": float(tv.data),
        "total": float(total.data),
    }
    return total, breakdown
