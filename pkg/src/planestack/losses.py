"""Differentiable image and adversarial losses.

Everything here is a pure function built on the autodiff tape; pass plain
arrays for loss values or tensors when gradients are needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import (Tensor, as_tensor, check_finite, conv2d_valid, square,
                       tabs, tmean, tsum)


@dataclass(frozen=True)
class SsimConfig:
    """Gaussian-window SSIM parameters.

    Defaults are the standard ones: 11x11 window, sigma 1.5,
    C1 = (0.01 * range)^2, C2 = (0.03 * range)^2. Windows are evaluated on
    the valid region only (no padding), so the window must fit inside the
    image.
    """

    window: int = 11
    window_sigma: float = 1.5
    dynamic_range: float = 1.0
    c1: float = None
    c2: float = None

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.c1 is None:
            object.__setattr__(self, "c1", (0.01 * self.dynamic_range) ** 2)
        if self.c2 is None:
            object.__setattr__(self, "c2", (0.03 * self.dynamic_range) ** 2)
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ValueError("stability constants must be positive")


def gaussian_window(size, sigma):
    radius = (size - 1) / 2.0
    coords = np.arange(size) - radius
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _check_image_pair(a, b, cfg):
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.data.ndim != 3:
        raise ValueError(f"expected (H, W, C) images, got {a.data.shape}")
    h, w, _ = a.data.shape
    if h < cfg.window or w < cfg.window:
        raise ValueError(
            f"{h}x{w} image is smaller than the {cfg.window}-pixel window")
    lo, hi = -1e-6, cfg.dynamic_range + 1e-6
    for name, img in (("first", a), ("second", b)):
        if img.data.min() < lo or img.data.max() > hi:
            raise ValueError(
                f"{name} image outside [0, {cfg.dynamic_range}]")


def ssim_t(a, b, cfg: SsimConfig = None):
    """Mean SSIM index over valid windows and channels, on the tape."""
    cfg = cfg or SsimConfig()
    a, b = as_tensor(a), as_tensor(b)
    _check_image_pair(a, b, cfg)
    kernel = gaussian_window(cfg.window, cfg.window_sigma)

    mu_a = conv2d_valid(a, kernel)
    mu_b = conv2d_valid(b, kernel)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = conv2d_valid(a * a, kernel) - mu_aa
    var_b = conv2d_valid(b * b, kernel) - mu_bb
    cov = conv2d_valid(a * b, kernel) - mu_ab

    numerator = (2.0 * mu_ab + cfg.c1) * (2.0 * cov + cfg.c2)
    denominator = (mu_aa + mu_bb + cfg.c1) * (var_a + var_b + cfg.c2)
    return tmean(numerator / denominator)


def ssim(a, b, cfg: SsimConfig = None):
    """Plain-value SSIM of two (H, W, C) arrays."""
    return ssim_t(Tensor(a), Tensor(b), cfg).item()


def view_consistency_loss_t(a, b, delta=0.85, cfg: SsimConfig = None):
    """(delta/2) * (1 - SSIM(a, b)) + (1 - delta) * mean |a - b|.

    Zero iff the images are identical. The absolute term is the mean (not
    the sum) so delta trades off quantities of comparable scale.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    cfg = cfg or SsimConfig()
    a, b = as_tensor(a), as_tensor(b)
    structural = (1.0 - ssim_t(a, b, cfg)) * (delta / 2.0)
    absolute = tmean(tabs(a - b)) * (1.0 - delta)
    return structural + absolute


def view_consistency_loss(a, b, delta=0.85, cfg: SsimConfig = None):
    return view_consistency_loss_t(Tensor(a), Tensor(b), delta, cfg).item()


def softplus_neg(x):
    """f(x) = -log(1 + exp(-x)), stable at both tails.

    Monotone increasing, always <= 0, f(0) = -log 2, and
    f(x) - f(-x) = x exactly in exact arithmetic.
    """
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def gan_loss_with_r1(score_fake, score_real, grad_real, eta=10.0,
                     lvc=0.0, lam=0.5, literal_printed_form=False):
    """Non-saturating adversarial objective with an R1 gradient penalty
    and a weighted view-consistency term.

    Scores are raw logits of a caller-supplied pose-conditioned
    discriminator; Q(s) = logistic(s) is its probability of "real".
    grad_real holds per-image gradients of log Q with respect to the real
    images, shape (batch, ...).

    The default realization is the stable non-saturating form,

        mean softplus(s_fake) + mean softplus(-s_real)
            + eta * mean ||grad_real||^2 + lam * lvc,

    whose terms equal the direct compositions -log(1 - Q(s_fake)) and
    -log Q(s_real). With ``literal_printed_form`` both score terms instead
    use f(log Q(s)) with f(x) = -log(1 + exp(-x)), which keeps the same
    sign for the real and fake expectations.
    """
    score_fake = as_tensor(score_fake)
    score_real = as_tensor(score_real)
    grad_real = as_tensor(grad_real)
    for name, t in (("score_fake", score_fake), ("score_real", score_real),
                    ("grad_real", grad_real)):
        check_finite(t.data, name)
    if score_fake.data.ndim != 1 or score_real.data.ndim != 1:
        raise ValueError("scores must be 1-d batches of logits")
    if grad_real.data.shape[0] != score_real.data.shape[0]:
        raise ValueError("one gradient array per real image required")

    if literal_printed_form:
        # f(log Q(s)) = -softplus(softplus(-s)).
        term_fake = tmean(-autodiff.softplus(autodiff.softplus(-score_fake)))
        term_real = tmean(-autodiff.softplus(autodiff.softplus(-score_real)))
    else:
        term_fake = tmean(autodiff.softplus(score_fake))
        term_real = tmean(autodiff.softplus(-score_real))

    sq = square(grad_real)
    per_image = tsum(reshape_flat(sq), axis=1)
    penalty = tmean(per_image) * float(eta)
    total = term_fake + term_real + penalty
    if isinstance(lvc, Tensor) or lvc != 0.0:
        total = total + as_tensor(lvc) * float(lam)
    return total


def reshape_flat(t):
    """Flatten all but the leading (batch) axis."""
    batch = t.data.shape[0]
    return autodiff.reshape(t, (batch, -1))
