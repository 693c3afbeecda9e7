"""Soft Dice loss with analytic gradient and per-sample channel masking."""

import numpy as np

from .errors import AllChannelsMasked, ShapeError

EPSILON = 1e-5


def soft_dice_loss(probs, target, channel_mask=None):
    """Soft Dice loss over unmasked foreground channels.

    probs, target: (B, C, H, W); target is one-hot. channel_mask is a boolean
    (C,) or (B, C) array; channel 0 (background) never enters the mean, and a
    masked-out channel contributes neither loss nor gradient. Returns
    (loss, d loss / d probs).

    Per sample s and unmasked foreground channel k:
        dice_k = (2 * sum(p*g) + eps) / (sum(p) + sum(g) + eps)
    loss = mean over samples of (1 - mean over those channels of dice_k).
    """
    probs = np.asarray(probs)
    target = np.asarray(target, dtype=probs.dtype)
    if probs.shape != target.shape or probs.ndim != 4:
        raise ShapeError(f"probs {probs.shape} vs target {target.shape}")
    b, c, _, _ = probs.shape
    if channel_mask is None:
        channel_mask = np.ones((b, c), dtype=bool)
    channel_mask = np.asarray(channel_mask, dtype=bool)
    if channel_mask.ndim == 1:
        channel_mask = np.broadcast_to(channel_mask, (b, c))
    if channel_mask.shape != (b, c):
        raise ShapeError(f"channel_mask shape {channel_mask.shape}, expected ({b},{c})")

    fg = channel_mask.copy()
    fg[:, 0] = False
    per_sample_k = fg.sum(axis=1)
    if np.any(per_sample_k == 0):
        raise AllChannelsMasked("a sample has no unmasked foreground channel")

    inter = (probs * target).sum(axis=(2, 3))  # (B, C)
    psum = probs.sum(axis=(2, 3))
    gsum = target.sum(axis=(2, 3))
    num = 2.0 * inter + EPSILON
    den = psum + gsum + EPSILON
    dice = num / den

    loss = float(np.mean(1.0 - (dice * fg).sum(axis=1) / per_sample_k))

    # d dice_k / d p(x) = (2 g(x) * den - num) / den^2, per sample/channel
    scale = -(fg / (b * per_sample_k[:, None])).astype(probs.dtype)  # (B, C)
    coeff_g = scale * 2.0 / den
    coeff_const = scale * (-num / den**2)
    dprobs = (
        coeff_g[:, :, None, None] * target + coeff_const[:, :, None, None]
    ) * fg[:, :, None, None]
    return loss, dprobs
