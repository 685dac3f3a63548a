"""Image normalization applied before the CNN sees a plot."""
from dataclasses import dataclass

import numpy as np

DEGENERATE_STD = 1e-8
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class NormalizedImage:
    pixels: np.ndarray
    mean_removed: float
    std_used: float


def rescale01(image):
    """8-bit pixels to reals in [0, 1]."""
    return np.asarray(image, dtype=np.float64) / 255.0


def to_grayscale(image):
    """Luminance of an HxWx3 image, kept as a single channel (HxWx1)."""
    image = np.asarray(image, dtype=np.float64)
    return (image @ LUMA)[:, :, None]


def samplewise_standardize(image, per_channel=False):
    """Subtract the image's own mean and divide by its population std.

    On a white-dominant plot this acts as a colour negative: the background
    lands on a small constant and ink takes the large-magnitude values.
    Near-constant images (std < 1e-8) map to zeros.
    """
    x = np.asarray(image, dtype=np.float64)
    axes = tuple(range(x.ndim - 1)) if per_channel else None
    mean = x.mean(axis=axes, keepdims=per_channel)
    std = x.std(axis=axes, keepdims=per_channel)
    if per_channel:
        safe = np.where(std < DEGENERATE_STD, 1.0, std)
        out = np.where(std < DEGENERATE_STD, 0.0, (x - mean) / safe)
        return NormalizedImage(out, float(np.mean(mean)), float(np.mean(std)))
    if std < DEGENERATE_STD:
        return NormalizedImage(np.zeros_like(x), float(mean), 0.0)
    return NormalizedImage((x - mean) / std, float(mean), float(std))


def prepare(image_u8, standardize=True, grayscale=False, dtype=np.float32):
    """Full input pipeline for one rendered plot: rescale, optional gray, standardize."""
    x = rescale01(image_u8)
    if grayscale:
        x = to_grayscale(x)
    if standardize:
        x = samplewise_standardize(x).pixels
    return x.astype(dtype)


def debug_view(pixels):
    """Min-max map a normalized image back to 8 bits for inspection."""
    x = np.asarray(pixels, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo < DEGENERATE_STD:
        return np.zeros(x.shape, dtype=np.uint8)
    return np.round((x - lo) / (hi - lo) * 255).astype(np.uint8)
