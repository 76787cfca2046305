"""Crops used as training-time augmentation."""

from __future__ import annotations

import numpy as np


def random_crop(image: np.ndarray, out: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniformly placed ``out``-sized window over the last two axes of ``image``."""
    h, w = image.shape[-2:]
    oh, ow = out
    if oh > h or ow > w:
        raise ValueError(f"crop {oh}x{ow} larger than image {h}x{w}")
    i = int(rng.integers(0, h - oh + 1))
    j = int(rng.integers(0, w - ow + 1))
    return image[..., i:i + oh, j:j + ow]


def random_crop_batch(batch: np.ndarray, out: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Independent crop offset per sample along axis 0."""
    return np.stack([random_crop(sample, out, rng) for sample in batch])


def center_crop(image: np.ndarray, out: tuple[int, int]) -> np.ndarray:
    h, w = image.shape[-2:]
    oh, ow = out
    if oh > h or ow > w:
        raise ValueError(f"crop {oh}x{ow} larger than image {h}x{w}")
    if (h - oh) % 2 or (w - ow) % 2:
        raise ValueError("center crop needs an even border on each axis")
    i, j = (h - oh) // 2, (w - ow) // 2
    return image[..., i:i + oh, j:j + ow]
