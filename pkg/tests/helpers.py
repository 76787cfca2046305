"""Shared fixtures for the test suite."""

import numpy as np


def dyadic(rng: np.random.Generator, shape, denom: int = 8, span: int = 8) -> np.ndarray:
    """Small multiples of 1/denom; sums of products stay exact in float64."""
    return rng.integers(-span, span + 1, size=shape) / denom


def dyadic_layer(layer, rng: np.random.Generator):
    layer.weight.data[...] = dyadic(rng, layer.weight.shape)
    layer.bias.data[...] = dyadic(rng, layer.bias.shape)
    return layer


def smooth_image(rng: np.random.Generator, channels: int, size: int, blobs: int = 4) -> np.ndarray:
    """Sum of wide Gaussian blobs inside a disc, zero near the border."""
    c = size // 2
    y, x = np.mgrid[:size, :size] - c
    out = np.zeros((channels, size, size))
    for ch in range(channels):
        for _ in range(blobs):
            cx, cy = rng.uniform(-c / 2, c / 2, size=2)
            out[ch] += rng.normal() * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (size / 6) ** 2))
    return out * (np.hypot(x, y) <= c - 1)
