"""Rotation-classification networks: a group-invariant stack and a plain CNN.

Both share one four-block layout so that only the weight tying differs::

    conv k5        -> relu -> maxpool 3     (31 -> 27 -> 9)
    conv k5 pad 2  -> relu -> maxpool 3     ( 9 ->  9 -> 3)
    conv k3        -> relu                  ( 3 ->  1)
    conv k1        -> relu
    [group max pool] -> linear -> logits
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .groups import Group
from .layers import Conv2d, EquivConv, Linear, Module, disc_taps, group_pool

KERNEL = 5
POOL = 3


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Standardized(Module):
    """Fixed per-channel shift and scale applied before the first conv.

    A per-channel affine map commutes with every pixel permutation or
    interpolation, so it does not touch the equivariance of the stack.
    """

    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def set_input_stats(self, shift, scale) -> None:
        shift = np.asarray(shift, dtype=np.float64).reshape(-1)
        scale = np.asarray(scale, dtype=np.float64).reshape(-1)
        if shift.shape != (self.in_channels,) or scale.shape != (self.in_channels,):
            raise ValueError("one shift and one scale per input channel")
        if np.any(scale <= 0):
            raise ValueError("scales must be positive")
        self.input_shift, self.input_scale = shift, scale

    def _prepare(self, x) -> Tensor:
        if self.input_shift is None:
            return _as_input(x)
        shift = self.input_shift[:, None, None]
        scale = self.input_scale[:, None, None]
        if isinstance(x, Tensor):
            return (x - shift) * (1.0 / scale)
        return Tensor((np.asarray(x, dtype=np.float64) - shift) / scale)

    def _stats_metadata(self) -> dict | None:
        if self.input_shift is None:
            return None
        return {"shift": self.input_shift.tolist(), "scale": self.input_scale.tolist()}


class EquivariantClassifier(_Standardized):
    def __init__(self, group: Group, in_channels: int, fields: tuple[int, ...], n_classes: int,
                 rng: np.random.Generator, mode: str = "auto"):
        if len(fields) != 4:
            raise ValueError("four conv blocks expected")
        self.group = group
        self.in_channels = in_channels
        self.fields = tuple(int(f) for f in fields)
        self.n_classes = n_classes
        c1, c2, c3, c4 = self.fields
        self.convs = [
            EquivConv(group, "trivial", in_channels, c1, KERNEL, rng, padding=0, mode=mode),
            EquivConv(group, "regular", c1, c2, KERNEL, rng, padding=2, mode=mode),
            EquivConv(group, "regular", c2, c3, 3, rng, padding=0, mode=mode),
            EquivConv(group, "regular", c3, c4, 1, rng, padding=0, mode=mode),
        ]
        self.head = Linear(c4, n_classes, rng)

    def features(self, x) -> Tensor:
        """Invariant feature vector [N, c4]."""
        h = self._prepare(x)
        h = ad.maxpool2d(ad.relu(self.convs[0](h)), POOL)
        h = ad.maxpool2d(ad.relu(self.convs[1](h)), POOL)
        h = ad.relu(self.convs[2](h))
        h = ad.relu(self.convs[3](h))
        return ad.flatten(group_pool(h, self.group.order))

    def forward(self, x) -> Tensor:
        return self.head(self.features(x))

    def metadata(self) -> dict:
        return {
            "type": "EquivariantClassifier",
            "group": self.group.to_dict(),
            "fields": list(self.fields),
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "input_stats": self._stats_metadata(),
            "layers": [c.metadata() for c in self.convs] + [self.head.metadata()],
        }


class PlainClassifier(_Standardized):
    def __init__(self, in_channels: int, widths: tuple[int, ...], n_classes: int,
                 rng: np.random.Generator):
        if len(widths) != 4:
            raise ValueError("four conv blocks expected")
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        self.n_classes = n_classes
        w1, w2, w3, w4 = self.widths
        self.convs = [
            Conv2d(in_channels, w1, KERNEL, rng, padding=0),
            Conv2d(w1, w2, KERNEL, rng, padding=2),
            Conv2d(w2, w3, 3, rng, padding=0),
            Conv2d(w3, w4, 1, rng, padding=0),
        ]
        self.head = Linear(w4, n_classes, rng)

    def features(self, x) -> Tensor:
        h = self._prepare(x)
        h = ad.maxpool2d(ad.relu(self.convs[0](h)), POOL)
        h = ad.maxpool2d(ad.relu(self.convs[1](h)), POOL)
        h = ad.relu(self.convs[2](h))
        h = ad.relu(self.convs[3](h))
        return ad.flatten(h)

    def forward(self, x) -> Tensor:
        return self.head(self.features(x))

    def metadata(self) -> dict:
        return {
            "type": "PlainClassifier",
            "widths": list(self.widths),
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "input_stats": self._stats_metadata(),
            "layers": [c.metadata() for c in self.convs] + [self.head.metadata()],
        }


def equivariant_param_count(order: int, in_channels: int, fields, n_classes: int,
                            mode: str = "exact") -> int:
    """Free parameters; bilinear-mode filters only carry their disc taps."""
    c1, c2, c3, c4 = fields
    taps = (lambda k: k * k) if mode == "exact" else (lambda k: len(disc_taps(k)))
    k2, k3 = taps(KERNEL), taps(3)
    convs = (in_channels * c1 * k2 + c1) + (c1 * order * c2 * k2 + c2) \
        + (c2 * order * c3 * k3 + c3) + (c3 * order * c4 * taps(1) + c4)
    return convs + c4 * n_classes + n_classes


def plain_param_count(in_channels: int, widths, n_classes: int) -> int:
    w1, w2, w3, w4 = widths
    k2 = KERNEL * KERNEL
    convs = (in_channels * w1 * k2 + w1) + (w1 * w2 * k2 + w2) + (w2 * w3 * 9 + w3) + (w3 * w4 + w4)
    return convs + w4 * n_classes + n_classes


def matched_plain_widths(order: int, in_channels: int, fields, n_classes: int,
                         mode: str = "exact") -> tuple[int, ...]:
    """Plain widths proportional to ``fields`` whose parameter count is closest
    to the equivariant stack's.

    Scanning the scale keeps the channel ratios of the equivariant model, the
    same way hidden widths are widened by about sqrt(|G|) for parity.
    """
    target = equivariant_param_count(order, in_channels, fields, n_classes, mode)
    best = None
    for scale in np.arange(0.5, 4.0 * np.sqrt(order), 0.01):
        widths = tuple(max(1, int(round(scale * f))) for f in fields)
        gap = abs(plain_param_count(in_channels, widths, n_classes) - target)
        if best is None or gap < best[0]:
            best = (gap, widths)
    return best[1]


def parity_gap(equiv: Module, plain: Module) -> float:
    """|params(equivariant) - params(plain)| / params(plain)."""
    p_plain = plain.num_parameters()
    return abs(equiv.num_parameters() - p_plain) / p_plain
