"""Plain and group-equivariant layers on top of :mod:`latentsym.autodiff`.

Regular-representation feature maps use a field-major channel layout: channel
``field * |G| + h`` holds the response of group element ``h``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .groups import (
    Group,
    GroupElement,
    Representation,
    _exact_index,
    act_on_image,
    act_on_regular_features,
    coset_split,
    image_action_matrix,
    make_group,
    regular_permutation,
    rep_matrix,
    resolve_mode,
)


class Module:
    """Minimal parameter container; subclasses register attributes holding
    Tensors, Modules or lists of Modules."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def metadata(self) -> dict:
        return {"type": type(self).__name__}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def gather_flat(a: Tensor, index: np.ndarray) -> Tensor:
    """``a.ravel()[index]`` with a bincount backward (fast for weight tying)."""
    index = np.asarray(index, dtype=np.int64)
    flat_index = index.ravel()

    def backward(g):
        a.accumulate(np.bincount(flat_index, weights=g.ravel(), minlength=a.size).reshape(a.shape))

    return Tensor.from_op(a.data.reshape(-1)[index], (a,), "gather", backward)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = ad.parameter(_he_uniform(rng, (n_out, n_in), n_in), "weight")
        self.bias = ad.parameter(np.zeros(n_out), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(ad.as_tensor(x), self.weight, self.bias)

    def metadata(self) -> dict:
        return {"type": "Linear", "shape": list(self.weight.shape)}


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 padding: int = 0, stride: int = 1):
        fan_in = c_in * kernel_size ** 2
        self.weight = ad.parameter(_he_uniform(rng, (c_out, c_in, kernel_size, kernel_size), fan_in), "weight")
        self.bias = ad.parameter(np.zeros(c_out), "bias")
        self.padding = padding
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(ad.as_tensor(x), self.weight, self.bias, stride=self.stride, padding=self.padding)

    def metadata(self) -> dict:
        return {"type": "Conv2d", "shape": list(self.weight.shape), "padding": self.padding,
                "stride": self.stride}


def disc_taps(k: int) -> np.ndarray:
    """Flat indices of the k x k pixels within radius k // 2 of the center."""
    c = k // 2
    y, x = np.mgrid[:k, :k] - c
    return np.flatnonzero(np.hypot(x, y) <= c + 1e-9)


def splat_matrix(g: GroupElement, k: int) -> np.ndarray:
    """(k*k, k*k) matrix moving filter mass from ``y`` to ``g y`` by bilinear splatting.

    Splatting is the transpose of bilinear sampling, so it keeps the total mass
    and first moments of a filter whose rotated support stays on the grid.  The
    grid-exact part of ``g`` is applied as an exact permutation afterwards.
    """
    q, b = coset_split(g)
    push = image_action_matrix(make_group(b.kind, b.n).inv(b), k, k, "bilinear").T
    return image_action_matrix(q, k, k, "exact") @ push


class EquivConv(Module):
    """Group convolution whose kernel bank is expanded from canonical filters.

    ``in_kind='trivial'`` is a lifting layer (plain channels in, regular fields
    out); ``in_kind='regular'`` maps regular fields to regular fields.  Only
    the canonical filters are trainable, so the parameter count is
    ``c_out * c_in * [|G|] * k * k`` plus one bias per output field.

    The bank entry for output element ``g`` and input element ``h`` is the
    canonical filter for ``g^-1 h`` transformed spatially by ``g``, which is the
    solution of ``K(gy) = rho_out(g) K(y) rho_in(g)^-1`` for regular fields.

    In bilinear mode (groups with rotations off the pixel grid) the canonical
    filters live on the disc of radius ``k // 2`` and are rotated by
    :func:`splat_matrix`; the constraint then holds exactly for grid-exact
    elements and up to interpolation error for the rest.
    """

    def __init__(self, group: Group, in_kind: str, c_in: int, c_out: int, kernel_size: int,
                 rng: np.random.Generator, padding: int = 0, mode: str = "auto"):
        if kernel_size % 2 == 0:
            raise ValueError(f"equivariant kernels need odd size, got {kernel_size}")
        if in_kind not in ("trivial", "regular"):
            raise ValueError(f"in_kind must be 'trivial' or 'regular', got {in_kind!r}")
        self.group = group
        self.in_kind = in_kind
        self.c_in = c_in
        self.c_out = c_out
        self.k = kernel_size
        self.padding = padding
        self.mode = resolve_mode(group, mode)
        order = group.order
        in_slots = order if in_kind == "regular" else 1
        self.taps = np.arange(kernel_size ** 2) if self.mode == "exact" else disc_taps(kernel_size)
        n_taps = len(self.taps)
        shape = (c_out, c_in, in_slots, kernel_size, kernel_size) if self.mode == "exact" \
            else (c_out, c_in, in_slots, n_taps)
        fan_in = c_in * in_slots * n_taps
        self.weight = ad.parameter(_he_uniform(rng, shape, fan_in), "weight")
        self.bias = ad.parameter(np.zeros(c_out), "bias")
        self._build_maps()

    def _build_maps(self):
        group, k = self.group, self.k
        order = group.order
        in_slots = order if self.in_kind == "regular" else 1
        # slot[g, h]: canonical group slot feeding bank entry (g, h) = g^-1 h
        if self.in_kind == "regular":
            slot = np.stack([regular_permutation(group, g) for g in group])
        else:
            slot = np.zeros((order, 1), dtype=np.int64)
        ids = np.arange(self.weight.size).reshape(self.c_out, self.c_in, in_slots, len(self.taps))
        # gathered[o, g, i, h, q] = weight[o, i, slot[g, h], q]
        gathered = ids[:, :, slot, :].transpose(0, 2, 1, 3, 4)  # (o, g, i, h, q)
        if self.mode == "exact":
            spatial = np.stack([_exact_index(g, k, k) for g in group])  # (g, p)
            o, gg, i, h, p = np.ix_(np.arange(self.c_out), np.arange(order), np.arange(self.c_in),
                                    np.arange(in_slots), np.arange(k * k))
            self._index = gathered[o, gg, i, h, spatial[gg, p]]
            self._spatial = None
        else:
            self._index = gathered
            self._spatial = np.stack([splat_matrix(g, k)[:, self.taps] for g in group])
        self._bias_index = np.repeat(np.arange(self.c_out), order)

    @property
    def in_channels(self) -> int:
        return self.c_in * (self.group.order if self.in_kind == "regular" else 1)

    @property
    def out_channels(self) -> int:
        return self.c_out * self.group.order

    def expand_kernel(self) -> Tensor:
        """Kernel bank of shape (c_out*|G|, in_channels, k, k)."""
        bank = gather_flat(self.weight, self._index)
        if self._spatial is not None:
            bank = ad.einsum_const("ogihq,gpq->ogihp", bank, self._spatial)
        return ad.reshape(bank, (self.out_channels, self.in_channels, self.k, self.k))

    def forward(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"{type(self).__name__}: expected {self.in_channels} channels, got {x.shape[1]}")
        bias = gather_flat(self.bias, self._bias_index)
        return ad.conv2d(x, self.expand_kernel(), bias, padding=self.padding)

    def metadata(self) -> dict:
        return {
            "type": "EquivConv",
            "group": self.group.to_dict(),
            "in_rep": self.in_kind,
            "out_rep": "regular",
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel_size": self.k,
            "padding": self.padding,
            "mode": self.mode,
            "taps": len(self.taps),
        }


def expand_kernel(layer: EquivConv) -> np.ndarray:
    return layer.expand_kernel().data


def kernel_constraint_residual(layer: EquivConv, g: GroupElement, mode: str | None = None) -> float:
    """max |K(gy) - rho_out(g) K(y) rho_in(g)^-1| evaluated directly from the bank.

    Both sides are built from representation matrices and an image action on
    the kernel, independent of the index maps used in :meth:`EquivConv.expand_kernel`.
    """
    group = layer.group
    bank = expand_kernel(layer)
    mode = mode or ("exact" if g.is_grid_exact else "bilinear")
    lhs = act_on_image(group.inv(g), bank, mode=mode)  # lhs[..., y] = K(g y)
    reg = Representation(group, "regular")
    rho_out = np.kron(np.eye(layer.c_out), rep_matrix(reg, g))
    if layer.in_kind == "regular":
        rho_in_inv = np.kron(np.eye(layer.c_in), rep_matrix(reg, group.inv(g)))
    else:
        rho_in_inv = np.eye(layer.c_in)
    rhs = np.einsum("ab,bcyx,cd->adyx", rho_out, bank, rho_in_inv)
    return float(np.max(np.abs(lhs - rhs)))


def group_pool(x: Tensor, order: int) -> Tensor:
    """Max over the group axis of a regular-layout map [N, c*|G|, ...] -> [N, c, ...]."""
    n, channels = x.shape[:2]
    if channels % order:
        raise ValueError(f"{channels} channels is not divisible by |G| = {order}")
    rest = x.shape[2:]
    return ad.max_over_axis(ad.reshape(x, (n, channels // order, order) + rest), axis=2)


def lift_conv(layer: EquivConv, image: Tensor) -> Tensor:
    if layer.in_kind != "trivial":
        raise ValueError("lift_conv needs a layer with trivial input representation")
    return layer(image)


def group_conv(layer: EquivConv, features: Tensor) -> Tensor:
    if layer.in_kind != "regular":
        raise ValueError("group_conv needs a layer with regular input representation")
    return layer(features)


def transform_features(group: Group, g: GroupElement, x: np.ndarray, kind: str,
                       mode: str = "exact") -> np.ndarray:
    """Group action on a [N, C, H, W] map of the given representation kind."""
    if kind == "trivial":
        return act_on_image(g, x, mode=mode)
    if kind == "regular":
        return act_on_regular_features(group, g, x, mode=mode, channel_axis=1)
    raise ValueError(f"unsupported feature kind {kind!r}")


def default_group(spec: str) -> Group:
    """Parse 'C8' / 'D4' style names."""
    kind = {"C": "cyclic", "D": "dihedral"}[spec[0].upper()]
    return make_group(kind, int(spec[1:]))
