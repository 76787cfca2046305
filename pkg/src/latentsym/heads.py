"""Equivariant actor and invariant critic heads, plus the action-restriction flatten.

The actor maps regular-layout state features to a mixed action whose first two
coordinates carry the standard 2D representation and whose remaining entries
(invariant action components and standard deviations) are group-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .groups import DIHEDRAL, Group, GroupElement, resolve_mode
from .layers import EquivConv, Linear, Module, _he_uniform, group_pool, transform_features


@dataclass(frozen=True)
class MixedActionValue:
    a_equiv: np.ndarray  # [N, 2]
    a_inv: np.ndarray  # [N, n_inv]
    a_sigma: np.ndarray  # [N, n_sigma]

    def transformed(self, g: GroupElement) -> "MixedActionValue":
        """(rho_equiv(g) a_equiv, a_inv, a_sigma)."""
        return MixedActionValue(self.a_equiv @ g.matrix().T, self.a_inv, self.a_sigma)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.a_equiv, self.a_inv, self.a_sigma], axis=1)


def _regular_to_standard(group: Group, fields: int, rng) -> tuple[Tensor, np.ndarray]:
    """Canonical 2-vectors per field and the fixed basis that ties them.

    a_equiv = sum_{i,h} rho_std(h) w_i f_i(h), so the weight matrix entry for
    output row r and input (i, h) is sum_c rho_std(h)[r, c] w_i[c].
    """
    w = ad.parameter(_he_uniform(rng, (fields, 2), fields * group.order), "w_equiv")
    rho = np.stack([g.matrix() for g in group])  # (h, r, c)
    return w, rho


class ActorHead(Module):
    """pi: regular features [N, c*|G|, H, W] -> MixedActionValue.

    Spatial max pooling removes the spatial action, a 1x1 group convolution
    mixes fields, and the outputs are read off with representation-typed maps.
    """

    def __init__(self, group: Group, fields: int, rng: np.random.Generator, hidden: int = 8,
                 n_inv: int = 2, n_sigma: int = 3):
        self.group = group
        self.fields = fields
        self.n_inv = n_inv
        self.n_sigma = n_sigma
        self.mix = EquivConv(group, "regular", fields, hidden, 1, rng)
        self.w_equiv, self._rho = _regular_to_standard(group, hidden, rng)
        self.inv = Linear(hidden, n_inv + n_sigma, rng)

    def forward_tensors(self, x) -> tuple[Tensor, Tensor, Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = x.shape[0]
        order = self.group.order
        h = ad.global_max_pool(x)  # [N, c*|G|]
        h = ad.reshape(h, (n, h.shape[1], 1, 1))
        h = ad.relu(self.mix(h))
        h = ad.reshape(h, (n, -1, order))  # [N, hidden, |G|]
        basis = ad.einsum_const("ic,hrc->ihr", self.w_equiv, self._rho)  # [hidden, |G|, 2]
        a_equiv = ad.matmul(ad.reshape(h, (n, -1)), ad.reshape(basis, (-1, 2)))
        pooled = ad.tsum(h, axis=2)  # invariant: sum over the group axis
        inv = self.inv(pooled)
        a_inv = ad.take(inv, np.arange(self.n_inv), axis=1)
        a_sigma = ad.softplus(ad.take(inv, np.arange(self.n_inv, self.n_inv + self.n_sigma), axis=1))
        return a_equiv, a_inv, a_sigma

    def forward(self, x) -> MixedActionValue:
        a_equiv, a_inv, a_sigma = self.forward_tensors(x)
        return MixedActionValue(a_equiv.data, a_inv.data, a_sigma.data)


def actor_head(head: ActorHead, state_features) -> MixedActionValue:
    return head(state_features)


def check_actor_equivariance(head: ActorHead, group: Group, state: np.ndarray, tol: float,
                             mode: str = "auto") -> float:
    """max over g of ||pi(g s) - g pi(s)||_inf; raises if it exceeds ``tol``."""
    base = head(state)
    worst = 0.0
    for g in group:
        m = resolve_mode([g], mode)
        moved = head(transform_features(group, g, state, "regular", mode=m))
        expected = base.transformed(g)
        worst = max(worst, float(np.max(np.abs(moved.as_array() - expected.as_array()))))
    if worst > tol:
        raise AssertionError(f"actor equivariance residual {worst} exceeds {tol}")
    return worst


class InvariantCritic(Module):
    """q(s, a) with q(g s, g a) = q(s, a).

    The equivariant action part is lifted to a regular field through
    e(h) = v^T rho_std(h)^-1 a_equiv, the invariant part is broadcast over the
    group axis, both are concatenated with pooled state fields and mixed by a
    1x1 group convolution before group pooling.
    """

    def __init__(self, group: Group, fields: int, rng: np.random.Generator, n_inv: int = 2,
                 action_fields: int = 4, hidden: int = 8):
        self.group = group
        self.fields = fields
        self.n_inv = n_inv
        self.action_fields = action_fields
        self.v_equiv = ad.parameter(_he_uniform(rng, (action_fields, 2), 2), "v_equiv")
        self._rho_inv = np.stack([group.inv(h).matrix() for h in group])  # (h, r, c)
        self.inv_embed = Linear(n_inv, action_fields, rng) if n_inv else None
        in_fields = fields + action_fields * (2 if n_inv else 1)
        self.mix = EquivConv(group, "regular", in_fields, hidden, 1, rng)
        self.out = Linear(hidden, 1, rng)

    def forward(self, state, a_equiv, a_inv) -> Tensor:
        state = state if isinstance(state, Tensor) else Tensor(state)
        a_equiv = a_equiv if isinstance(a_equiv, Tensor) else Tensor(a_equiv)
        n = state.shape[0]
        order = self.group.order
        s = ad.global_max_pool(state)  # [N, c*|G|]
        # e[n, j, h] = sum_{r,c} v[j, r] rho(h^-1)[r, c] a[n, c]
        lift = ad.einsum_const("jr,hrc->jhc", self.v_equiv, self._rho_inv)  # [j, h, c]
        e = ad.matmul(a_equiv, ad.transpose(ad.reshape(lift, (-1, 2))))  # [N, j*|G|]
        parts = [s, e]
        if self.inv_embed is not None:
            a_inv = a_inv if isinstance(a_inv, Tensor) else Tensor(a_inv)
            u = self.inv_embed(a_inv)  # [N, j]
            broadcast = np.repeat(np.eye(self.action_fields), order, axis=1)  # [j, j*|G|]
            parts.append(ad.matmul(u, Tensor(broadcast)))
        h = ad.reshape(ad.concat(parts, axis=1), (n, -1, 1, 1))
        h = ad.relu(self.mix(h))
        h = group_pool(h, order)  # [N, hidden, 1, 1]
        return ad.reshape(self.out(ad.reshape(h, (n, -1))), (n,))


def invariant_critic(critic: InvariantCritic, state_features, action: MixedActionValue) -> np.ndarray:
    return critic(state_features, action.a_equiv, action.a_inv).data


def check_critic_invariance(critic: InvariantCritic, group: Group, state: np.ndarray,
                            action: MixedActionValue, mode: str = "auto") -> float:
    """max over g of |q(g s, g a) - q(s, a)|."""
    base = invariant_critic(critic, state, action)
    worst = 0.0
    for g in group:
        m = resolve_mode([g], mode)
        moved_state = transform_features(group, g, state, "regular", mode=m)
        value = invariant_critic(critic, moved_state, action.transformed(g))
        worst = max(worst, float(np.max(np.abs(value - base))))
    return worst


# ---------------------------------------------------------------------------
# action restriction

def action_restrict_flatten(image: np.ndarray, group: Group, mode: str = "auto") -> np.ndarray:
    """Fold a [h, w, c*|G|] map into a pure group axis: [1, 1, h*w*c, |G|].

    Slot ``g`` of the output holds ``g . I`` (spatial transform plus regular
    channel permutation), flattened.  Acting on the input by ``g'`` permutes
    the output slots by right multiplication: ``out(g' I)[g] = out(I)[g g']``.
    """
    if group.kind != DIHEDRAL:
        raise ValueError(f"action restriction is defined for dihedral groups, got {group.name}")
    image = np.asarray(image, dtype=float)
    h, w, channels = image.shape
    order = group.order
    if channels % order:
        raise ValueError(f"{channels} channels is not divisible by |G| = {order}")
    chw = np.moveaxis(image, -1, 0)
    slots = []
    for g in group:
        m = resolve_mode([g], mode)
        moved = transform_features(group, g, chw[None], "regular", mode=m)[0]
        slots.append(np.moveaxis(moved, 0, -1).reshape(-1))
    return np.stack(slots, axis=-1)[None, None]


def restricted_permutation(group: Group, g: GroupElement) -> np.ndarray:
    """Slot permutation ``p`` with ``out(g I)[..., k] = out(I)[..., p[k]]``, p[k] = k * g."""
    return group.cayley[:, g.index]


class RestrictedEquivariantLinear(Module):
    """1x1 map on the restricted output; equivariant for the right-regular slot action.

    For right-regular permutations the tied weights are W[(o, a), (i, b)] = w[o, i, a^-1 b]
    read with the right action, i.e. indexed by b a^-1.
    """

    def __init__(self, group: Group, c_in: int, c_out: int, rng: np.random.Generator):
        self.group = group
        self.c_in = c_in
        self.c_out = c_out
        self.weight = ad.parameter(_he_uniform(rng, (c_out, c_in, group.order), c_in * group.order), "weight")
        order = group.order
        # slot index s[a, b] = b * a^-1
        self._slot = np.array([[group.cayley[b, group.inverse[a]] for b in range(order)] for a in range(order)])

    def forward(self, x: Tensor) -> Tensor:
        """x: [N, c_in, |G|] -> [N, c_out, |G|]."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        w = ad.take(self.weight, self._slot.reshape(-1), axis=2)
        w = ad.reshape(w, (self.c_out, self.c_in, self.group.order, self.group.order))  # o, i, a, b
        w = ad.reshape(ad.transpose(w, (0, 2, 1, 3)), (self.c_out * self.group.order, -1))
        flat = ad.reshape(x, (x.shape[0], -1))
        out = ad.matmul(flat, ad.transpose(w))
        return ad.reshape(out, (x.shape[0], self.c_out, self.group.order))
