"""Finite rotation and reflection groups acting on vectors, pixel grids and finite sets.

Dihedral elements are stored in the normal form ``rot^r . ref^s`` (reflect across
the x-axis first, then rotate by ``2*pi*r/n``).  Cyclic groups are the ``s = 0``
half of the same encoding, so both kinds share one multiplication rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

CYCLIC = "cyclic"
DIHEDRAL = "dihedral"
REP_KINDS = ("trivial", "regular", "standard2d", "signed")

_QUARTER_COS_SIN = ((1, 0), (0, 1), (-1, 0), (0, -1))


def _cos_sin(steps: int, n: int) -> tuple[float, float]:
    """cos/sin of 2*pi*steps/n, exact whenever the angle is a multiple of 90 degrees."""
    if (4 * steps) % n == 0:
        c, s = _QUARTER_COS_SIN[(4 * steps // n) % 4]
        return float(c), float(s)
    theta = 2.0 * np.pi * steps / n
    return float(np.cos(theta)), float(np.sin(theta))


@dataclass(frozen=True)
class GroupElement:
    index: int
    rotation: int
    reflected: bool
    n: int
    kind: str

    @property
    def angle(self) -> float:
        return 2.0 * np.pi * self.rotation / self.n

    @property
    def is_grid_exact(self) -> bool:
        """True when the element maps the square pixel lattice onto itself."""
        return (4 * self.rotation) % self.n == 0

    def matrix(self) -> np.ndarray:
        c, s = _cos_sin(self.rotation, self.n)
        m = np.array([[c, -s], [s, c]])
        if self.reflected:
            m = m * np.array([1.0, -1.0])  # right-multiply by diag(1, -1)
        return m

    @property
    def name(self) -> str:
        return f"rot{self.rotation}*ref" if self.reflected else f"rot{self.rotation}"

    def __repr__(self) -> str:
        return f"<{self.name} in {self.kind[0].upper()}{self.n}>"


class Group:
    """A cyclic group C_n or dihedral group D_n with an explicit Cayley table."""

    def __init__(self, kind: str, n: int):
        if kind not in (CYCLIC, DIHEDRAL):
            raise ValueError(f"unknown group kind {kind!r}")
        if int(n) != n or n < 1:
            raise ValueError(f"group parameter n must be a positive integer, got {n!r}")
        self.kind = kind
        self.n = int(n)
        flips = (False, True) if kind == DIHEDRAL else (False,)
        self.elements: tuple[GroupElement, ...] = tuple(
            GroupElement(s * self.n + r, r, s, self.n, kind)
            for s in flips
            for r in range(self.n)
        )
        order = len(self.elements)
        cayley = np.empty((order, order), dtype=np.int64)
        for a in self.elements:
            for b in self.elements:
                cayley[a.index, b.index] = self._compose(a, b)
        cayley.setflags(write=False)
        self.cayley = cayley
        inverse = np.argmax(cayley == 0, axis=1)
        inverse.setflags(write=False)
        self.inverse = inverse
        self._validate()

    def _compose(self, a: GroupElement, b: GroupElement) -> int:
        # ref . rot^r = rot^-r . ref
        sign = -1 if a.reflected else 1
        r = (a.rotation + sign * b.rotation) % self.n
        s = a.reflected != b.reflected
        return int(s) * self.n + r

    def _validate(self) -> None:
        order = self.order
        expected = np.arange(order)
        for row in self.cayley:
            if not np.array_equal(np.sort(row), expected):
                raise AssertionError("Cayley table is not a Latin square")
        for col in self.cayley.T:
            if not np.array_equal(np.sort(col), expected):
                raise AssertionError("Cayley table is not a Latin square")
        if not np.array_equal(self.cayley[0], expected):
            raise AssertionError("element 0 is not the identity")

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def identity(self) -> GroupElement:
        return self.elements[0]

    @property
    def name(self) -> str:
        return f"{'C' if self.kind == CYCLIC else 'D'}{self.n}"

    def __len__(self) -> int:
        return self.order

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, index: int) -> GroupElement:
        return self.elements[index]

    def __eq__(self, other) -> bool:
        return isinstance(other, Group) and (self.kind, self.n) == (other.kind, other.n)

    def __hash__(self) -> int:
        return hash((self.kind, self.n))

    def __repr__(self) -> str:
        return f"Group({self.kind!r}, {self.n})"

    def element(self, rotation: int, reflected: bool = False) -> GroupElement:
        if reflected and self.kind == CYCLIC:
            raise ValueError("cyclic groups contain no reflections")
        return self.elements[int(reflected) * self.n + rotation % self.n]

    def mul(self, a: GroupElement, b: GroupElement) -> GroupElement:
        return self.elements[self.cayley[a.index, b.index]]

    def inv(self, a: GroupElement) -> GroupElement:
        return self.elements[self.inverse[a.index]]

    def contains(self, g: GroupElement) -> bool:
        return g.kind == self.kind and g.n == self.n

    @property
    def is_abelian(self) -> bool:
        return bool(np.array_equal(self.cayley, self.cayley.T))

    @property
    def is_grid_exact(self) -> bool:
        return all(g.is_grid_exact for g in self.elements)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n}

    @classmethod
    def from_dict(cls, doc: dict) -> "Group":
        return make_group(doc["kind"], doc["n"])


@lru_cache(maxsize=None)
def make_group(kind: str, n: int) -> Group:
    """Build C_n (``kind='cyclic'``) or D_n (``kind='dihedral'``, order 2n)."""
    return Group(kind, n)


@dataclass(frozen=True)
class Representation:
    group: Group
    kind: str

    def __post_init__(self):
        if self.kind not in REP_KINDS:
            raise ValueError(f"unknown representation kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return {"trivial": 1, "signed": 1, "standard2d": 2}.get(self.kind, self.group.order)

    def matrix(self, g: GroupElement) -> np.ndarray:
        return rep_matrix(self, g)

    def to_dict(self) -> dict:
        return {"group": self.group.to_dict(), "kind": self.kind}


def rep_matrix(rep: Representation, g: GroupElement) -> np.ndarray:
    """Matrix of ``g`` in the given representation.

    The regular representation is the left-regular one: ``rho(g) e_h = e_{gh}``.
    """
    if not rep.group.contains(g):
        raise ValueError(f"{g!r} is not an element of {rep.group!r}")
    if rep.kind == "trivial":
        return np.ones((1, 1))
    if rep.kind == "signed":
        return np.array([[-1.0 if g.reflected else 1.0]])
    if rep.kind == "standard2d":
        return g.matrix()
    order = rep.group.order
    m = np.zeros((order, order))
    m[rep.group.cayley[g.index], np.arange(order)] = 1.0
    return m


@dataclass(frozen=True, eq=False)
class FiniteAction:
    """A permutation action of a group on ``{0, ..., carrier_size - 1}``.

    ``table[g, x]`` is the index of ``g . x``.
    """

    group: Group
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.int64)
        if table.ndim != 2 or table.shape[0] != self.group.order:
            raise ValueError(f"action table must have shape ({self.group.order}, |X|), got {table.shape}")
        size = table.shape[1]
        expected = np.arange(size)
        for row in table:
            if not np.array_equal(np.sort(row), expected):
                raise ValueError("every row of an action table must be a permutation of the carrier")
        if not np.array_equal(table[0], expected):
            raise ValueError("the identity must act trivially")
        # g.(h.x) == (gh).x
        composed = table[:, table]  # composed[g, h, x] = g.(h.x)
        if not np.array_equal(composed, table[self.group.cayley]):
            raise ValueError("table does not respect the group multiplication")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def carrier_size(self) -> int:
        return self.table.shape[1]

    def act(self, g: GroupElement, x: int) -> int:
        return int(self.table[g.index, x])

    def to_dict(self) -> dict:
        return {
            "group": self.group.to_dict(),
            "carrier_size": self.carrier_size,
            "table": self.table.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteAction":
        group = Group.from_dict(doc["group"])
        table = np.asarray(doc["table"], dtype=np.int64)
        if "carrier_size" in doc and table.shape[1] != doc["carrier_size"]:
            raise ValueError("carrier_size does not match the permutation table")
        return cls(group, table)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FiniteAction":
        return cls.from_dict(json.loads(text))

    @classmethod
    def trivial(cls, group: Group, carrier_size: int) -> "FiniteAction":
        return cls(group, np.tile(np.arange(carrier_size), (group.order, 1)))

    @classmethod
    def from_points(
        cls,
        group: Group,
        points: np.ndarray,
        rep: Representation | None = None,
        tol: float = 1e-9,
    ) -> "FiniteAction":
        """Action induced on a finite point set closed under ``rep`` (default standard2d)."""
        rep = rep or Representation(group, "standard2d")
        points = np.asarray(points, dtype=float)
        table = np.empty((group.order, len(points)), dtype=np.int64)
        for g in group:
            moved = points @ rep_matrix(rep, g).T
            dist = np.linalg.norm(moved[:, None, :] - points[None, :, :], axis=-1)
            nearest = dist.argmin(axis=1)
            if np.any(dist[np.arange(len(points)), nearest] > tol):
                raise ValueError(f"point set is not closed under {g!r}")
            table[g.index] = nearest
        return cls(group, table)


def orbit_stabilizer(action: FiniteAction, x: int) -> tuple[frozenset[int], tuple[GroupElement, ...]]:
    if not 0 <= x < action.carrier_size:
        raise IndexError(f"carrier element {x} out of range")
    column = action.table[:, x]
    orbit = frozenset(int(y) for y in column)
    stabilizer = tuple(g for g in action.group if column[g.index] == x)
    return orbit, stabilizer


def orbits(action: FiniteAction) -> list[tuple[int, ...]]:
    """Orbits as sorted tuples, ordered by their smallest member."""
    seen = np.zeros(action.carrier_size, dtype=bool)
    result = []
    for x in range(action.carrier_size):
        if seen[x]:
            continue
        orbit, _ = orbit_stabilizer(action, x)
        members = tuple(sorted(orbit))
        seen[list(members)] = True
        result.append(members)
    return result


# ---------------------------------------------------------------------------
# pixel grids

def _pixel_coords(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered (x right, y up) coordinates of every pixel, row-major."""
    i, j = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = j - (w - 1) // 2
    y = (h - 1) // 2 - i
    return x.ravel().astype(float), y.ravel().astype(float)


def _check_odd(h: int, w: int) -> None:
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError(f"image actions need odd spatial sizes, got {h}x{w}")


@lru_cache(maxsize=512)
def _exact_index(g: GroupElement, h: int, w: int) -> np.ndarray:
    _check_odd(h, w)
    if not g.is_grid_exact:
        raise ValueError(f"{g!r} does not map the pixel grid onto itself; use mode='bilinear'")
    x, y = _pixel_coords(h, w)
    inv = g.matrix().T  # orthogonal
    sx = inv[0, 0] * x + inv[0, 1] * y
    sy = inv[1, 0] * x + inv[1, 1] * y
    j = sx + (w - 1) // 2
    i = (h - 1) // 2 - sy
    if np.any((i < 0) | (i >= h) | (j < 0) | (j >= w)):
        raise ValueError(f"{g!r} does not map a {h}x{w} grid onto itself")
    index = (i * w + j).astype(np.int64)
    index.setflags(write=False)
    return index


@lru_cache(maxsize=512)
def _bilinear_taps(g: GroupElement, h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source pixel indices, weights and validity for bilinear sampling at g^-1 p."""
    _check_odd(h, w)
    x, y = _pixel_coords(h, w)
    inv = g.matrix().T
    sx = inv[0, 0] * x + inv[0, 1] * y
    sy = inv[1, 0] * x + inv[1, 1] * y
    fj = sx + (w - 1) // 2
    fi = (h - 1) // 2 - sy
    i0 = np.floor(fi)
    j0 = np.floor(fj)
    di = fi - i0
    dj = fj - j0
    taps_i = np.stack([i0, i0, i0 + 1, i0 + 1], axis=1)
    taps_j = np.stack([j0, j0 + 1, j0, j0 + 1], axis=1)
    weights = np.stack([(1 - di) * (1 - dj), (1 - di) * dj, di * (1 - dj), di * dj], axis=1)
    valid = (taps_i >= 0) & (taps_i < h) & (taps_j >= 0) & (taps_j < w)
    index = np.where(valid, taps_i * w + taps_j, 0).astype(np.int64)
    for arr in (index, weights, valid):
        arr.setflags(write=False)
    return index, weights, valid


@lru_cache(maxsize=None)
def coset_split(g: GroupElement) -> tuple[GroupElement, GroupElement]:
    """Write ``g = q * b`` with ``q`` grid-exact and ``b`` a fixed representative of the
    right coset of the grid-exact subgroup containing ``g``.

    Bilinear transforms apply ``b`` by interpolation and ``q`` as an exact pixel
    permutation, so composing with any grid-exact element stays bit-exact.
    """
    group = make_group(g.kind, g.n)
    exact = [h for h in group if h.is_grid_exact]
    b = min((group.mul(h, g) for h in exact), key=lambda e: e.index)
    return group.mul(g, group.inv(b)), b


def _bilinear_direct(g: GroupElement, flat: np.ndarray, h: int, w: int, fill: float) -> np.ndarray:
    index, weights, valid = _bilinear_taps(g, h, w)
    samples = np.where(valid, flat[..., index], fill)
    return np.sum(samples * weights, axis=-1)


def act_on_image(
    g: GroupElement,
    image: np.ndarray,
    mode: str = "exact",
    fill: float = 0.0,
) -> np.ndarray:
    """Transform pixel locations: ``out[..., p] = image[..., g^-1 p]``.

    Works on any array whose last two axes are spatial.  ``exact`` is a pure
    pixel permutation; ``bilinear`` rotates about the image center and fills
    samples that fall outside the frame with ``fill``.
    """
    image = np.asarray(image)
    h, w = image.shape[-2:]
    lead = image.shape[:-2]
    flat = image.reshape(lead + (h * w,))
    if mode == "exact":
        out = flat[..., _exact_index(g, h, w)]
    elif mode == "bilinear":
        q, b = coset_split(g) if h == w else (g.__class__(0, 0, False, g.n, g.kind), g)
        out = flat if b.index == 0 else _bilinear_direct(b, flat, h, w, fill)
        if q.index != 0:
            out = out[..., _exact_index(q, h, w)]
    else:
        raise ValueError(f"unknown image action mode {mode!r}")
    return out.reshape(image.shape)


@lru_cache(maxsize=512)
def image_action_matrix(g: GroupElement, h: int, w: int, mode: str = "exact") -> np.ndarray:
    """Dense (h*w, h*w) matrix of ``act_on_image`` with zero fill."""
    size = h * w
    m = np.zeros((size, size))
    if mode == "exact":
        m[np.arange(size), _exact_index(g, h, w)] = 1.0
    elif mode == "bilinear":
        m = act_on_image(g, np.eye(size).reshape(size, h, w), mode="bilinear").reshape(size, size).T.copy()
    else:
        raise ValueError(f"unknown image action mode {mode!r}")
    m.setflags(write=False)
    return m


def resolve_mode(group_or_elements: Group | Iterable[GroupElement], mode: str = "auto") -> str:
    if mode != "auto":
        return mode
    return "exact" if all(g.is_grid_exact for g in group_or_elements) else "bilinear"


def regular_permutation(group: Group, g: GroupElement) -> np.ndarray:
    """Index array ``p`` with ``(rho_reg(g) f)[h] = f[p[h]]``, i.e. ``p[h] = g^-1 h``."""
    return group.cayley[group.inverse[g.index]]


def act_on_regular_features(
    group: Group,
    g: GroupElement,
    features: np.ndarray,
    mode: str = "exact",
    channel_axis: int = -3,
) -> np.ndarray:
    """Act on a regular-layout feature map ``[..., c*|G|, h, w]``.

    Channels are grouped field-major: channel ``field * |G| + h``.
    """
    features = np.asarray(features)
    axis = channel_axis % features.ndim
    channels = features.shape[axis]
    if channels % group.order:
        raise ValueError(f"{channels} channels is not a multiple of |G| = {group.order}")
    shape = features.shape
    split = shape[:axis] + (channels // group.order, group.order) + shape[axis + 1:]
    moved = np.take(features.reshape(split), regular_permutation(group, g), axis=axis + 1)
    moved = moved.reshape(shape)
    if features.ndim - axis > 1:
        moved = act_on_image(g, moved, mode=mode)
    return moved


def check_homomorphism(rep: Representation, tol: float = 0.0) -> float:
    """Largest deviation of rho(g)rho(h) from rho(gh) over all pairs."""
    worst = 0.0
    mats = [rep_matrix(rep, g) for g in rep.group]
    for a in rep.group:
        for b in rep.group:
            ab = rep.group.mul(a, b)
            worst = max(worst, float(np.max(np.abs(mats[a.index] @ mats[b.index] - mats[ab.index]))))
    if worst > tol:
        raise AssertionError(f"{rep.kind} representation of {rep.group.name} fails homomorphism: {worst}")
    return worst


def elements_from_names(group: Group, names: Sequence[str]) -> list[GroupElement]:
    """Parse names like ``rot2`` or ``rot1*ref``."""
    out = []
    for name in names:
        reflected = name.endswith("*ref")
        core = name[: -len("*ref")] if reflected else name
        if not core.startswith("rot"):
            raise ValueError(f"cannot parse group element name {name!r}")
        out.append(group.element(int(core[3:]), reflected))
    return out
