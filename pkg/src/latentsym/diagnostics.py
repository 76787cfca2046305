"""Correct / incorrect / extrinsic classification of a model symmetry, and exact
accuracy upper bounds for group-invariant classifiers.

Bounds are computed in exact rational arithmetic (``fractions.Fraction``); float
weights are converted exactly, so ``tight_bound`` can be compared to a brute
force optimum with zero tolerance.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Hashable, Sequence

import numpy as np

from .groups import FiniteAction, orbits


class DensityWarning(UserWarning):
    """The group action does not keep the sample weights constant on orbits."""


@dataclass(frozen=True, eq=False)
class SymmetryInstance:
    action: FiniteAction
    labels: tuple[int, ...]
    weights: tuple[Fraction, ...] | None = None
    n_classes: int | None = None

    def __post_init__(self):
        size = self.action.carrier_size
        labels = tuple(int(y) for y in self.labels)
        if len(labels) != size:
            raise ValueError(f"{len(labels)} labels for a carrier of size {size}")
        if size == 0:
            raise ValueError("empty carrier")
        object.__setattr__(self, "labels", labels)
        m = self.n_classes if self.n_classes is not None else max(labels) + 1
        if min(labels) < 0 or max(labels) >= m:
            raise ValueError(f"labels must lie in [0, {m})")
        object.__setattr__(self, "n_classes", int(m))
        if self.weights is None:
            weights = (Fraction(1, size),) * size
        else:
            weights = tuple(Fraction(w) for w in self.weights)
            if len(weights) != size or any(w < 0 for w in weights):
                raise ValueError("weights must be nonnegative, one per carrier element")
            total = sum(weights)
            if total == 0:
                raise ValueError("weights sum to zero")
            weights = tuple(w / total for w in weights)
        object.__setattr__(self, "weights", weights)

    @property
    def carrier_size(self) -> int:
        return self.action.carrier_size

    @property
    def group_order(self) -> int:
        return self.action.group.order

    def density_preserving(self, tol: float = 1e-9) -> bool:
        """Weight constant along every orbit."""
        for orbit in orbits(self.action):
            w = [self.weights[x] for x in orbit]
            if float(max(w) - min(w)) > tol:
                return False
        return True

    def to_dict(self) -> dict:
        doc = {
            "action": self.action.to_dict(),
            "labels": list(self.labels),
            "n_classes": self.n_classes,
        }
        if any(w != self.weights[0] for w in self.weights):
            doc["weights"] = [float(w) for w in self.weights]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SymmetryInstance":
        return cls(
            FiniteAction.from_dict(doc["action"]),
            tuple(doc["labels"]),
            tuple(doc["weights"]) if doc.get("weights") is not None else None,
            doc.get("n_classes"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SymmetryInstance":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class OrbitReport:
    members: tuple[int, ...]
    weight: Fraction
    n_labels: int  # k(x)
    consensus: Fraction  # p(x)
    majority_label: int


@dataclass
class ConsensusReport:
    orbits: list[OrbitReport]
    c_p: dict[Fraction, Fraction]
    c_k: dict[int, Fraction]
    density_preserving: bool
    unweighted: "ConsensusReport | None" = None


def _orbit_report(instance: SymmetryInstance, members: tuple[int, ...], weights) -> OrbitReport:
    per_label: dict[int, Fraction] = {}
    for x in members:
        y = instance.labels[x]
        per_label[y] = per_label.get(y, Fraction(0)) + weights[x]
    total = sum(weights[x] for x in members)
    # ties resolved toward the smallest label for a deterministic labeling
    majority = min(per_label, key=lambda y: (-per_label[y], y))
    if total == 0:
        consensus = Fraction(max(Counter(instance.labels[x] for x in members).values()), len(members))
    else:
        consensus = per_label[majority] / total
    return OrbitReport(members, total, len(per_label), consensus, majority)


def _consensus(instance: SymmetryInstance, weights) -> ConsensusReport:
    reports = [_orbit_report(instance, members, weights) for members in orbits(instance.action)]
    c_p: dict[Fraction, Fraction] = {}
    c_k: dict[int, Fraction] = {}
    for r in reports:
        c_p[r.consensus] = c_p.get(r.consensus, Fraction(0)) + r.weight
        c_k[r.n_labels] = c_k.get(r.n_labels, Fraction(0)) + r.weight
    return ConsensusReport(
        reports,
        dict(sorted(c_p.items())),
        dict(sorted(c_k.items())),
        instance.density_preserving(),
    )


def consensus_analysis(instance: SymmetryInstance) -> ConsensusReport:
    """Orbit table plus the weight fractions c_p (by consensus proportion) and
    c_k (by number of distinct labels in the orbit).

    A non density-preserving instance raises :class:`DensityWarning` and carries
    the uniform-weight analysis alongside the weighted one.
    """
    report = _consensus(instance, instance.weights)
    if not report.density_preserving:
        warnings.warn("group action is not density preserving on this instance; "
                      "bounds assume p_X(gx) = p_X(x)", DensityWarning, stacklevel=2)
        size = instance.carrier_size
        report.unweighted = _consensus(instance, (Fraction(1, size),) * size)
    return report


@dataclass(frozen=True)
class BoundResult:
    exact: Fraction
    labeling: tuple[int, ...] | None = None

    @property
    def value(self) -> float:
        return float(self.exact)

    def __float__(self) -> float:
        return self.value


def tight_bound(instance: SymmetryInstance, report: ConsensusReport | None = None) -> BoundResult:
    """sum_p c_p * p, with the invariant labeling that attains it (orbit majority)."""
    report = report or consensus_analysis(instance)
    value = sum((c * p for p, c in report.c_p.items()), Fraction(0))
    labeling = [0] * instance.carrier_size
    for r in report.orbits:
        for x in r.members:
            labeling[x] = r.majority_label
    return BoundResult(value, tuple(labeling))


def loose_bound(instance: SymmetryInstance, report: ConsensusReport | None = None) -> BoundResult:
    """1 - sum_k c_k (k - 1) / |G|."""
    report = report or consensus_analysis(instance)
    order = instance.group_order
    value = 1 - sum((c * Fraction(k - 1, order) for k, c in report.c_k.items()), Fraction(0))
    return BoundResult(value)


def invariant_labeling_accuracy(instance: SymmetryInstance, labeling: Sequence[int]) -> Fraction:
    return sum((w for w, y, f in zip(instance.weights, instance.labels, labeling) if y == f), Fraction(0))


def brute_force_bound(instance: SymmetryInstance, joint_limit: int = 4096) -> Fraction:
    """Best accuracy over all G-invariant labelings, by enumeration.

    Orbits are rebuilt with a union-find over the permutation table (not via
    :func:`orbits`).  When ``|Y|^#orbits`` is at most ``joint_limit`` every
    invariant labeling is evaluated directly; otherwise the additive objective
    is enumerated orbit by orbit.
    """
    size = instance.carrier_size
    parent = list(range(size))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for row in instance.action.table:
        for x, gx in enumerate(row):
            ra, rb = find(x), find(int(gx))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(x) for x in range(size)})
    root_pos = {r: i for i, r in enumerate(roots)}
    orbit_of = [root_pos[find(x)] for x in range(size)]
    # integer weights over a common denominator keep the enumeration exact
    denom = int(np.lcm.reduce([w.denominator for w in instance.weights]))
    int_w = np.array([int(w * denom) for w in instance.weights], dtype=object)
    labels = np.array(instance.labels)
    m = instance.n_classes
    n_orbits = len(roots)
    if m ** n_orbits <= joint_limit:
        choices = np.array(list(np.ndindex(*([m] * n_orbits))), dtype=np.int64).reshape(-1, n_orbits)
        predicted = choices[:, orbit_of]  # every invariant labeling, one row each
        hits = predicted == labels[None, :]
        scores = [sum(int_w[hits[r]]) for r in range(len(choices))]
        return Fraction(int(max(scores)), denom)
    total = 0
    orbit_of = np.array(orbit_of)
    for o in range(n_orbits):
        inside = orbit_of == o
        total += max(sum(int_w[inside & (labels == y)]) for y in range(m))
    return Fraction(int(total), denom)


def random_instance(rng: np.random.Generator, max_carrier: int = 24, orders=(2, 4, 8),
                    max_classes: int = 4) -> SymmetryInstance:
    """Random permutation action built as a disjoint union of coset spaces.

    Each orbit is G acting on G/H for a random subgroup H of a random
    cyclic or dihedral group of the requested order, so stabilizers are
    nontrivial in general.
    """
    from .groups import make_group

    order = int(rng.choice(orders))
    kind = "cyclic" if order % 2 or rng.random() < 0.5 else "dihedral"
    group = make_group(kind, order if kind == "cyclic" else order // 2)
    subgroups = _subgroups(group)
    columns = []
    offset = 0
    target = int(rng.integers(1, max_carrier + 1))
    while True:
        candidates = [h for h in subgroups if offset + order // len(h) <= target]
        if not candidates:
            break
        h = candidates[int(rng.integers(len(candidates)))]
        cosets = _left_cosets(group, h)
        table = np.empty((order, len(cosets)), dtype=np.int64)
        lookup = {c: i for i, c in enumerate(cosets)}
        for g in group:
            for i, c in enumerate(cosets):
                moved = frozenset(int(group.cayley[g.index, e]) for e in c)
                table[g.index, i] = lookup[moved]
        columns.append(table + offset)
        offset += len(cosets)
        if rng.random() < 0.25:
            break
    table = np.concatenate(columns, axis=1)
    perm = rng.permutation(offset)  # relabel carrier ids
    relabeled = np.empty_like(table)
    relabeled[:, perm] = perm[table]
    m = int(rng.integers(1, max_classes + 1))
    labels = tuple(int(y) for y in rng.integers(0, m, size=offset))
    return SymmetryInstance(FiniteAction(group, relabeled), labels, None, m)


def _subgroups(group) -> list[frozenset[int]]:
    found = set()
    for a in range(group.order):
        for b in range(group.order):
            closure = {0, a, b}
            frontier = list(closure)
            while frontier:
                new = []
                for x in frontier:
                    for y in list(closure):
                        for z in (int(group.cayley[x, y]), int(group.cayley[y, x])):
                            if z not in closure:
                                closure.add(z)
                                new.append(z)
                frontier = new
            found.add(frozenset(closure))
    return sorted(found, key=lambda s: (len(s), sorted(s)))


def _left_cosets(group, subgroup: frozenset[int]) -> list[frozenset[int]]:
    cosets = []
    seen = set()
    for g in range(group.order):
        coset = frozenset(int(group.cayley[g, h]) for h in subgroup)
        if coset not in seen:
            seen.add(coset)
            cosets.append(coset)
    return cosets


# ---------------------------------------------------------------------------
# correct / incorrect / extrinsic

CORRECT = "Correct"
INCORRECT = "Incorrect"
EXTRINSIC = "Extrinsic"
MIXED = "Mixed"


@dataclass
class EquivarianceVerdict:
    overall: str
    n_correct: int
    n_incorrect: int
    n_extrinsic: int
    witnesses: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.n_correct + self.n_incorrect + self.n_extrinsic

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "tallies": {
                "correct": self.n_correct,
                "incorrect": self.n_incorrect,
                "extrinsic": self.n_extrinsic,
            },
            "witnesses": self.witnesses,
        }


class NearestNeighbor:
    """Membership by nearest dataset sample within ``tol`` (Euclidean, flattened)."""

    def __init__(self, samples: np.ndarray, labels: Sequence[int], tol: float):
        if tol is None:
            raise ValueError("nearest-neighbour membership needs an explicit tolerance")
        self.samples = np.asarray(samples, dtype=float).reshape(len(samples), -1)
        self.labels = list(labels)
        self.tol = float(tol)

    def __call__(self, point) -> tuple[bool, Any]:
        d = np.linalg.norm(self.samples - np.asarray(point, dtype=float).reshape(1, -1), axis=1)
        i = int(d.argmin())
        return bool(d[i] <= self.tol), self.labels[i]


Membership = Callable[[Any], tuple[bool, Any]]


def classify_action(
    samples: Sequence[Any],
    labels: Sequence[Any],
    transforms: Sequence[tuple[Hashable, Callable[[Any], Any]]],
    membership: Membership | float,
    label_action: Callable[[Hashable, Any], Any] | None = None,
    max_witnesses: int = 5,
    describe: Callable[[Any], Any] | None = None,
) -> EquivarianceVerdict:
    """Tally each (sample, non-identity transform) pair as correct, incorrect or extrinsic.

    ``transforms`` lists ``(name, T_g)`` for the non-identity group elements.
    ``membership(point)`` returns ``(in_distribution, label)``; passing a float
    instead builds a :class:`NearestNeighbor` oracle over ``samples`` with that
    tolerance.  ``label_action(g, y)`` is the output action (identity by default).

    Overall verdict: Incorrect if any incorrect pair exists, Correct if nothing
    leaves the distribution, Extrinsic if everything does, Mixed otherwise.
    """
    if len(samples) == 0:
        raise ValueError("cannot classify an action on an empty dataset")
    if len(samples) != len(labels):
        raise ValueError("one label per sample expected")
    if not callable(membership):
        membership = NearestNeighbor(np.asarray(samples), labels, membership)
    label_action = label_action or (lambda g, y: y)
    describe = describe or (lambda x: np.asarray(x).tolist())
    counts = {CORRECT: 0, INCORRECT: 0, EXTRINSIC: 0}
    witnesses: dict[str, list[dict]] = {CORRECT: [], INCORRECT: [], EXTRINSIC: []}
    for x, y in zip(samples, labels):
        for name, transform in transforms:
            moved = transform(x)
            inside, moved_label = membership(moved)
            if not inside:
                kind = EXTRINSIC
            elif moved_label != label_action(name, y):
                kind = INCORRECT
            else:
                kind = CORRECT
            counts[kind] += 1
            if len(witnesses[kind]) < max_witnesses:
                entry = {"x": describe(x), "g": str(name), "gx": describe(moved), "label": _plain(y)}
                if inside:
                    entry["label_gx"] = _plain(moved_label)
                witnesses[kind].append(entry)
    if counts[INCORRECT]:
        overall = INCORRECT
    elif counts[EXTRINSIC] == 0:
        overall = CORRECT
    elif counts[CORRECT] == 0:
        overall = EXTRINSIC
    else:
        overall = MIXED
    return EquivarianceVerdict(overall, counts[CORRECT], counts[INCORRECT], counts[EXTRINSIC],
                               {k: v for k, v in witnesses.items() if v})


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


def bound_report(instance: SymmetryInstance) -> dict:
    """JSON-ready summary: c_p, c_k, both bounds and the per-orbit table."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DensityWarning)
        report = consensus_analysis(instance)
    tight = tight_bound(instance, report)
    loose = loose_bound(instance, report)
    doc = {
        "group": instance.action.group.to_dict(),
        "carrier_size": instance.carrier_size,
        "n_classes": instance.n_classes,
        "density_preserving": report.density_preserving,
        "c_p": {_fraction_key(p): float(c) for p, c in report.c_p.items()},
        "c_k": {str(k): float(c) for k, c in report.c_k.items()},
        "tight_bound": tight.value,
        "loose_bound": loose.value,
        "tight_bound_fraction": f"{tight.exact.numerator}/{tight.exact.denominator}",
        "orbits": [
            {
                "members": list(r.members),
                "weight": float(r.weight),
                "k": r.n_labels,
                "p": float(r.consensus),
                "majority_label": r.majority_label,
            }
            for r in report.orbits
        ],
    }
    if report.unweighted is not None:
        doc["unweighted_tight_bound"] = float(tight_bound(instance, report.unweighted).exact)
    return doc


def _fraction_key(p: Fraction) -> str:
    return repr(float(p))
