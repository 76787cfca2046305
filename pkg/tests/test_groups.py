import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentsym.groups import (
    FiniteAction,
    Representation,
    act_on_image,
    act_on_regular_features,
    check_homomorphism,
    coset_split,
    elements_from_names,
    image_action_matrix,
    make_group,
    orbit_stabilizer,
    orbits,
    rep_matrix,
)

GROUPS = [("cyclic", 1), ("cyclic", 2), ("cyclic", 4), ("cyclic", 8), ("dihedral", 1), ("dihedral", 4),
          ("dihedral", 8)]


@pytest.fixture(params=GROUPS, ids=lambda p: f"{p[0][0].upper()}{p[1]}")
def group(request):
    return make_group(*request.param)


def test_make_group_examples():
    c8 = make_group("cyclic", 8)
    assert c8.order == 8 and c8.is_abelian
    d4 = make_group("dihedral", 4)
    assert d4.order == 8
    assert sum(g.reflected for g in d4) == 4
    d1 = make_group("dihedral", 1)
    assert d1.order == 2 and d1[1].reflected


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_make_group_rejects_bad_n(n):
    with pytest.raises(ValueError):
        make_group("cyclic", n)


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_group("quaternion", 2)


def test_cayley_latin_square_identity_inverse(group):
    order = group.order
    for row in group.cayley:
        assert sorted(row) == list(range(order))
    for col in group.cayley.T:
        assert sorted(col) == list(range(order))
    assert list(group.cayley[0]) == list(range(order))
    for g in group:
        assert group.mul(g, group.inv(g)).index == 0
        assert sum(group.mul(g, h).index == 0 for h in group) == 1


def test_associativity_exhaustive(group):
    c = group.cayley
    for a, b, d in itertools.product(range(group.order), repeat=3):
        assert c[c[a, b], d] == c[a, c[b, d]]


def test_dihedral_index_bijection():
    d4 = make_group("dihedral", 4)
    pairs = {(g.rotation, g.reflected) for g in d4}
    assert len(pairs) == 8
    for g in d4:
        assert d4.element(g.rotation, g.reflected) is g


def test_reflect_first_then_rotate_convention():
    d4 = make_group("dihedral", 4)
    g = d4.element(1, True)
    # rot1*ref acting on (1, 0): reflect keeps it, rotate by 90 gives (0, 1)
    assert np.array_equal(g.matrix() @ np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert g is d4.mul(d4.element(1), d4.element(0, True))


@pytest.mark.parametrize("kind", ["trivial", "signed", "standard2d", "regular"])
def test_representations_are_homomorphisms(group, kind):
    rep = Representation(group, kind)
    assert check_homomorphism(rep, tol=1e-12) <= 1e-12
    assert np.array_equal(rep_matrix(rep, group.identity), np.eye(rep.dim))
    expected_dim = {"trivial": 1, "signed": 1, "standard2d": 2, "regular": group.order}[kind]
    assert rep.dim == expected_dim
    for g in group:
        prod = rep_matrix(rep, g) @ rep_matrix(rep, group.inv(g))
        if kind == "standard2d":
            assert np.max(np.abs(prod - np.eye(rep.dim))) < 1e-12
        else:
            assert np.array_equal(prod, np.eye(rep.dim))


def test_regular_is_permutation(group):
    rep = Representation(group, "regular")
    for g in group:
        m = rep_matrix(rep, g)
        assert set(np.unique(m)) <= {0.0, 1.0}
        assert np.array_equal(m.sum(axis=0), np.ones(group.order))
        assert np.array_equal(m.sum(axis=1), np.ones(group.order))


def test_signed_marks_reflections(group):
    rep = Representation(group, "signed")
    for g in group:
        assert rep_matrix(rep, g)[0, 0] == (-1.0 if g.reflected else 1.0)


def test_reference_matrices():
    c2 = make_group("cyclic", 2)
    assert np.array_equal(rep_matrix(Representation(c2, "standard2d"), c2[1]), [[-1, 0], [0, -1]])
    d1 = make_group("dihedral", 1)
    assert np.array_equal(rep_matrix(Representation(d1, "standard2d"), d1[1]), [[1, 0], [0, -1]])
    c8 = make_group("cyclic", 8)
    assert np.array_equal(rep_matrix(Representation(c8, "regular"), c8.identity), np.eye(8))


def test_rep_matrix_rejects_foreign_element():
    with pytest.raises(ValueError):
        rep_matrix(Representation(make_group("cyclic", 4), "regular"), make_group("cyclic", 8)[1])


def test_act_on_image_rot90_direction():
    c4 = make_group("cyclic", 4)
    img = np.arange(9.0).reshape(3, 3)
    out = act_on_image(c4[1], img)
    # counter-clockwise quarter turn with y pointing up
    assert np.array_equal(out, [[2, 5, 8], [1, 4, 7], [0, 3, 6]])


def test_act_on_image_examples():
    c4 = make_group("cyclic", 4)
    rng = np.random.default_rng(0)
    img = rng.normal(size=(2, 5, 5))
    assert np.array_equal(act_on_image(c4.identity, img), img)
    assert np.array_equal(act_on_image(c4[1], act_on_image(c4[1], img)), act_on_image(c4[2], img))


def test_exact_composition_law(group):
    if not group.is_grid_exact:
        pytest.skip("bilinear group")
    rng = np.random.default_rng(1)
    img = rng.normal(size=(3, 7, 7))
    for g in group:
        for h in group:
            assert np.array_equal(act_on_image(g, act_on_image(h, img)), act_on_image(group.mul(g, h), img))


def test_exact_is_lossless_permutation():
    d4 = make_group("dihedral", 4)
    img = np.arange(25.0).reshape(5, 5)
    for g in d4:
        out = act_on_image(g, img)
        assert sorted(out.ravel()) == sorted(img.ravel())
        assert np.array_equal(act_on_image(d4.inv(g), out), img)


def test_exact_rejects_45_degrees():
    c8 = make_group("cyclic", 8)
    with pytest.raises(ValueError):
        act_on_image(c8[1], np.zeros((5, 5)), mode="exact")


@pytest.mark.parametrize("shape", [(4, 5), (5, 4), (6, 6)])
def test_even_sizes_rejected(shape):
    c4 = make_group("cyclic", 4)
    with pytest.raises(ValueError):
        act_on_image(c4[1], np.zeros(shape))


def test_bilinear_radial_image_fixed_point():
    c8 = make_group("cyclic", 8)
    size = 31
    c = size // 2
    y, x = np.mgrid[:size, :size] - c
    r = np.hypot(x, y)
    img = np.exp(-(r / 6.0) ** 2)
    out = act_on_image(c8[1], img, mode="bilinear")
    interior = r <= c - 2
    # oracle: the radial function evaluated at rotated coordinates is itself
    assert np.max(np.abs(out - img)[interior]) < 2e-2


def test_bilinear_fill_constant():
    c8 = make_group("cyclic", 8)
    out = act_on_image(c8[1], np.ones((9, 9)), mode="bilinear", fill=-1.0)
    assert out[0, 0] < 0 and out[4, 4] == 1.0


def test_bilinear_agrees_with_exact_on_grid_elements():
    c8 = make_group("cyclic", 8)
    img = np.random.default_rng(2).normal(size=(7, 7))
    for k in (0, 2, 4, 6):
        assert np.array_equal(act_on_image(c8[k], img, mode="bilinear"), act_on_image(c8[k], img))


def test_coset_split_composes():
    for group in (make_group("cyclic", 8), make_group("dihedral", 8)):
        for g in group:
            q, b = coset_split(g)
            assert q.is_grid_exact
            assert group.mul(q, b) is g


def test_bilinear_commutes_with_quarter_turns_bit_exactly():
    c8 = make_group("cyclic", 8)
    img = np.random.default_rng(3).normal(size=(2, 9, 9))
    for g in c8:
        for k in (2, 4, 6):
            q = c8[k]
            lhs = act_on_image(q, act_on_image(g, img, mode="bilinear"))
            rhs = act_on_image(c8.mul(q, g), img, mode="bilinear")
            assert np.array_equal(lhs, rhs)


def test_image_action_matrix_matches_action():
    d8 = make_group("dihedral", 8)
    img = np.random.default_rng(4).normal(size=(5, 5))
    for g in d8:
        m = image_action_matrix(g, 5, 5, "bilinear")
        assert np.allclose(m @ img.ravel(), act_on_image(g, img, mode="bilinear").ravel(), atol=1e-14)


def test_regular_features_action_is_action():
    d4 = make_group("dihedral", 4)
    x = np.random.default_rng(5).normal(size=(2, 3 * 8, 5, 5))
    for g in d4:
        for h in d4:
            lhs = act_on_regular_features(d4, g, act_on_regular_features(d4, h, x, channel_axis=1), channel_axis=1)
            assert np.array_equal(lhs, act_on_regular_features(d4, d4.mul(g, h), x, channel_axis=1))


def test_orbit_stabilizer_examples():
    c2 = make_group("cyclic", 2)
    free = FiniteAction(c2, [[0, 1], [1, 0]])
    orbit, stab = orbit_stabilizer(free, 0)
    assert orbit == {0, 1} and [g.index for g in stab] == [0]
    a = np.sqrt(2) / 2
    pts = np.array([[a, a], [-a, -a]])
    action = FiniteAction.from_points(c2, pts)
    orbit, _ = orbit_stabilizer(action, 0)
    assert {tuple(np.round(pts[i], 12)) for i in orbit} == {(round(a, 12), round(a, 12)), (round(-a, 12), round(-a, 12))}
    d4 = make_group("dihedral", 4)
    trivial = FiniteAction.trivial(d4, 3)
    orbit, stab = orbit_stabilizer(trivial, 2)
    assert orbit == {2} and len(stab) == d4.order


def _coset_action(group, subgroup_rotations):
    # C_n acting on C_n / <step> for a divisor step
    step = subgroup_rotations
    size = step
    table = [[(g.rotation + x) % size for x in range(size)] for g in group]
    return FiniteAction(group, table)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 10))
def test_orbit_stabilizer_theorem(divisor, seed):
    c8 = make_group("cyclic", 8)
    action = _coset_action(c8, divisor)
    rng = np.random.default_rng(seed)
    x = int(rng.integers(action.carrier_size))
    orbit, stab = orbit_stabilizer(action, x)
    assert len(orbit) * len(stab) == c8.order


def test_orbits_partition():
    d4 = make_group("dihedral", 4)
    pts = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])
    action = FiniteAction.from_points(d4, pts)
    parts = orbits(action)
    flat = sorted(i for o in parts for i in o)
    assert flat == list(range(5))
    for o in parts:
        for x in o:
            assert set(orbit_stabilizer(action, x)[0]) == set(o)


def test_action_validation():
    c2 = make_group("cyclic", 2)
    with pytest.raises(ValueError):
        FiniteAction(c2, [[0, 1], [0, 0]])
    with pytest.raises(ValueError):
        FiniteAction(c2, [[1, 0], [0, 1]])
    c4 = make_group("cyclic", 4)
    # rows are permutations but violate g.(h.x) = (gh).x
    with pytest.raises(ValueError):
        FiniteAction(c4, [[0, 1, 2], [1, 2, 0], [1, 0, 2], [2, 0, 1]])


def test_action_json_round_trip():
    d4 = make_group("dihedral", 4)
    pts = np.array([[1.0, 2.0], [-2.0, 1.0], [-1.0, -2.0], [2.0, -1.0], [1.0, -2.0], [2.0, 1.0], [-1.0, 2.0],
                    [-2.0, -1.0]])
    action = FiniteAction.from_points(d4, pts)
    back = FiniteAction.from_json(action.to_json())
    assert back.group == d4 and np.array_equal(back.table, action.table)
    doc = json.loads(action.to_json())
    assert doc["group"] == {"kind": "dihedral", "n": 4} and doc["carrier_size"] == 8


def test_element_names():
    d4 = make_group("dihedral", 4)
    for g in d4:
        assert elements_from_names(d4, [g.name])[0] is g
    with pytest.raises(ValueError):
        elements_from_names(d4, ["flip"])


def test_immutability():
    c4 = make_group("cyclic", 4)
    with pytest.raises(ValueError):
        c4.cayley[0, 0] = 3
    with pytest.raises(AttributeError):
        c4[1].rotation = 2
