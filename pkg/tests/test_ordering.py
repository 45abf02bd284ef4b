import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggpt.ordering import (ALL_ORDERINGS, Ordering, inverse_index, linear_index,
                           linear_index_many, n_cells)


def full_traversal(extent, ordering):
    return [inverse_index(i, extent, ordering) for i in range(n_cells(extent))]


def test_xyz_formula_examples():
    extent = (20, 20, 20)
    assert linear_index((0, 0, 5), extent, Ordering.XYZ) == 5
    assert linear_index((0, 1, 0), extent, Ordering.XYZ) == 20
    assert linear_index((1, 0, 0), extent, Ordering.XYZ) == 400
    assert inverse_index(5, extent, Ordering.XYZ) == (0, 0, 5)


def test_zorder_bit_interleave_examples():
    extent = (2, 2, 2)
    assert linear_index((0, 0, 1), extent, Ordering.ZORDER) == 1
    assert linear_index((0, 1, 0), extent, Ordering.ZORDER) == 2
    assert linear_index((1, 0, 0), extent, Ordering.ZORDER) == 4
    assert linear_index((1, 1, 1), extent, Ordering.ZORDER) == 7
    assert inverse_index(7, extent, Ordering.ZORDER) == (1, 1, 1)


def test_hilbert_face_adjacency_2_cube():
    coords = full_traversal((2, 2, 2), Ordering.HILBERT)
    for a, b in zip(coords, coords[1:]):
        assert sum(abs(x - y) for x, y in zip(a, b)) == 1


@pytest.mark.parametrize("ordering", ALL_ORDERINGS, ids=lambda o: o.name.lower())
def test_exhaustive_round_trip_4_cube(ordering):
    extent = (4, 4, 4)
    seen = set()
    for x in range(4):
        for y in range(4):
            for z in range(4):
                r = linear_index((x, y, z), extent, ordering)
                assert 0 <= r < 64
                assert inverse_index(r, extent, ordering) == (x, y, z)
                seen.add(r)
    assert len(seen) == 64


@pytest.mark.parametrize("ordering", ALL_ORDERINGS, ids=lambda o: o.name.lower())
@pytest.mark.parametrize("extent", [(3, 5, 2), (20, 20, 20), (7, 1, 9)])
def test_bijection_on_irregular_extents(ordering, extent):
    ranks = set()
    for x in range(extent[0]):
        for y in range(extent[1]):
            for z in range(extent[2]):
                r = linear_index((x, y, z), extent, ordering)
                assert 0 <= r < n_cells(extent)
                ranks.add(r)
    assert len(ranks) == n_cells(extent)


def test_transposed_variants_are_base_composed_with_permutation():
    extent = (3, 4, 5)
    perm_extent = (4, 5, 3)
    for base, trans in [(Ordering.ZORDER, Ordering.ZORDER_TRANSPOSED),
                        (Ordering.HILBERT, Ordering.HILBERT_TRANSPOSED)]:
        for x in range(3):
            for y in range(4):
                for z in range(5):
                    assert linear_index((x, y, z), extent, trans) == \
                        linear_index((y, z, x), perm_extent, base)


def test_out_of_bounds_rejected():
    with pytest.raises(ValueError):
        linear_index((4, 0, 0), (4, 4, 4), Ordering.XYZ)
    with pytest.raises(ValueError):
        linear_index((-1, 0, 0), (4, 4, 4), Ordering.HILBERT)
    with pytest.raises(ValueError):
        inverse_index(64, (4, 4, 4), Ordering.ZORDER)


@settings(max_examples=30, deadline=None)
@given(st.tuples(st.integers(1, 32), st.integers(1, 32), st.integers(1, 32)),
       st.sampled_from(list(ALL_ORDERINGS)), st.data())
def test_random_coordinate_round_trip(extent, ordering, data):
    coord = tuple(data.draw(st.integers(0, e - 1)) for e in extent)
    r = linear_index(coord, extent, ordering)
    assert inverse_index(r, extent, ordering) == coord


def test_vectorized_matches_scalar(rng):
    extent = (6, 5, 7)
    coords = np.stack([rng.integers(0, e, size=40) for e in extent], axis=1)
    for ordering in ALL_ORDERINGS:
        ranks = linear_index_many(coords, extent, ordering)
        for c, r in zip(coords, ranks):
            assert linear_index(tuple(c), extent, ordering) == r


def test_zorder_violates_adjacency_on_8_cube():
    coords = full_traversal((8, 8, 8), Ordering.ZORDER)
    violations = sum(1 for a, b in zip(coords, coords[1:])
                     if sum(abs(x - y) for x, y in zip(a, b)) != 1)
    assert violations >= 1


def test_ordering_names_round_trip():
    assert Ordering.from_name("xyz") == Ordering.XYZ
    assert Ordering.from_name("z-order") == Ordering.ZORDER
    assert Ordering.from_name("hilbert_transposed") == Ordering.HILBERT_TRANSPOSED
    with pytest.raises(ValueError):
        Ordering.from_name("spiral")
