import numpy as np
import pytest

from geotransport.core import GeoTransportError
from geotransport.moats import build_moat_index


def brute_placement(coords, x, lam):
    """Union the open intervals (c - lam, c + lam), closing touching moats
    into groups, and scan for the blocking group."""
    cs = np.sort(np.unique(coords))
    groups = []
    for c in cs:
        if groups and c - groups[-1][1] <= 2 * lam:
            groups[-1][1] = c
        else:
            groups.append([c, c])
    for lo, hi in groups:
        if lo - lam < x < hi + lam:
            return True, lo - lam
    return False, x


def make_index(coords, d=1):
    pts = np.array(coords, dtype=float).reshape(-1, 1)
    return build_moat_index(pts)


def test_two_point_events():
    idx = make_index([0.0, 10.0])
    assert list(idx.events(0)) == [5.0]
    # below the merge the groups are separate
    res = idx.query_placement(0, 5.0, 1.0)
    assert not res.shifted and res.coordinate == 5.0


def test_three_point_event_order():
    idx = make_index([0.0, 1.0, 9.0])
    assert list(idx.events(0)) == [0.5, 4.0]


def test_single_point_no_events():
    idx = make_index([3.0])
    assert len(idx.events(0)) == 0
    assert idx.query_placement(0, 3.5, 1.0).shifted


def test_empty_input_rejected():
    with pytest.raises(GeoTransportError):
        build_moat_index(np.empty((0, 1)))


def test_spec_query_examples():
    idx = make_index([0.0, 10.0])
    assert idx.query_placement(0, 5.0, 1.0) == (False, 5.0)
    res = idx.query_placement(0, 0.5, 1.0)
    assert res == (True, -1.0)
    # groups merge at lam = 5: block spans [0, 10], shift to 0 - 6
    res = idx.query_placement(0, 5.0, 6.0)
    assert res == (True, -6.0)


def test_boundary_distance_exactly_lambda_is_clear():
    idx = make_index([0.0])
    assert not idx.query_placement(0, 1.0, 1.0).shifted
    assert idx.query_placement(0, 0.999999, 1.0).shifted


def test_oracle_equivalence_random():
    rng = np.random.default_rng(42)
    for trial in range(8):
        n = int(rng.integers(2, 101))
        coords = rng.random(n) * 100
        if trial % 3 == 0:
            coords = np.round(coords, 1)  # force duplicates and ties
        idx = make_index(coords)
        gaps = np.diff(np.sort(np.unique(coords)))
        for _ in range(1250):
            x = rng.random() * 120 - 10
            choice = rng.integers(0, 3)
            if choice == 0 or len(gaps) == 0:
                lam = rng.random() * 10
            elif choice == 1:
                lam = float(rng.choice(gaps)) / 2  # exactly at an event
            else:
                lam = 0.0
            got = idx.query_placement(0, x, lam)
            want = brute_placement(coords, x, lam)
            assert got.shifted == want[0], (coords, x, lam)
            assert got.coordinate == pytest.approx(want[1], abs=1e-12)


def test_monotone_in_lambda_and_shifted_is_clear():
    rng = np.random.default_rng(9)
    coords = rng.random(40) * 50
    idx = make_index(coords)
    for _ in range(400):
        x = rng.random() * 60 - 5
        lam = rng.random() * 6
        res = idx.query_placement(0, x, lam)
        if not res.shifted:
            for scale in (0.5, 0.1):
                assert not idx.query_placement(0, x, lam * scale).shifted
        else:
            assert res.coordinate <= x
            again = idx.query_placement(0, res.coordinate, lam)
            assert not again.shifted


def test_multidimensional_indices_independent():
    pts = np.array([[0.0, 100.0], [10.0, 101.0]])
    idx = build_moat_index(pts)
    assert idx.query_placement(0, 5.0, 1.0) == (False, 5.0)
    assert idx.query_placement(1, 100.5, 1.0).shifted
