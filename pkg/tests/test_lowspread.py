import numpy as np
import pytest

from geotransport import make_instance, validate_map
from geotransport.core import UnsupportedInstanceError
from geotransport.lowspread import ModeSelector, solve_low_spread, solve_matching
from geotransport.oracle import exact_emd, optimal_matching_cost


def test_mode_selector_threshold():
    rng = np.random.default_rng(0)
    pts = rng.random((20, 2))
    mu = np.zeros(20)
    mu[0], mu[-1] = 1.0, -1.0
    inst = make_instance(pts, mu)
    sel = ModeSelector.for_instance(inst)
    assert sel.mode == "low-spread"
    far = np.array([[0.0, 0.0], [1e-9, 1e-9], [1e9, 0.0], [0.0, 1e9]])
    inst2 = make_instance(far, np.array([1.0, 1.0, -1.0, -1.0]))
    assert ModeSelector.for_instance(inst2).mode == "warped"


def test_single_pair_low_spread():
    inst = make_instance([[0.0, 0.0], [3.0, 4.0]], [1.0, -1.0])
    res = solve_low_spread(inst, 0.25)
    assert res.cost <= (1 + 0.25) * 5.0
    assert res.tmap.entries == {(0, 1): pytest.approx(1.0)}


def test_pipelines_agree_on_forced_instances():
    # tiny unit-supply instances where any (1+eps)-approximation is exactly
    # optimal: both pipelines must return identical costs
    from geotransport import solve_transport

    cases = [
        (np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]]),
         np.array([1.0, -1.0, 1.0, -1.0])),
        (np.array([[0.0], [1.0], [2.0], [3.0]]),
         np.array([1.0, -1.0, -1.0, 1.0])),
    ]
    for pts, mu in cases:
        inst = make_instance(pts, mu)
        a = solve_transport(inst, 0.25, mode="low-spread")
        b = solve_transport(inst, 0.25, mode="warped")
        assert a.cost == pytest.approx(b.cost, rel=1e-9)


def test_matching_four_points_vs_hungarian():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.1, 1.0], [2.2, 1.1]])
    mu = np.array([1.0, 1.0, -1.0, -1.0])
    inst = make_instance(pts, mu)
    res = solve_matching(inst, 0.25)
    assert validate_map(inst, res.tmap) == []
    assert sorted(res.tmap.entries.values()) == [1.0, 1.0]
    assert res.cost <= (1 + 0.25) * optimal_matching_cost(inst)


def test_matching_two_points():
    inst = make_instance([[0.0], [7.0]], [1.0, -1.0])
    res = solve_matching(inst, 0.5)
    assert res.tmap.entries == {(0, 1): 1.0}
    assert res.cost == pytest.approx(7.0)


def test_matching_collinear_enumeration():
    # sources at 0,1 and sinks at 2,3: both matchings cost 4; any output ok
    inst = make_instance([[0.0], [1.0], [2.0], [3.0]],
                         [1.0, 1.0, -1.0, -1.0])
    res = solve_matching(inst, 0.25)
    assert res.cost <= (1 + 0.25) * 4.0
    assert sorted(res.tmap.entries.values()) == [1.0, 1.0]


def test_matching_fifty_pairs_vs_hungarian():
    rng = np.random.default_rng(3)
    pts = rng.random((100, 2)) * 10
    mu = np.array([1.0] * 50 + [-1.0] * 50)
    inst = make_instance(pts, mu)
    res = solve_matching(inst, 0.25)
    assert validate_map(inst, res.tmap) == []
    vals = sorted(res.tmap.entries.values())
    assert vals == [1.0] * 50
    srcs = {i for i, _ in res.tmap.entries}
    dsts = {j for _, j in res.tmap.entries}
    assert len(srcs) == 50 and len(dsts) == 50
    assert res.cost <= (1 + 0.25) * optimal_matching_cost(inst)


def test_matching_rejects_bad_inputs():
    inst = make_instance([[0.0], [1.0]], [2.0, -2.0])
    with pytest.raises(UnsupportedInstanceError):
        solve_matching(inst, 0.25)
    wide = make_instance([[0.0], [1e-9], [1e9], [2e9]],
                         [1.0, 1.0, -1.0, -1.0])
    with pytest.raises(UnsupportedInstanceError):
        solve_matching(wide, 0.25)


def test_low_spread_near_optimal_random():
    rng = np.random.default_rng(4)
    for _ in range(3):
        n = int(rng.integers(10, 60))
        pts = rng.random((n, 2)) * 5
        mu = rng.normal(size=n)
        mu -= mu.mean()
        mu[-1] -= mu.sum()
        inst = make_instance(pts, mu)
        res = solve_low_spread(inst, 0.25)
        assert validate_map(inst, res.tmap) == []
        opt, _ = exact_emd(inst)
        assert res.cost <= (1 + 0.25) * opt
