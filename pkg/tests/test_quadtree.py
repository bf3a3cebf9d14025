import math

import numpy as np
import pytest

from geotransport.core import make_instance
from geotransport.moats import build_moat_index
from geotransport.oracle import exact_emd
from geotransport.quadtree import (
    build_uniform_quadtree,
    build_warped_quadtree,
    effective_epsilon,
    leaf_chain_target,
)

# calibrated once over the seeded suite below: cells <= CELL_CONST * n' * lg n
CELL_CONST = 8.0
MOVE_CONST = 6.0


def balanced(rng, n, d, scale=10.0):
    pts = rng.random((n, d)) * scale
    mu = rng.normal(size=n)
    mu -= mu.mean()
    mu[-1] -= mu.sum()
    return pts, mu


def test_effective_epsilon_rules():
    assert effective_epsilon(0.5, 100) == 0.5
    assert effective_epsilon(0.3, 100) == 0.25
    assert effective_epsilon(0.9, 100) == 0.5
    assert effective_epsilon(1 / 16, 10) == 1 / 8  # floored at 1/n
    assert effective_epsilon(1 / 16, 100) == 1 / 16
    assert effective_epsilon(0.2, 2) == 0.5


def test_single_point_tree():
    build = build_warped_quadtree(np.array([[1.0, 2.0]]), np.array([0.0]), 0.25)
    assert build.tree.n_cells == 1
    assert build.tree.is_leaf[0]
    assert not build.records


def test_two_far_points_leaf_chain_length():
    eps = 0.25
    pts = np.array([[0.0], [100.0]])
    build = build_warped_quadtree(pts, np.array([1.0, -1.0]), eps)
    tree = build.tree
    target = leaf_chain_target(2, eps)  # lg(n^2/eps) consecutive singles
    for p in range(2):
        leaf = int(tree.point_leaf[p])
        # walk up: the leaf closes a chain of exactly `target` single cells
        chain = 0
        c = leaf
        while c != -1 and _cell_point_count(tree, pts, c) == 1:
            chain += 1
            c = int(tree.parent[c])
        assert chain == target


def _cell_point_count(tree, pts, c):
    inside = np.all((pts >= tree.lo[c] - 1e-12) & (pts <= tree.hi[c] + 1e-12), axis=1)
    return int(inside.sum())


def test_split_obeys_moat_shift():
    # one point just above the midpoint of the root in dimension 0
    n = 4
    pts = np.array([[4.1, 1.0], [0.5, 3.0], [7.5, 6.0], [2.0, 7.0]])
    mu = np.array([1.0, 1.0, -1.0, -1.0])
    build = build_warped_quadtree(pts, mu, 0.25)
    tree = build.tree
    root_children = np.nonzero(tree.parent == 0)[0]
    moats = build_moat_index(pts)
    lam = tree.root_side / (2 * n * n)
    want = moats.query_placement(0, (tree.lo[0][0] + tree.hi[0][0]) / 2, lam)
    got_cuts = sorted(set(float(tree.hi[c][0]) for c in root_children)
                      | set(float(tree.lo[c][0]) for c in root_children))
    assert any(abs(c - want.coordinate) < 1e-12 for c in got_cuts)


def test_contraction_triggers_and_balances():
    # two tight points inside a huge spread instance
    pts = np.array([[0.0, 0.0], [1e-9, 1e-9], [50.0, 0.0], [0.0, 50.0]])
    mu = np.array([1.0, 2.0, -1.5, -1.5])
    build = build_warped_quadtree(pts, mu, 0.25)
    assert len(build.records) == 1
    rec = build.records[0]
    assert sorted(rec.members.tolist()) == [0, 1]
    assert rec.representative == 0  # lexicographically smallest
    assert rec.sub_supplies.sum() == pytest.approx(0.0, abs=1e-15)
    assert rec.merged_supply == pytest.approx(3.0)
    assert len(build.alive) == 3
    # merged supply lands on the representative
    rep_pos = list(build.alive).index(0)
    assert build.supplies[rep_pos] == pytest.approx(3.0)


def test_no_contraction_for_moderate_pairs():
    pts = np.array([[0.0], [4.0], [10.0]])
    mu = np.array([1.0, 1.0, -2.0])
    build = build_warped_quadtree(pts, mu, 0.25)
    assert not build.records


def test_level_side_bounds_hold():
    rng = np.random.default_rng(2)
    for trial in range(10):
        n = int(rng.integers(2, 60))
        d = int(rng.integers(1, 4))
        pts, mu = balanced(rng, n, d)
        build = build_warped_quadtree(pts, mu, 0.25)
        assert build.tree.side_bound_violations() == []
        assert build.midpoint_fallbacks == 0


def test_cell_count_and_split_work_bounds():
    rng = np.random.default_rng(3)
    for trial in range(10):
        n = int(rng.integers(4, 120))
        d = int(rng.integers(1, 4))
        eps = float(rng.choice([0.5, 0.25, 0.125]))
        pts, mu = balanced(rng, n, d)
        build = build_warped_quadtree(pts, mu, eps)
        n_prime = len(build.alive)
        lg = math.log2(max(n, 2))
        assert build.tree.n_cells <= CELL_CONST * n_prime * max(lg, 1.0), (
            n, d, eps, build.tree.n_cells)
        assert build.split_moves <= MOVE_CONST * d * n * max(lg, 1.0)


def test_children_partition_parent_points():
    rng = np.random.default_rng(5)
    pts, mu = balanced(rng, 40, 2)
    build = build_warped_quadtree(pts, mu, 0.25)
    tree = build.tree
    alive_pts = pts[build.alive]
    for c in range(tree.n_cells):
        kids = np.nonzero(tree.parent == c)[0]
        if len(kids) == 0:
            continue
        inside_parent = _points_in(tree, alive_pts, c)
        union = set()
        for k in kids:
            got = _points_in(tree, alive_pts, k)
            assert not (union & got), "children overlap"
            union |= got
        assert union == inside_parent


def _points_in(tree, pts, c):
    ok = np.all((pts >= tree.lo[c] - 1e-12) & (pts < tree.hi[c] + 1e-12), axis=1)
    return set(np.nonzero(ok)[0].tolist())


def test_contraction_cost_preservation():
    # oracle_emd(contracted) + oracle_emd(sub) <= (1 + 10/n^2) oracle_emd(full)
    rng = np.random.default_rng(7)
    for trial in range(6):
        n_far = int(rng.integers(4, 12))
        d = 2
        far_pts = rng.random((n_far, d)) * 100
        base = far_pts[0]
        cluster = base + rng.random((3, d)) * 1e-10
        pts = np.vstack([far_pts, cluster])
        n = len(pts)
        mu = rng.normal(size=n)
        mu -= mu.mean()
        mu[-1] -= mu.sum()
        inst = make_instance(pts, mu)
        build = build_warped_quadtree(inst.points, inst.supplies, 0.25)
        if not build.records:
            continue
        full_cost, _ = exact_emd(inst)
        total = 0.0
        for rec in build.records:
            sub = make_instance(inst.points[rec.members], rec.sub_supplies)
            total += exact_emd(sub)[0]
        reduced = make_instance(inst.points[build.alive], build.supplies)
        total += exact_emd(reduced)[0]
        assert total <= (1 + 10.0 / n**2) * full_cost + 1e-9 * inst.total_mass


def test_uniform_tree_basic():
    rng = np.random.default_rng(11)
    pts = rng.random((50, 2))
    tree = build_uniform_quadtree(pts)
    assert np.all(tree.point_leaf >= 0)
    # leaves hold exactly one point each
    leaves, counts = np.unique(tree.point_leaf, return_counts=True)
    assert np.all(counts == 1)
    assert np.all(tree.is_leaf[leaves])
    # every level's cells have identical exact sides
    for lvl, ids in enumerate(tree.level_cells):
        sides = tree.hi[ids] - tree.lo[ids]
        assert np.allclose(sides, tree.root_side / 2**lvl, rtol=1e-12)
    # grid coords match geometric position
    for lvl, ids in enumerate(tree.level_cells):
        coords = tree.level_coords[lvl]
        lo = tree.lo[0][None, :] + coords * (tree.root_side / 2**lvl)
        assert np.allclose(lo, tree.lo[ids], atol=1e-9 * tree.root_side)


def test_uniform_tree_depth_tracks_spread():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [100.0, 100.0]])
    eps = 0.25
    tree = build_uniform_quadtree(pts, eps)
    # separation depth ~ lg(spread) plus the single-point leaf chains
    assert tree.depth <= math.log2(400) + leaf_chain_target(4, eps) + 3
