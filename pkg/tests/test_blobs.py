import math

import numpy as np
import pytest

from geotransport.blobs import build_blob_forest
from geotransport.quadtree import build_uniform_quadtree, build_warped_quadtree

FOREST_CONST = 10.0


def warped_forest(pts, mu=None, eps=0.25):
    pts = np.asarray(pts, dtype=float)
    if mu is None:
        mu = np.zeros(len(pts))
        mu[0] = 1.0
        mu[-1] = -1.0
        if len(pts) == 1:
            mu = np.zeros(1)
    build = build_warped_quadtree(pts, mu, eps)
    tree = build.tree
    centers = (tree.lo + tree.hi) / 2
    return build, tree, build_blob_forest(tree, centers)


def balanced(rng, n, d, scale=10.0):
    pts = rng.random((n, d)) * scale
    mu = rng.normal(size=n)
    mu -= mu.mean()
    mu[-1] -= mu.sum()
    return pts, mu


def brute_blobs(tree, centers, lvl):
    """Fresh bottom-up restatement of the nested per-dimension grouping:
    at each level, boxes extend by Delta_l/n^2, sort-chain by overlap in
    dimension 0, refine each chain by dimension 1, and so on."""
    n = tree.n_original
    d = tree.dimension
    deepest = int(tree.level.max())

    def nested_group(groups, ext, dim):
        if dim == d or len(groups) <= 1:
            return [frozenset().union(*groups)] if groups else []
        def lo_of(g):
            return min(centers[c][dim] for c in g)
        def hi_of(g):
            return max(centers[c][dim] for c in g)
        ordered = sorted(groups, key=lambda g: (lo_of(g), min(g)))
        chains = [[ordered[0]]]
        cur_hi = hi_of(ordered[0]) + ext
        for g in ordered[1:]:
            if lo_of(g) - ext <= cur_hi:
                chains[-1].append(g)
                cur_hi = max(cur_hi, hi_of(g) + ext)
            else:
                chains.append([g])
                cur_hi = hi_of(g) + ext
        out = []
        for chain in chains:
            out.extend(nested_group(chain, ext, dim + 1))
        return out

    groups = [frozenset([int(c)]) for c in range(tree.n_cells)
              if tree.level[c] == deepest]
    for cur in range(deepest - 1, lvl - 1, -1):
        ext_cur = tree.delta_level(cur) / (n * n)
        entrants = [frozenset([int(c)]) for c in range(tree.n_cells)
                    if tree.level[c] == cur + 1]
        groups = nested_group(groups + entrants, ext_cur, 0)
    return sorted(groups)


def test_far_points_distinct_blobs():
    pts = np.array([[0.0, 0.0], [100.0, 100.0]])
    build, tree, forest = warped_forest(pts, np.array([1.0, -1.0]))
    lvl = 1
    nodes = forest.level_nodes[lvl]
    # level-1 members fall in well separated cells: at least two blobs
    assert len(nodes) >= 2


def test_overlapping_boxes_share_blob():
    rng = np.random.default_rng(0)
    for trial in range(6):
        n = int(rng.integers(3, 14))
        d = int(rng.integers(1, 3))
        pts, mu = balanced(rng, n, d)
        build, tree, forest = warped_forest(pts, mu)
        centers = (tree.lo + tree.hi) / 2
        for lvl in range(min(3, tree.depth)):
            got = sorted(
                frozenset(forest.members(int(nd))) for nd in forest.level_nodes[lvl]
            )
            want = brute_blobs(tree, centers, lvl)
            assert got == want, (trial, lvl)


def test_forest_node_count_bound():
    rng = np.random.default_rng(1)
    for trial in range(5):
        n = int(rng.integers(8, 80))
        d = int(rng.integers(1, 4))
        pts, mu = balanced(rng, n, d)
        build, tree, forest = warped_forest(pts, mu)
        n_vertices = tree.n_cells
        assert forest.n_nodes <= FOREST_CONST * n_vertices * math.log2(max(n, 2))


def test_shift_measure_examples_and_oracle():
    rng = np.random.default_rng(2)
    pts, mu = balanced(rng, 30, 2)
    build, tree, forest = warped_forest(pts, mu)
    lvl = 1
    s = forest.shifts[lvl]
    delta = s.delta
    # full-interval measure equals delta minus the forbidden mass
    for dim in range(2):
        total = forest.shift_measure(lvl, dim, 0.0, delta)
        assert 0 < total <= delta + 1e-12
        # numeric scan oracle at fine resolution
        grid = np.linspace(0, delta, 200_001)
        inside = np.zeros(len(grid) - 1, dtype=bool)
        mids = (grid[:-1] + grid[1:]) / 2
        for lo, hi in s.dim_intervals[dim]:
            inside |= (mids > lo) & (mids < hi)
        numeric = inside.mean() * delta
        assert total == pytest.approx(numeric, abs=2e-4 * delta)
        # interval queries match the numeric oracle too
        for _ in range(25):
            a, b = np.sort(rng.random(2) * delta)
            numeric_ab = (inside & (mids > a) & (mids < b)).mean() * delta
            assert forest.shift_measure(lvl, dim, a, b) == pytest.approx(
                numeric_ab, abs=2e-4 * delta
            )


def test_empty_and_full_shift_measures():
    pts = np.array([[0.0], [64.0]])
    build, tree, forest = warped_forest(pts, np.array([1.0, -1.0]))
    lvl = 2
    s = forest.shifts[lvl]
    assert forest.shift_measure(lvl, 0, 0.0, s.delta) == pytest.approx(
        s.measure_dim(0, 0.0, s.delta)
    )
    inner = s.dim_intervals[0]
    if len(inner):
        lo, hi = inner[0]
        assert forest.shift_measure(lvl, 0, lo, hi) == pytest.approx(hi - lo)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(3)
    for trial in range(5):
        n = int(rng.integers(4, 60))
        d = int(rng.integers(1, 4))
        pts, mu = balanced(rng, n, d)
        build, tree, forest = warped_forest(pts, mu)
        for nid in range(forest.n_nodes):
            cells, probs = forest.candidates(nid)
            assert len(cells) <= d + 1
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(probs >= 0) and np.all(probs <= 1 + 1e-12)


def test_interior_blob_has_certain_home():
    # a lone cluster far from everything sits deep inside its home cell
    pts = np.array([[50.0, 50.0], [50.5, 50.5], [0.0, 0.0], [100.0, 100.0]])
    mu = np.array([1.0, 1.0, -1.0, -1.0])
    build, tree, forest = warped_forest(pts, mu)
    certain = 0
    for nid in range(forest.n_nodes):
        cells, probs = forest.candidates(nid)
        if len(cells) == 1:
            assert probs[0] == pytest.approx(1.0)
            certain += 1
    assert certain > 0


def test_one_dim_two_candidate_sweep_matches_numeric():
    # low-spread model: singleton blob at offset t from the cell's left face
    pts = np.array([[0.0], [10.0], [3.7], [6.1]])
    tree = build_uniform_quadtree(pts)
    centers = (tree.lo + tree.hi) / 2
    forest = build_blob_forest(tree, centers)
    rng = np.random.default_rng(4)
    coord_of = {}
    by_coord = {}
    for lvl_ids, lvl_coords in zip(tree.level_cells, tree.level_coords):
        for k, c in enumerate(lvl_ids):
            coord = tuple(int(x) for x in np.atleast_1d(lvl_coords[k]))
            coord_of[int(c)] = coord
            by_coord[(int(tree.level[c]),) + coord] = int(c)
    for nid in range(forest.n_nodes):
        lvl = int(forest.node_level[nid])
        delta = forest.delta(lvl)
        home = int(forest.node_home[nid])
        cells, probs = forest.candidates(nid)
        # numeric sweep: sample shifts, find which cell covers the blob
        pos = forest.box_lo[nid][0]
        offset = pos - tree.lo[home][0]
        t = rng.random(200_000) * delta
        frac_home = float(np.mean(t <= offset))
        left = by_coord.get((lvl, coord_of[home][0] - 1))
        got = dict(zip(cells.tolist(), probs.tolist()))
        if left is None:
            frac_home = 1.0  # the crossed portion softlinks back to the home
        assert got.get(home, 0.0) == pytest.approx(frac_home, abs=5e-3)
        if left is not None and 0 < offset < delta:
            assert got.get(left, 0.0) == pytest.approx(1 - frac_home, abs=5e-3)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


def test_blob_monotonicity_and_moat_cohabitation():
    rng = np.random.default_rng(5)
    for trial in range(4):
        n = int(rng.integers(6, 40))
        d = int(rng.integers(1, 3))
        pts, mu = balanced(rng, n, d)
        build, tree, forest = warped_forest(pts, mu)
        centers = (tree.lo + tree.hi) / 2
        # membership grows toward the root
        for cell in range(tree.n_cells):
            prev = None
            for lvl in range(int(tree.level[cell]) - 1, -1, -1):
                node = forest.blob_of(cell, lvl)
                mem = set(forest.members(node))
                if prev is not None:
                    assert prev <= mem
                prev = mem
        # net points within Delta_l / n^2 of each other share level-l blobs
        for lvl in range(tree.depth):
            if forest.shifts[lvl].degraded:
                continue
            delta = tree.delta_level(lvl)
            ids = [c for c in range(tree.n_cells) if tree.level[c] > lvl]
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    u, v = ids[i], ids[j]
                    if np.linalg.norm(centers[u] - centers[v]) <= delta / n**2:
                        assert forest.blob_of(u, lvl) == forest.blob_of(v, lvl)


def test_legal_measure_at_least_half_delta():
    rng = np.random.default_rng(6)
    for trial in range(5):
        n = int(rng.integers(80, 160))
        d = int(rng.integers(1, 4))
        pts, mu = balanced(rng, n, d)
        build, tree, forest = warped_forest(pts, mu, eps=0.25)
        for lvl in range(tree.depth + 1):
            assert not forest.shifts[lvl].degraded
            assert forest.legal_measure(lvl) >= forest.delta(lvl) / 2


def test_uniform_forest_probabilities():
    rng = np.random.default_rng(7)
    pts = rng.random((40, 2)) * 4
    tree = build_uniform_quadtree(pts)
    centers = (tree.lo + tree.hi) / 2
    forest = build_blob_forest(tree, centers)
    for nid in range(forest.n_nodes):
        cells, probs = forest.candidates(nid)
        assert len(cells) <= 3
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    # singleton blobs: every node's member set is one cell
    for nid in range(forest.n_nodes):
        assert len(forest.members(nid)) == 1
