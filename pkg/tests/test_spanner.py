import math

import numpy as np
import pytest

from geotransport.oracle import exact_emd, exact_graph_flow
from geotransport.core import flow_divergence, make_instance
from geotransport.quadtree import build_uniform_quadtree, build_warped_quadtree
from geotransport.spanner import build_spanner, pose_flow_problem

E = math.e
STRETCH_CONST = 4 * (E**2 + E**3)  # times sqrt(d) eps


def warped_graph(pts, mu, eps):
    build = build_warped_quadtree(pts, mu, eps)
    graph = build_spanner(build.tree, eps, np.asarray(pts, float)[build.alive])
    return build, graph


def test_single_point_graph():
    build, graph = warped_graph(np.array([[2.0, 3.0]]), np.array([0.0]), 0.25)
    assert graph.n_vertices == 2
    assert graph.n_edges == 1
    assert graph.edge_weight[0] == pytest.approx(0.0, abs=1e-12)


def test_adjacent_cells_connected_one_dim():
    pts = np.array([[0.0], [10.0]])
    build, graph = warped_graph(pts, np.array([1.0, -1.0]), 0.5)
    # the two level-1 cells are grid neighbors at offset 1 <= 1/(2 eps)
    lvl1 = build.tree.level_cells[1]
    assert len(lvl1) == 2
    assert graph.neighbor_edge(1, int(lvl1[0]), int(lvl1[1])) >= 0


def test_point_degree_exactly_one():
    rng = np.random.default_rng(0)
    pts = rng.random((30, 2))
    mu = rng.normal(size=30)
    mu -= mu.mean()
    build, graph = warped_graph(pts, mu, 0.25)
    deg = np.zeros(graph.n_vertices, dtype=int)
    np.add.at(deg, graph.edge_tail, 1)
    np.add.at(deg, graph.edge_head, 1)
    assert np.all(deg[: graph.n_points] == 1)


def test_degree_bounds():
    rng = np.random.default_rng(1)
    for d in (1, 2, 3):
        eps = 0.25
        pts = rng.random((40, d)) * 5
        mu = rng.normal(size=40)
        mu -= mu.mean()
        build, graph = warped_graph(pts, mu, eps)
        tree = build.tree
        neighbor_deg = np.zeros(tree.n_cells, dtype=int)
        for lvl in range(tree.depth + 1):
            keys = graph.level_neighbor_keys[lvl]
            if len(keys) == 0:
                continue
            a = (keys >> 32).astype(int)
            b = (keys & ((1 << 32) - 1)).astype(int)
            np.add.at(neighbor_deg, a, 1)
            np.add.at(neighbor_deg, b, 1)
        cap = (1 / eps + 1) ** d - 1
        assert neighbor_deg.max() <= cap
        child_count = np.bincount(tree.parent[tree.parent >= 0], minlength=tree.n_cells)
        assert child_count.max() <= 2**d


def test_neighbor_offsets_within_radius():
    rng = np.random.default_rng(2)
    pts = rng.random((60, 2)) * 4
    mu = rng.normal(size=60)
    mu -= mu.mean()
    eps = 0.125
    build, graph = warped_graph(pts, mu, eps)
    tree = build.tree
    r = int(1 / (2 * eps))
    for lvl in range(tree.depth + 1):
        ids = tree.level_cells[lvl]
        pos = {int(c): k for k, c in enumerate(ids)}
        coords = tree.level_coords[lvl]
        keys = graph.level_neighbor_keys[lvl]
        for key in keys:
            a, b = int(key >> 32), int(key & ((1 << 32) - 1))
            ca = np.asarray(coords[pos[a]], dtype=float)
            cb = np.asarray(coords[pos[b]], dtype=float)
            assert np.abs(ca - cb).max() <= r


@pytest.mark.parametrize("kind", ["warped", "uniform"])
def test_stretch_bound_random(kind):
    rng = np.random.default_rng(3)
    for trial in range(4):
        n, d, eps = 40, 2, 0.25
        pts = rng.random((n, d)) * 10
        mu = rng.normal(size=n)
        mu -= mu.mean()
        if kind == "warped":
            build, graph = warped_graph(pts, mu, eps)
            survivors = pts[build.alive]
        else:
            tree = build_uniform_quadtree(pts)
            graph = build_spanner(tree, eps, pts)
            survivors = pts
        k = len(survivors)
        dist = graph.shortest_paths_from(np.arange(k))[:, :k]
        direct = np.linalg.norm(survivors[:, None, :] - survivors[None, :, :], axis=2)
        mask = ~np.eye(k, dtype=bool)
        ratio = dist[mask] / direct[mask]
        assert ratio.min() >= 1 - 1e-9
        assert ratio.max() <= 1 + STRETCH_CONST * math.sqrt(d) * eps


def test_flow_problem_posing():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    mu = np.array([3.0, -3.0])
    build, graph = warped_graph(pts, mu, 0.25)
    b, preroute = pose_flow_problem(graph, build.supplies)
    assert b[: graph.n_points].sum() == 0
    assert b.sum() == pytest.approx(0.0, abs=1e-12)
    leaf_net = graph.tree.point_leaf + graph.n_points
    assert b[leaf_net[0]] == pytest.approx(3.0)
    assert b[leaf_net[1]] == pytest.approx(-3.0)
    assert preroute[0] == pytest.approx(3.0)
    div = flow_divergence(graph, preroute)
    assert div[0] == pytest.approx(3.0)
    # preroute moves each supply onto its leaf net point
    assert np.allclose(div + b, np.concatenate([mu, np.zeros(graph.tree.n_cells)]))


def test_mu_zero_gives_zero_problem():
    pts = np.array([[0.0], [5.0], [9.0]])
    mu = np.zeros(3)
    build, graph = warped_graph(pts, mu, 0.25)
    b, preroute = pose_flow_problem(graph, build.supplies)
    assert np.all(b == 0) and np.all(preroute == 0)


def test_leaves_hold_single_points():
    rng = np.random.default_rng(4)
    pts = rng.random((25, 2))
    mu = rng.normal(size=25)
    mu -= mu.mean()
    build, graph = warped_graph(pts, mu, 0.25)
    leaves, counts = np.unique(graph.tree.point_leaf, return_counts=True)
    assert np.all(counts == 1)


def test_spanner_cost_sandwich_vs_oracle():
    rng = np.random.default_rng(5)
    for trial in range(4):
        n, d, eps = 16, 2, 0.25
        pts = rng.random((n, d)) * 8
        mu = rng.normal(size=n)
        mu -= mu.mean()
        inst = make_instance(pts, mu)
        build, graph = warped_graph(inst.points, inst.supplies, eps)
        if build.records:
            continue
        b, preroute = pose_flow_problem(graph, build.supplies)
        b_full = np.concatenate([build.supplies, np.zeros(graph.tree.n_cells)])
        flow_opt, _ = exact_graph_flow(graph, b_full)
        emd, _ = exact_emd(inst)
        c = STRETCH_CONST * math.sqrt(d)
        assert emd <= flow_opt * (1 + 1e-9)
        assert flow_opt <= (1 + c * eps) * emd * (1 + 1e-9)


def test_edge_list_export():
    build, graph = warped_graph(np.array([[0.0], [4.0]]), np.array([1.0, -1.0]), 0.5)
    listed = graph.to_edge_list()
    assert len(listed) == graph.n_edges
    assert all(t < h for t, h, _ in listed)
