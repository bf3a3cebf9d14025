import numpy as np
import pytest

from geotransport.core import flow_cost, flow_divergence
from geotransport.oracle import exact_graph_flow
from geotransport.solver import SolverConfig, solve_flow
from tests.test_precondition import balanced, make_precond, random_net_divergence


def test_zero_divergence_zero_flow():
    rng = np.random.default_rng(0)
    pts, mu = balanced(rng, 10, 2)
    pre = make_precond(pts, mu)
    cfg = SolverConfig(eps=0.25)
    f = solve_flow(pre.graph, pre, np.zeros(pre.graph.n_vertices), cfg)
    assert np.all(f == 0)


def test_single_pair_near_shortest_path():
    rng = np.random.default_rng(1)
    pts, mu = balanced(rng, 14, 2)
    pre = make_precond(pts, mu, eps=0.25)
    graph = pre.graph
    nets = np.arange(graph.n_points, graph.n_vertices)
    u, v = int(nets[3]), int(nets[-2])
    b = np.zeros(graph.n_vertices)
    b[u], b[v] = 1.0, -1.0
    f = solve_flow(graph, pre, b, SolverConfig(eps=0.25))
    dist = graph.shortest_paths_from([u])[0, v]
    assert np.allclose(flow_divergence(graph, f), b, atol=1e-9)
    assert flow_cost(graph, f) <= (1 + 2 * 0.25) * dist


@pytest.mark.parametrize("seed", range(4))
def test_leaf_supported_divergences_near_optimal(seed):
    # the pipeline's own divergences: supplies pushed onto the leaf net points
    from geotransport.quadtree import build_warped_quadtree
    from geotransport.spanner import build_spanner, pose_flow_problem

    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(20, 60))
    d = int(rng.integers(1, 3))
    pts, mu = balanced(rng, n, d)
    pre = make_precond(pts, mu, eps=0.25)
    build = build_warped_quadtree(pts, mu, 0.25)
    b, _ = pose_flow_problem(pre.graph, build.supplies)
    f = solve_flow(pre.graph, pre, b, SolverConfig(eps=0.25))
    assert np.abs(flow_divergence(pre.graph, f) - b).sum() <= 1e-9 * np.abs(b).sum()
    opt, _ = exact_graph_flow(pre.graph, b)
    assert flow_cost(pre.graph, f) <= (1 + 2 * 0.25) * opt


def test_arbitrary_divergences_respect_kappa_guarantee():
    rng = np.random.default_rng(7)
    pts, mu = balanced(rng, 40, 2)
    pre = make_precond(pts, mu, eps=0.25)
    for _ in range(3):
        b = random_net_divergence(rng, pre.graph)
        f = solve_flow(pre.graph, pre, b, SolverConfig(eps=0.25))
        assert np.abs(flow_divergence(pre.graph, f) - b).sum() <= 1e-9 * np.abs(b).sum()
        opt, _ = exact_graph_flow(pre.graph, b)
        lower = float(np.abs(pre.apply_B(b)).sum())
        assert flow_cost(pre.graph, f) <= pre.kappa * lower * (1 + 1e-9)
        # far stronger in practice; assert a sane constant-factor envelope
        assert flow_cost(pre.graph, f) <= 3.0 * opt


def test_zero_inner_iterations_equals_greedy():
    rng = np.random.default_rng(2)
    pts, mu = balanced(rng, 18, 2)
    pre = make_precond(pts, mu)
    b = random_net_divergence(rng, pre.graph)
    cfg = SolverConfig(eps=0.25, inner_iterations=0)
    f = solve_flow(pre.graph, pre, b, cfg)
    g = pre.greedy_route(b)
    assert np.allclose(f, g, atol=1e-12)


def test_solver_never_worse_than_greedy():
    rng = np.random.default_rng(3)
    pts, mu = balanced(rng, 30, 2)
    pre = make_precond(pts, mu)
    for _ in range(3):
        b = random_net_divergence(rng, pre.graph)
        f = solve_flow(pre.graph, pre, b, SolverConfig(eps=0.25))
        g = pre.greedy_route(b)
        assert flow_cost(pre.graph, f) <= flow_cost(pre.graph, g) * (1 + 1e-9)


def test_backend_paths_agree_roughly():
    # the numpy fallback implements the same iteration as the kernel
    from geotransport import _kernels

    if _kernels.BACKEND != "cython":
        pytest.skip("compiled kernels unavailable")
    rng = np.random.default_rng(4)
    pts, mu = balanced(rng, 16, 2)
    pre = make_precond(pts, mu)
    b = random_net_divergence(rng, pre.graph)
    cfg = SolverConfig(eps=0.25, inner_iterations=300)
    from geotransport.solver import _PrimalDual

    state = _PrimalDual(pre.graph, pre, cfg)
    fast = state.run(b, 300)
    state._use_fast = False
    slow = state.run(b, 300)
    cost_fast = flow_cost(pre.graph, fast)
    cost_slow = flow_cost(pre.graph, slow)
    assert cost_fast == pytest.approx(cost_slow, rel=0.2, abs=1e-9)


def test_config_validates_eps():
    with pytest.raises(ValueError):
        SolverConfig(eps=0.75)
    with pytest.raises(ValueError):
        SolverConfig(eps=0.0)
    cfg = SolverConfig(eps=0.25)
    assert cfg.resolve_iterations(100) >= 400
