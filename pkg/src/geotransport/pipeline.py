"""End-to-end driver: trees, spanners, flows, recovery.

Contractions spawn recursive sub-instances that are solved independently;
their spanners and flows are merged into one graph whose divergences equal
the original supplies, and the recovery stage turns that into the final
transportation map.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .blobs import build_blob_forest
from .core import (
    GeoTransportError,
    TransportInstance,
    TransportMap,
    UnsupportedInstanceError,
    total_cost,
)
from .oracle import DEFAULT_LIMITS, exact_emd
from .precondition import Preconditioner, low_spread_constants, warped_constants
from .quadtree import (
    build_uniform_quadtree,
    build_warped_quadtree,
    effective_epsilon,
)
from .recovery import acyclify, extract_map, resolve_forest_flows
from .solver import SolverConfig, solve_flow
from .spanner import build_spanner, pose_flow_problem

# one-time calibration: user eps is divided by this constant internally
INTERNAL_EPS_DIVISOR = 2.0

# auto mode switches to the warped pipeline beyond spread n^4
SPREAD_MODE_THRESHOLD_POWER = 4


@dataclass
class SolveStats:
    mode: str = ""
    eps_effective: float = 0.0
    n_cells: int = 0
    n_edges: int = 0
    n_instances: int = 0
    n_contractions: int = 0
    used_oracle_fallback: bool = False
    extraction_drift: float = 0.0
    wall_time: float = 0.0
    stage_seconds: dict = field(default_factory=dict)


@dataclass
class SolveResult:
    tmap: TransportMap
    cost: float
    stats: SolveStats


def select_mode(instance: TransportInstance, mode: str) -> str:
    if mode not in ("auto", "warped", "low-spread", "matching"):
        raise GeoTransportError(f"unknown mode {mode!r}")
    if mode != "auto":
        return mode
    if instance.n < 2:
        return "low-spread"
    threshold = float(instance.n) ** SPREAD_MODE_THRESHOLD_POWER
    return "low-spread" if instance.spread() <= threshold else "warped"


def solve_transport(instance: TransportInstance, eps: float, mode: str = "auto",
                    inner_iterations: int | None = None,
                    backend=None) -> SolveResult:
    t_start = time.perf_counter()
    stats = SolveStats()
    n = instance.n
    if n <= 1 or instance.total_mass == 0.0:
        stats.mode = mode
        stats.wall_time = time.perf_counter() - t_start
        return SolveResult(TransportMap({}), 0.0, stats)

    mode = select_mode(instance, mode)
    stats.mode = mode
    if mode == "matching":
        _check_matching_input(instance)

    eps_eff = effective_epsilon(eps / INTERNAL_EPS_DIVISOR, n)
    stats.eps_effective = eps_eff

    pieces, oracle_needed = _solve_pieces(instance, eps_eff, mode, stats,
                                          inner_iterations)
    if oracle_needed:
        stats.used_oracle_fallback = True
        cost, tmap = exact_emd(instance)
        stats.wall_time = time.perf_counter() - t_start
        return SolveResult(tmap, cost, stats)

    t0 = time.perf_counter()
    tmap, drift = _combine_and_recover(instance, pieces, backend)
    stats.extraction_drift = drift
    stats.stage_seconds["recovery"] = time.perf_counter() - t0
    cost = total_cost(instance, tmap)
    if mode == "matching":
        _check_matching_output(instance, tmap)
    stats.wall_time = time.perf_counter() - t_start
    return SolveResult(tmap, cost, stats)


def _check_matching_input(instance):
    if not np.all(np.abs(np.abs(instance.supplies) - 1.0) < 1e-12):
        raise UnsupportedInstanceError("matching mode requires unit supplies")
    if len(instance.positive_indices) != len(instance.negative_indices):
        raise UnsupportedInstanceError("matching mode requires a balanced instance")
    threshold = float(instance.n) ** SPREAD_MODE_THRESHOLD_POWER
    if instance.spread() > threshold:
        raise UnsupportedInstanceError(
            "matching instances of super-polynomial spread require the spread "
            "reduction preprocessing, which is out of scope here"
        )


def _check_matching_output(instance, tmap):
    for (i, j), v in tmap.entries.items():
        if abs(v - 1.0) > 1e-9:
            raise GeoTransportError("matching output contains a non-unit amount")


@dataclass
class _Piece:
    graph: object
    flow: np.ndarray
    global_points: np.ndarray   # original point id of each graph point


def _solve_pieces(instance, eps_eff, mode, stats, inner_iterations):
    """Build and solve every (sub-)instance; may demand the oracle instead."""
    n = instance.n
    queue = deque()
    queue.append((instance.points, instance.supplies, np.arange(n)))
    built = []
    t_build = t_solve = 0.0
    while queue:
        pts, mu, gids = queue.popleft()
        stats.n_instances += 1
        if len(pts) == 1:
            continue
        t0 = time.perf_counter()
        if mode == "warped":
            build = build_warped_quadtree(pts, mu, eps_eff)
            tree = build.tree
            alive = build.alive
            supplies = build.supplies
            for rec in build.records:
                queue.append((pts[rec.members], rec.sub_supplies, gids[rec.members]))
            stats.n_contractions += len(build.records)
            lam, kappa, denom = warped_constants(pts.shape[1], len(pts))
        else:
            tree = build_uniform_quadtree(pts, eps_eff)
            alive = np.arange(len(pts))
            supplies = np.asarray(mu, dtype=np.float64)
            lam, kappa, denom = low_spread_constants(pts.shape[1], _quick_spread(pts))
        graph = build_spanner(tree, eps_eff, np.asarray(pts, float)[alive])
        forest = build_blob_forest(tree, graph.net_positions)
        precond = Preconditioner(graph=graph, forest=forest, lam=lam,
                                 kappa=kappa, denom=denom)
        t_build += time.perf_counter() - t0
        built.append((graph, precond, supplies, gids[alive]))
        stats.n_cells += tree.n_cells
        stats.n_edges += graph.n_edges

    if stats.n_edges > float(n) ** 4 and n <= DEFAULT_LIMITS.max_points:
        return [], True

    pieces = []
    for graph, precond, supplies, gpoints in built:
        t0 = time.perf_counter()
        b, preroute = pose_flow_problem(graph, supplies)
        cfg = SolverConfig(eps=max(stats.eps_effective, 1e-6),
                           inner_iterations=inner_iterations)
        f = solve_flow(graph, precond, b, cfg)
        pieces.append(_Piece(graph=graph, flow=f + preroute, global_points=gpoints))
        t_solve += time.perf_counter() - t0
    stats.stage_seconds["build"] = t_build
    stats.stage_seconds["solve"] = t_solve
    return pieces, False


def _quick_spread(pts) -> float:
    if len(pts) < 2:
        return 2.0
    from scipy.spatial import cKDTree

    span = pts.max(axis=0) - pts.min(axis=0)
    diam = float(np.sqrt(np.sum(span * span)))
    dist, _ = cKDTree(pts).query(pts, k=2)
    dmin = float(dist[:, 1].min())
    if dmin <= 0:
        raise UnsupportedInstanceError("coincident points survived merging")
    return max(diam / dmin, 2.0)


def _combine_and_recover(instance, pieces, backend):
    """Union the per-instance spanners and flows, then recover the map."""
    n = instance.n
    offsets = []
    total_net = 0
    for piece in pieces:
        offsets.append(n + total_net)
        total_net += piece.graph.tree.n_cells
    nv = n + total_net
    tails, heads, weights, flows = [], [], [], []
    for piece, off in zip(pieces, offsets):
        g = piece.graph
        npts = g.n_points
        remap = piece.global_points
        is_pt_tail = g.edge_tail < npts
        is_pt_head = g.edge_head < npts
        tail = np.where(is_pt_tail, remap[np.minimum(g.edge_tail, npts - 1)],
                        g.edge_tail - npts + off)
        head = np.where(is_pt_head, remap[np.minimum(g.edge_head, npts - 1)],
                        g.edge_head - npts + off)
        tails.append(tail)
        heads.append(head)
        weights.append(g.edge_weight)
        flows.append(piece.flow)
    if tails:
        edge_tail = np.concatenate(tails).astype(np.int64)
        edge_head = np.concatenate(heads).astype(np.int64)
        edge_weight = np.concatenate(weights)
        flow = np.concatenate(flows)
    else:
        edge_tail = edge_head = np.empty(0, dtype=np.int64)
        edge_weight = flow = np.empty(0)

    supply = np.zeros(nv)
    supply[:n] = instance.supplies
    div = np.zeros(nv)
    np.add.at(div, edge_tail, flow)
    np.add.at(div, edge_head, -flow)
    gap = float(np.abs(div - supply).sum())
    if gap > 1e-7 * max(instance.total_mass, 1e-300):
        raise GeoTransportError(
            f"combined flow divergence off by {gap:.3e}; cannot recover a map"
        )

    forested = acyclify(nv, edge_tail, edge_head, edge_weight, flow, backend=backend)
    exact = resolve_forest_flows(
        nv, edge_tail, edge_head, np.nonzero(forested)[0], supply
    )
    point_of_vertex = np.concatenate(
        [np.arange(n), np.full(total_net, -1, dtype=np.int64)]
    )
    tmap, drift = extract_map(nv, edge_tail, edge_head, exact, supply,
                              point_of_vertex, backend=backend)
    return tmap, drift
