"""Sparse spanner over a quadtree: one net point per cell, pendant point
edges, parent edges, and same-level neighbor edges within 1/(2 eps) grid
steps per dimension.  Poses the min-cost flow instance the solver consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GeoTransportError
from .quadtree import Quadtree

_PACK = np.int64(1) << np.int64(32)


@dataclass
class SpannerGraph:
    points: np.ndarray          # (n_pts, d) surviving instance points
    tree: Quadtree
    eps: float
    net_positions: np.ndarray   # (m, d) cell centers
    edge_tail: np.ndarray
    edge_head: np.ndarray
    edge_weight: np.ndarray
    n_point_edges: int          # pendant edges occupy [0, n_point_edges)
    parent_edge: np.ndarray     # per cell: edge id to its parent (-1 at root)
    level_neighbor_keys: list   # per level: sorted packed (cellA, cellB) keys
    level_neighbor_edges: list  # per level: edge ids aligned with the keys

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_vertices(self) -> int:
        return self.n_points + self.tree.n_cells

    @property
    def n_edges(self) -> int:
        return len(self.edge_tail)

    def net_vertex(self, cell) -> int:
        return self.n_points + cell

    def vertex_position(self, v: int) -> np.ndarray:
        if v < self.n_points:
            return self.points[v]
        return self.net_positions[v - self.n_points]

    def neighbor_edge(self, level: int, cell_a: int, cell_b: int) -> int:
        """Edge id joining two same-level cells, or -1."""
        if cell_a == cell_b:
            return -1
        a, b = (cell_a, cell_b) if cell_a < cell_b else (cell_b, cell_a)
        keys = self.level_neighbor_keys[level]
        pos = np.searchsorted(keys, a * _PACK + b)
        if pos < len(keys) and keys[pos] == a * _PACK + b:
            return int(self.level_neighbor_edges[level][pos])
        return -1

    def to_edge_list(self):
        """Debug export: (tail vertex id, head vertex id, weight) triples."""
        return [
            (int(self.edge_tail[e]), int(self.edge_head[e]), float(self.edge_weight[e]))
            for e in range(self.n_edges)
        ]

    def shortest_paths_from(self, vertex_ids):
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import dijkstra

        nv = self.n_vertices
        mat = coo_matrix(
            (self.edge_weight, (self.edge_tail, self.edge_head)), shape=(nv, nv)
        ).tocsr()
        return dijkstra(mat, directed=False, indices=vertex_ids)


def build_spanner(tree: Quadtree, eps: float, points: np.ndarray) -> SpannerGraph:
    """Assemble the spanner; eps must already be effective (power of 1/2)."""
    points = np.asarray(points, dtype=np.float64)
    n_pts = len(points)
    m = tree.n_cells
    if np.any(tree.point_leaf < 0):
        raise GeoTransportError("every surviving point needs a leaf cell")
    centers = (tree.lo + tree.hi) / 2.0
    radius = int(round(1.0 / (2.0 * eps)))
    if radius < 1:
        raise GeoTransportError("epsilon too large: neighbor radius vanished")

    tails, heads, weights = [], [], []

    # pendant edges: point -> net point of its leaf (point ids come first)
    leaf_net = tree.point_leaf + n_pts
    tails.append(np.arange(n_pts, dtype=np.int64))
    heads.append(leaf_net.astype(np.int64))
    weights.append(np.linalg.norm(points - centers[tree.point_leaf], axis=1))
    n_point_edges = n_pts
    next_id = n_pts

    # parent edges, ordered by child cell id (parents precede children)
    child = np.nonzero(tree.parent >= 0)[0]
    parent_edge = np.full(m, -1, dtype=np.int64)
    parent_edge[child] = next_id + np.arange(len(child))
    pa = tree.parent[child]
    tails.append((pa + n_pts).astype(np.int64))
    heads.append((child + n_pts).astype(np.int64))
    weights.append(np.linalg.norm(centers[child] - centers[pa], axis=1))
    next_id += len(child)

    level_neighbor_keys = []
    level_neighbor_edges = []
    d = tree.dimension
    offsets = _positive_offsets(d, radius)
    for lvl, ids in enumerate(tree.level_cells):
        pairs = _find_neighbors(ids, tree.level_coords[lvl], offsets, radius)
        if len(pairs) == 0:
            level_neighbor_keys.append(np.empty(0, dtype=np.int64))
            level_neighbor_edges.append(np.empty(0, dtype=np.int64))
            continue
        a, b = pairs[:, 0], pairs[:, 1]
        keys = a * _PACK + b
        order = np.argsort(keys, kind="stable")
        a, b, keys = a[order], b[order], keys[order]
        eids = next_id + np.arange(len(a))
        tails.append((a + n_pts).astype(np.int64))
        heads.append((b + n_pts).astype(np.int64))
        weights.append(np.linalg.norm(centers[a] - centers[b], axis=1))
        level_neighbor_keys.append(keys)
        level_neighbor_edges.append(eids.astype(np.int64))
        next_id += len(a)

    return SpannerGraph(
        points=points,
        tree=tree,
        eps=eps,
        net_positions=centers,
        edge_tail=np.concatenate(tails),
        edge_head=np.concatenate(heads),
        edge_weight=np.concatenate(weights),
        n_point_edges=n_point_edges,
        parent_edge=parent_edge,
        level_neighbor_keys=level_neighbor_keys,
        level_neighbor_edges=level_neighbor_edges,
    )


def _positive_offsets(d, radius):
    """Lexicographically positive offsets of the (2r+1)^d - 1 neighborhood."""
    ranges = [np.arange(-radius, radius + 1)] * d
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    out = []
    for off in grid:
        nz = np.nonzero(off)[0]
        if len(nz) and off[nz[0]] > 0:
            out.append(off)
    return np.array(out, dtype=np.int64)


def _find_neighbors(ids, coords, offsets, radius):
    """Pairs (cell_a, cell_b), a < b, within `radius` grid steps per dim."""
    n = len(ids)
    if n <= 1:
        return np.empty((0, 2), dtype=np.int64)
    if isinstance(coords, np.ndarray):
        d = coords.shape[1]
        lo = coords.min(axis=0)
        span = coords.max(axis=0) - lo + 2 * radius + 2
        if np.log2(span.astype(np.float64)).sum() < 62:
            return _find_neighbors_packed(ids, coords, offsets, radius, lo, span)
        coords = [tuple(int(x) for x in row) for row in coords]
    by_coord = {tuple(c): ids[k] for k, c in enumerate(coords)}
    pairs = []
    for k, c in enumerate(coords):
        me = ids[k]
        for off in offsets:
            other = by_coord.get(tuple(int(ci) + int(oi) for ci, oi in zip(c, off)))
            if other is not None:
                pairs.append((min(me, other), max(me, other)))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(set(pairs)), dtype=np.int64)


def _find_neighbors_packed(ids, coords, offsets, radius, lo, span):
    shifted = coords - lo + radius + 1
    mults = np.cumprod(np.concatenate([[1], span[::-1][:-1]]))[::-1].astype(np.int64)
    keys = shifted @ mults
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    sids = ids[order]
    pairs = []
    for off in offsets:
        delta = int(off @ mults)
        pos = np.searchsorted(skeys, skeys + delta)
        ok = (pos < len(skeys)) & (skeys[np.minimum(pos, len(skeys) - 1)] == skeys + delta)
        if ok.any():
            a = sids[ok]
            b = sids[pos[ok]]
            pairs.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    allp = np.concatenate(pairs, axis=0)
    return np.unique(allp, axis=0)


def pose_flow_problem(graph: SpannerGraph, supplies: np.ndarray):
    """Divergences and the pendant preroute for a contracted instance.

    Returns (b, preroute): b lives on net points only (each point's supply
    moved across its single pendant edge); preroute is the flow over the
    whole edge array realizing that move.
    """
    mu = np.asarray(supplies, dtype=np.float64)
    if mu.shape != (graph.n_points,):
        raise GeoTransportError("one supply per surviving point required")
    b = np.zeros(graph.n_vertices)
    leaf_net = graph.tree.point_leaf + graph.n_points
    np.add.at(b, leaf_net, mu)
    preroute = np.zeros(graph.n_edges)
    preroute[:graph.n_point_edges] = mu
    return b, preroute
