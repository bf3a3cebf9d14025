"""The implicit preconditioner and the oblivious greedy router.

B acts on vertex vectors: a net point's row charges its own divergence plus
the blob masses that can land in its cell, all scaled by the cell's level
length.  Applications of B A and (B A)^T run in near-linear time via one
postorder (blob sums) or preorder (ancestor sums) pass over the blob
forest.  The greedy router moves every blob's accumulated divergence one
level rootward, splitting it over the parent blob's candidate cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blobs import BlobForest
from .core import GeoTransportError, flow_divergence
from .spanner import SpannerGraph

E = math.e


def warped_constants(d: int, n: int):
    lam = 48.0 * d**1.5 * E**2 * math.log2(max(n, 2))
    kappa = 9.0 * math.sqrt(d) * E**2 * lam
    return lam, kappa, 3.0


def low_spread_constants(d: int, spread: float):
    lg = max(math.log2(max(spread, 2.0)), 1.0)
    kappa = 144.0 * d * d * lg
    lam = kappa / (6.0 * math.sqrt(d))
    return lam, kappa, 2.0


@dataclass
class Preconditioner:
    graph: SpannerGraph
    forest: BlobForest
    lam: float
    kappa: float
    denom: float
    coeff_cell: np.ndarray = field(init=False)   # Delta_level / (denom lam)
    coeff_node: np.ndarray = field(init=False)
    _entry_node_of: np.ndarray = field(init=False)
    _cand_node_of: np.ndarray = field(init=False)

    def __post_init__(self):
        tree = self.forest.tree
        deltas = np.array([tree.delta_level(l) for l in range(tree.depth + 1)])
        self.coeff_cell = deltas[tree.level] / (self.denom * self.lam)
        nl = self.forest.node_level
        self.coeff_node = (
            deltas[nl] / (self.denom * self.lam) if len(nl) else np.empty(0)
        )
        self._entry_node_of = np.repeat(
            np.arange(self.forest.n_nodes), np.diff(self.forest.entry_ptr)
        )
        self._cand_node_of = np.repeat(
            np.arange(self.forest.n_nodes), np.diff(self.forest.cand_ptr)
        )

    # -- blob aggregation passes ------------------------------------------

    def blob_sums(self, z_net: np.ndarray) -> np.ndarray:
        """Postorder: per node, the summed z over all member net points."""
        forest = self.forest
        s = np.zeros(forest.n_nodes)
        if forest.n_nodes == 0:
            return s
        np.add.at(s, self._entry_node_of, z_net[forest.entry_cell])
        for lvl in range(len(forest.level_nodes) - 1, 0, -1):
            nodes = forest.level_nodes[lvl]
            if len(nodes) == 0:
                continue
            par = forest.node_parent[nodes]
            ok = par >= 0
            if ok.any():
                np.add.at(s, par[ok], s[nodes[ok]])
        return s

    def ancestor_sums(self, w_node: np.ndarray) -> np.ndarray:
        """Preorder: per node, the sum of w over the node and its ancestors."""
        forest = self.forest
        acc = np.array(w_node, dtype=np.float64, copy=True)
        for lvl in range(1, len(forest.level_nodes)):
            nodes = forest.level_nodes[lvl]
            if len(nodes) == 0:
                continue
            par = forest.node_parent[nodes]
            ok = par >= 0
            acc[nodes[ok]] += acc[par[ok]]
        return acc

    # -- matrix actions ----------------------------------------------------

    def apply_B(self, z: np.ndarray) -> np.ndarray:
        """B z for a vertex vector z (rows and columns live on net points)."""
        graph, forest = self.graph, self.forest
        npts = graph.n_points
        z_net = z[npts:]
        out = np.zeros_like(z)
        acc = np.zeros(forest.tree.n_cells)
        if forest.n_nodes:
            s = self.blob_sums(z_net)
            np.add.at(acc, forest.cand_cell, forest.cand_prob * s[self._cand_node_of])
        out[npts:] = self.coeff_cell * (z_net + acc)
        return out

    def apply_Bt(self, z: np.ndarray) -> np.ndarray:
        graph, forest = self.graph, self.forest
        npts = graph.n_points
        z_net = z[npts:]
        out = np.zeros_like(z)
        if forest.n_nodes:
            w = np.zeros(forest.n_nodes)
            np.add.at(
                w,
                self._cand_node_of,
                forest.cand_prob * z_net[forest.cand_cell] * self.coeff_node[self._cand_node_of],
            )
            anc = self.ancestor_sums(w)
            per_cell = np.zeros(forest.tree.n_cells)
            entering = forest.cell_entry_node >= 0
            per_cell[entering] = anc[forest.cell_entry_node[entering]]
            out[npts:] = self.coeff_cell * z_net + per_cell
        else:
            out[npts:] = self.coeff_cell * z_net
        return out

    def apply_BA(self, f: np.ndarray) -> np.ndarray:
        return self.apply_B(flow_divergence(self.graph, f))

    def apply_BAt(self, z: np.ndarray) -> np.ndarray:
        w = self.apply_Bt(z)
        return w[self.graph.edge_tail] - w[self.graph.edge_head]

    # -- the oblivious greedy router ----------------------------------------

    def greedy_route(self, b: np.ndarray, scale_hint: float = 0.0) -> np.ndarray:
        """Flow with A f = b exactly (b supported on net points).

        Level by level, the mass present at each cell for each parent-level
        blob moves along the cell's parent edge and then across a neighbor
        edge to the parent blob's candidate cells.  Cost <= kappa ||B b||_1.
        `scale_hint` widens the balance guard when b is a residual of a
        larger problem.
        """
        graph, forest = self.graph, self.forest
        tree = forest.tree
        npts = graph.n_points
        scale = float(np.abs(b).sum())
        guard = 1e-9 * max(scale, scale_hint, 1e-300)
        if abs(float(b.sum())) > guard:
            raise GeoTransportError("greedy router needs balanced divergences")
        if np.abs(b[:npts]).max(initial=0.0) > guard:
            raise GeoTransportError("greedy router expects net-point divergences")
        f = np.zeros(graph.n_edges)
        if scale == 0.0 or tree.depth == 0:
            return f
        b_net = b[npts:]
        # arrivals at the current level: (cell, node at the same level, mass)
        arr_cell = np.empty(0, dtype=np.int64)
        arr_node = np.empty(0, dtype=np.int64)
        arr_mass = np.empty(0)
        for lvl in range(tree.depth, 0, -1):
            cells_here = tree.level_cells[lvl]
            entries = cells_here[b_net[cells_here] != 0.0]
            e_nodes = forest.cell_entry_node[entries]
            p_cell = np.concatenate([arr_cell, entries])
            p_node = np.concatenate(
                [forest.node_parent[arr_node] if len(arr_node) else arr_node, e_nodes]
            )
            p_mass = np.concatenate([arr_mass, b_net[entries]])
            if len(p_cell) == 0:
                arr_cell = arr_node = np.empty(0, dtype=np.int64)
                arr_mass = np.empty(0)
                continue
            # group pieces by (cell, parent-level node)
            key = p_cell * np.int64(forest.n_nodes + 1) + p_node
            uniq, inv = np.unique(key, return_inverse=True)
            mass = np.bincount(inv, weights=p_mass)
            g_cell = (uniq // np.int64(forest.n_nodes + 1)).astype(np.int64)
            g_node = (uniq % np.int64(forest.n_nodes + 1)).astype(np.int64)
            live = mass != 0.0
            g_cell, g_node, mass = g_cell[live], g_node[live], mass[live]
            if len(g_cell) == 0:
                arr_cell = arr_node = np.empty(0, dtype=np.int64)
                arr_mass = np.empty(0)
                continue
            # first leg: up the parent edge (tail is always the parent)
            pe = graph.parent_edge[g_cell]
            np.add.at(f, pe, -mass)
            parents = tree.parent[g_cell]
            # second leg: spread over the parent blob's candidates
            counts = (forest.cand_ptr[g_node + 1] - forest.cand_ptr[g_node]).astype(np.int64)
            rep = np.repeat(np.arange(len(g_node)), counts)
            idx = _csr_expand(forest.cand_ptr, g_node, counts)
            dest = forest.cand_cell[idx]
            amounts = mass[rep] * forest.cand_prob[idx]
            src = parents[rep]
            same = dest == src
            eid = np.full(len(dest), -1, dtype=np.int64)
            if (~same).any():
                eid[~same] = _neighbor_bulk(graph, lvl - 1, src[~same], dest[~same])
            # redirect any missing neighbor edge onto the parent cell itself
            missing = (~same) & (eid < 0)
            dest = np.where(missing, src, dest)
            use = (~same) & (eid >= 0)
            if use.any():
                sign = np.where(src[use] < dest[use], 1.0, -1.0)
                np.add.at(f, eid[use], sign * amounts[use])
            # aggregate the arrivals for the next level
            arr_cell = dest
            arr_node = g_node[rep]
            arr_mass = amounts
        return f


def _csr_expand(ptr, rows, counts):
    """Indices into a CSR's data for the given rows, concatenated."""
    reps = np.repeat(rows, counts)
    run_starts = np.repeat(np.cumsum(counts) - counts, counts)
    within = np.arange(len(reps), dtype=np.int64) - run_starts
    return ptr[reps] + within


def _neighbor_bulk(graph, level, cells_a, cells_b):
    a = np.minimum(cells_a, cells_b)
    b = np.maximum(cells_a, cells_b)
    keys = graph.level_neighbor_keys[level]
    if len(keys) == 0:
        return np.full(len(a), -1, dtype=np.int64)
    want = a * (np.int64(1) << np.int64(32)) + b
    pos = np.searchsorted(keys, want)
    pos_c = np.minimum(pos, len(keys) - 1)
    hit = (pos < len(keys)) & (keys[pos_c] == want)
    out = np.full(len(a), -1, dtype=np.int64)
    out[hit] = graph.level_neighbor_edges[level][pos_c[hit]]
    return out


def dense_matrices(precond: Preconditioner):
    """Materialize A and B densely; strictly for tests at tiny sizes."""
    graph, forest = precond.graph, precond.forest
    nv, ne = graph.n_vertices, graph.n_edges
    a = np.zeros((nv, ne))
    a[graph.edge_tail, np.arange(ne)] = 1.0
    a[graph.edge_head, np.arange(ne)] -= 1.0
    bmat = np.zeros((nv, nv))
    npts = graph.n_points
    for c in range(forest.tree.n_cells):
        bmat[npts + c, npts + c] = precond.coeff_cell[c]
    for nd in range(forest.n_nodes):
        cells, probs = forest.candidates(nd)
        for u in forest.members(nd):
            for cell, p in zip(cells, probs):
                bmat[npts + cell, npts + u] += precond.coeff_node[nd] * p
    return a, bmat
