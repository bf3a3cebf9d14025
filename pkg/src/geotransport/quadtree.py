"""Quadtree construction.

Two builders share one frozen array representation: the warped quadtree
nudges its splitting hyperplanes off point moats and contracts near
degenerate clusters into recursive sub-instances; the uniform quadtree (low
spread fast path) splits every cell exactly in half and makes any
single-point cell a leaf.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import GeoTransportError
from .moats import build_moat_index

E = math.e


def effective_epsilon(eps: float, n: int) -> float:
    """Clamp to (0, 1/2], round down to a power of 1/2, floor at 1/n."""
    if not (eps > 0):
        raise GeoTransportError("epsilon must be positive")
    k = max(1, math.ceil(math.log2(1.0 / eps) - 1e-12))
    if n >= 2:
        k = min(k, int(math.floor(math.log2(n))))
    k = max(1, k)
    return 2.0 ** -k


def leaf_chain_target(n: int, eps: float) -> int:
    """Number of consecutive single-point ancestors that closes a leaf."""
    return max(1, math.ceil(2 * math.log2(max(n, 2)) + math.log2(1.0 / eps) - 1e-12))


@dataclass
class ContractionRecord:
    """One cluster replacement: members collapse to a representative.

    Indices are local to the instance being built.  The sub-instance keeps
    every member; the representative's supply there balances the others.
    """

    members: np.ndarray
    representative: int
    sub_supplies: np.ndarray
    merged_supply: float


@dataclass
class Quadtree:
    kind: str                 # "warped" or "uniform"
    lo: np.ndarray            # (m, d)
    hi: np.ndarray            # (m, d)
    level: np.ndarray         # (m,)
    parent: np.ndarray        # (m,)
    is_leaf: np.ndarray       # (m,) bool
    point_leaf: np.ndarray    # leaf cell of each surviving point
    level_cells: list         # per level: array of cell ids
    level_coords: list        # per level: int64 (m_l, d) array or list of tuples
    root_side: float
    n_original: int

    @property
    def n_cells(self) -> int:
        return len(self.level)

    @property
    def depth(self) -> int:
        return len(self.level_cells) - 1

    @property
    def dimension(self) -> int:
        return self.lo.shape[1]

    def delta_level(self, lvl: int) -> float:
        """Lower bound on (uniform: exactly) the side of a level-lvl cell."""
        if self.kind == "uniform":
            return self.root_side / (1 << lvl)
        return self.root_side / ((1 << lvl) * E)

    def side_bound_violations(self) -> list:
        """Cells whose sides leave [root/(2^l e), e root/2^l]; for tests."""
        out = []
        sides = self.hi - self.lo
        for c in range(self.n_cells):
            lvl = int(self.level[c])
            lo_b = self.root_side / ((1 << lvl) * E)
            hi_b = self.root_side * E / (1 << lvl)
            if sides[c].min() < lo_b * (1 - 1e-9) or sides[c].max() > hi_b * (1 + 1e-9):
                out.append(c)
        return out


@dataclass
class TreeBuild:
    tree: Quadtree
    alive: np.ndarray            # local point ids that survive contraction
    supplies: np.ndarray         # their final supplies
    records: list = field(default_factory=list)
    split_moves: int = 0
    midpoint_fallbacks: int = 0


def root_box(points: np.ndarray):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    side = float((hi - lo).max()) * 2.0
    if side == 0.0:
        side = 1.0
    return center - side / 2.0, side


class _Lists:
    """d doubly-linked lists over the point ids, one sorted per dimension."""

    def __init__(self, points):
        n, d = points.shape
        self.points = points
        self.nxt = np.full((d, n), -1, dtype=np.int64)
        self.prv = np.full((d, n), -1, dtype=np.int64)
        heads, tails = [], []
        for i in range(d):
            order = np.lexsort((np.arange(n), points[:, i]))
            self.nxt[i, order[:-1]] = order[1:]
            self.prv[i, order[1:]] = order[:-1]
            heads.append(int(order[0]))
            tails.append(int(order[-1]))
        self.heads = heads
        self.tails = tails

    def unlink(self, dim, p, ends):
        nxt, prv = self.nxt[dim], self.prv[dim]
        a, b = prv[p], nxt[p]
        if a >= 0:
            nxt[a] = b
        else:
            ends[dim][0] = int(b)
        if b >= 0:
            prv[b] = a
        else:
            ends[dim][1] = int(a)
        nxt[p] = -1
        prv[p] = -1

    def relink_chain(self, dim, ids):
        """Rebuild a fresh list over ids (already sorted); returns its ends."""
        nxt, prv = self.nxt[dim], self.prv[dim]
        for a, b in zip(ids[:-1], ids[1:]):
            nxt[a] = b
            prv[b] = a
        nxt[ids[-1]] = -1
        prv[ids[0]] = -1
        return [int(ids[0]), int(ids[-1])]

    def collect(self, dim, head):
        out = []
        p = head
        while p != -1:
            out.append(int(p))
            p = int(self.nxt[dim][p])
        return out


def _split_fragment(lists, ends, size, dim, cut, points):
    """Walk the dim list from both ends simultaneously, one step a side.

    A walker crossing the cut means its side is fully scanned; that side is
    the one peeled off.  Returns (moved ids sorted by dim, moved_low); moved
    is empty when the cut does not separate the fragment.
    """
    nxt, prv = lists.nxt[dim], lists.prv[dim]
    lo_walk, hi_walk = ends[dim]
    low, high = [], []
    remaining = size
    while True:
        if remaining == 0:
            moved_low = len(low) <= len(high)
            break
        if points[lo_walk, dim] < cut:
            low.append(int(lo_walk))
            remaining -= 1
            lo_walk = int(nxt[lo_walk])
        else:
            moved_low = True
            break
        if remaining == 0:
            moved_low = len(low) <= len(high)
            break
        if points[hi_walk, dim] >= cut:
            high.append(int(hi_walk))
            remaining -= 1
            hi_walk = int(prv[hi_walk])
        else:
            moved_low = False
            break
    if moved_low:
        return low, True
    high.reverse()
    return high, False


def build_warped_quadtree(points: np.ndarray, supplies: np.ndarray, eps: float) -> TreeBuild:
    """Build the moat-avoiding quadtree, contracting tight clusters.

    Supplies are copied and mutated by contractions; each contraction is
    reported as a ContractionRecord so the driver can queue the sub-instance.
    """
    points = np.asarray(points, dtype=np.float64)
    mu = np.asarray(supplies, dtype=np.float64).copy()
    n, d = points.shape
    if n < 1:
        raise GeoTransportError("cannot build a tree over an empty point set")
    chain_target = leaf_chain_target(n, eps)
    moats = build_moat_index(points)
    lists = _Lists(points)
    alive = np.ones(n, dtype=bool)
    records = []

    corner, side = root_box(points)
    cells_lo = [corner.copy()]
    cells_hi = [corner + side]
    cells_level = [0]
    cells_parent = [-1]
    cells_leaf = [False]
    cells_grid = [tuple([0] * d)]
    point_leaf = np.full(n, -1, dtype=np.int64)
    split_moves = 0
    fallbacks = 0

    root_ends = [[lists.heads[i], lists.tails[i]] for i in range(d)]
    queue = deque([(0, root_ends, n, 1 if n == 1 else 0)])
    level_guard = 64 * (chain_target + int(4 * math.log2(n + 1)) + 8)

    while queue:
        cid, ends, size, chain = queue.popleft()
        lvl = cells_level[cid]
        if lvl > level_guard:
            raise GeoTransportError("quadtree descent exceeded the depth guard")
        if size == 1 and (chain >= chain_target or chain == lvl + 1):
            cells_leaf[cid] = True
            point_leaf[ends[0][0]] = cid
            continue
        if size >= 2:
            # contraction check on the minimum bounding hypercube of the cell
            ext = 0.0
            for i in range(d):
                ext = max(ext, points[ends[i][1], i] - points[ends[i][0], i])
            delta_c = min(
                cells_hi[cid][i] - cells_lo[cid][i] for i in range(d)
            )
            if ext < delta_c / n**4:
                members = lists.collect(0, ends[0][0])
                rep = min(members, key=lambda p: tuple(points[p]))
                sub_mu = mu[members].copy()
                rep_pos = members.index(rep)
                sub_mu[rep_pos] = -(np.sum(sub_mu) - sub_mu[rep_pos])
                merged = float(np.sum(mu[members]))
                records.append(
                    ContractionRecord(
                        members=np.array(members, dtype=np.int64),
                        representative=rep,
                        sub_supplies=sub_mu,
                        merged_supply=merged,
                    )
                )
                mu[rep] = merged
                for p in members:
                    if p != rep:
                        alive[p] = False
                        for i in range(d):
                            lists.unlink(i, p, ends)
                size = 1

        # choose the d splitting hyperplanes
        cuts = np.empty(d)
        for i in range(d):
            lo_i = cells_lo[cid][i]
            hi_i = cells_hi[cid][i]
            mid = (lo_i + hi_i) / 2.0
            lam = (hi_i - lo_i) / (2.0 * n * n)
            placed = moats.query_placement(i, mid, lam)
            x = placed.coordinate
            if not (lo_i < x < hi_i):
                x = mid
                fallbacks += 1
            cuts[i] = x

        # partition the points, peeling the less populated side per dimension
        fragments = [(ends, size, 0)]
        for i in range(d):
            new_fragments = []
            for f_ends, f_size, bits in fragments:
                moved, moved_low = _split_fragment(
                    lists, f_ends, f_size, i, cuts[i], points
                )
                if len(moved) == 0:
                    # empty moved side: the whole fragment sits on the other
                    static_bits = bits | ((1 << i) if moved_low else 0)
                    new_fragments.append((f_ends, f_size, static_bits))
                    continue
                if len(moved) == f_size:
                    static_bits = bits | ((0 if moved_low else 1) << i)
                    new_fragments.append((f_ends, f_size, static_bits))
                    continue
                split_moves += len(moved)
                kept_bits = bits | ((1 << i) if moved_low else 0)
                moved_bits = bits | (0 if moved_low else (1 << i))
                moved_ends = [None] * d
                for j in range(d):
                    for p in moved:
                        lists.unlink(j, p, f_ends)
                    if j == i:
                        chain_ids = moved
                    else:
                        chain_ids = sorted(moved, key=lambda p: (points[p, j], p))
                    moved_ends[j] = lists.relink_chain(j, chain_ids)
                new_fragments.append((f_ends, f_size - len(moved), kept_bits))
                new_fragments.append((moved_ends, len(moved), moved_bits))
            fragments = new_fragments

        parent_grid = cells_grid[cid]
        for f_ends, f_size, bits in sorted(fragments, key=lambda t: t[2]):
            child = len(cells_level)
            lo_c = np.array(cells_lo[cid])
            hi_c = np.array(cells_hi[cid])
            grid = []
            for i in range(d):
                if bits & (1 << i):
                    lo_c[i] = cuts[i]
                    grid.append(2 * parent_grid[i] + 1)
                else:
                    hi_c[i] = cuts[i]
                    grid.append(2 * parent_grid[i])
            cells_lo.append(lo_c)
            cells_hi.append(hi_c)
            cells_level.append(lvl + 1)
            cells_parent.append(cid)
            cells_leaf.append(False)
            cells_grid.append(tuple(grid))
            queue.append((child, f_ends, f_size, chain + 1 if f_size == 1 else 0))

    tree = _freeze(
        "warped", cells_lo, cells_hi, cells_level, cells_parent, cells_leaf,
        cells_grid, side, n, point_leaf, alive,
    )
    return TreeBuild(
        tree=tree,
        alive=np.nonzero(alive)[0],
        supplies=mu[alive],
        records=records,
        split_moves=split_moves,
        midpoint_fallbacks=fallbacks,
    )


def _freeze(kind, lo, hi, level, parent, leaf, grids, root_side, n_original,
            point_leaf, alive):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    level = np.asarray(level, dtype=np.int64)
    parent = np.asarray(parent, dtype=np.int64)
    leaf = np.asarray(leaf, dtype=bool)
    depth = int(level.max())
    level_cells, level_coords = [], []
    for lvl in range(depth + 1):
        ids = np.nonzero(level == lvl)[0]
        level_cells.append(ids)
        coords = [grids[c] for c in ids]
        if not coords or max(max(abs(int(x)) for x in g) for g in coords) < (1 << 62):
            level_coords.append(np.array(coords, dtype=np.int64).reshape(len(coords), -1))
        else:
            level_coords.append(coords)
    survivors = np.nonzero(alive)[0]
    return Quadtree(
        kind=kind,
        lo=lo,
        hi=hi,
        level=level,
        parent=parent,
        is_leaf=leaf,
        point_leaf=point_leaf[survivors],
        level_cells=level_cells,
        level_coords=level_coords,
        root_side=float(root_side),
        n_original=n_original,
    )


def build_uniform_quadtree(points: np.ndarray, eps: float = 0.5) -> Quadtree:
    """Standard quadtree: equal cells per level, no moats, no contractions.

    A cell becomes a leaf once it has held a single point for the same
    lg(n^2/eps) consecutive levels the warped tree uses; without that chain
    the pendant point edges are a constant fraction of nearest-neighbor
    distances and the spanner loses its (1+eps) stretch.
    Level-synchronous and fully vectorized; per-dimension grid coordinates
    switch to exact Python integers if they outgrow int64.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    chain_target = leaf_chain_target(n, eps)
    corner, side = root_box(points)

    g_lo = [corner.reshape(1, d).copy()]
    g_hi = [(corner + side).reshape(1, d)]
    g_level = [np.zeros(1, dtype=np.int64)]
    g_parent = [np.full(1, -1, dtype=np.int64)]
    g_leaf = [np.array([n == 1])]
    level_coords = [np.zeros((1, d), dtype=np.int64)]
    point_leaf = np.full(n, -1, dtype=np.int64)
    if n == 1:
        point_leaf[0] = 0
        return _finish_uniform(g_lo, g_hi, g_level, g_parent, g_leaf,
                               level_coords, side, n, point_leaf)

    active = np.arange(n)
    pcell = np.zeros(n, dtype=np.int64)          # local index in current level
    chain = np.zeros(n, dtype=np.int64)          # consecutive levels alone
    cur_lo, cur_hi = g_lo[0], g_hi[0]
    cur_ids = np.zeros(1, dtype=np.int64)
    cur_grid = level_coords[0]
    total = 1
    lvl = 0
    powers = 1 << np.arange(d, dtype=np.int64)
    while len(active):
        lvl += 1
        if lvl > 4096:
            raise GeoTransportError("uniform quadtree descent exceeded depth guard")
        centers = (cur_lo[pcell] + cur_hi[pcell]) / 2.0
        bits = (points[active] >= centers).astype(np.int64)
        key = pcell * (1 << d) + bits @ powers
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        loc_parent = (uniq >> d).astype(np.int64)
        bmask = (uniq & ((1 << d) - 1)).astype(np.int64)
        bmat = ((bmask[:, None] >> np.arange(d)) & 1).astype(bool)
        plo, phi = cur_lo[loc_parent], cur_hi[loc_parent]
        mid = (plo + phi) / 2.0
        child_lo = np.where(bmat, mid, plo)
        child_hi = np.where(bmat, phi, mid)
        child_grid = _double_coords(cur_grid, loc_parent, bmat)
        nc = len(uniq)
        child_ids = np.arange(total, total + nc, dtype=np.int64)
        chain = np.where(counts[inv] == 1, chain + 1, 0)
        leaf_pt = chain >= chain_target
        leaf_mask = np.zeros(nc, dtype=bool)
        leaf_mask[inv[leaf_pt]] = True
        g_lo.append(child_lo)
        g_hi.append(child_hi)
        g_level.append(np.full(nc, lvl, dtype=np.int64))
        g_parent.append(cur_ids[loc_parent])
        g_leaf.append(leaf_mask)
        level_coords.append(child_grid)
        point_leaf[active[leaf_pt]] = child_ids[inv[leaf_pt]]
        active = active[~leaf_pt]
        pcell = inv[~leaf_pt]
        chain = chain[~leaf_pt]
        cur_lo, cur_hi, cur_ids, cur_grid = child_lo, child_hi, child_ids, child_grid
        total += nc

    return _finish_uniform(g_lo, g_hi, g_level, g_parent, g_leaf,
                           level_coords, side, n, point_leaf)


def _double_coords(cur_grid, loc_parent, bmat):
    bits = bmat.astype(np.int64)
    if isinstance(cur_grid, np.ndarray):
        if len(cur_grid) == 0 or np.abs(cur_grid).max() < (1 << 61):
            return 2 * cur_grid[loc_parent] + bits
        cur_grid = [tuple(int(x) for x in row) for row in cur_grid]
    out = []
    for k, p in enumerate(loc_parent):
        out.append(tuple(2 * cur_grid[p][i] + int(bits[k, i]) for i in range(bits.shape[1])))
    return out


def _finish_uniform(g_lo, g_hi, g_level, g_parent, g_leaf, level_coords,
                    side, n, point_leaf):
    lo = np.concatenate(g_lo, axis=0)
    hi = np.concatenate(g_hi, axis=0)
    level = np.concatenate(g_level)
    parent = np.concatenate(g_parent)
    leaf = np.concatenate(g_leaf)
    level_cells = []
    start = 0
    for lvl_arr in g_level:
        level_cells.append(np.arange(start, start + len(lvl_arr), dtype=np.int64))
        start += len(lvl_arr)
    return Quadtree(
        kind="uniform",
        lo=lo,
        hi=hi,
        level=level,
        parent=parent,
        is_leaf=leaf,
        point_leaf=point_leaf,
        level_cells=level_cells,
        level_coords=level_coords,
        root_side=float(side),
        n_original=n,
    )
