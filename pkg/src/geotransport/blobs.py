"""Per-level blobs, legal diagonal shifts, and containment probabilities.

A blob at level l is a maximal group of net points that no legal diagonal
shift of the level-l grid can separate; as the scalar shift sweeps its
range each dimension is crossed at most once, so a blob can land in at most
d+1 cells.  The measure of shifts putting it in each candidate cell yields
the containment probabilities consumed by the preconditioner and the
greedy router.

Shift model: one scalar t in [0, Delta_l) along the all-ones diagonal; the
line lattice is anchored per blob at its home cell's faces.  Only real cell
faces forbid shifts or move a blob between cells, hence candidate
coordinates differ from the home coordinate by at most one per dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GeoTransportError
from .quadtree import Quadtree


@dataclass
class LegalShiftSet:
    """Legal shifts at one level: per-dimension interval sets plus their
    intersection, with prefix sums for logarithmic measure queries."""

    delta: float
    dim_intervals: list     # per dim: (k_i, 2) sorted disjoint intervals
    dim_prefix: list        # per dim: running total of interval lengths
    intervals: np.ndarray   # intersection over dimensions
    prefix: np.ndarray
    degraded: bool = False  # moat guard reset this level to "all shifts legal"

    @property
    def measure(self) -> float:
        return float(self.prefix[-1]) if len(self.prefix) else 0.0

    def measure_dim(self, dim: int, a: float, b: float) -> float:
        return _interval_measure(self.dim_intervals[dim], self.dim_prefix[dim], a, b)

    def measure_in(self, a: float, b: float) -> float:
        return _interval_measure(self.intervals, self.prefix, a, b)


def _interval_measure(intervals, prefix, a, b):
    if b <= a or len(intervals) == 0:
        return 0.0
    if len(intervals) == 1:
        lo0 = intervals[0, 0]
        hi0 = intervals[0, 1]
        return max(0.0, min(b, hi0) - max(a, lo0))
    lo = intervals[:, 0]
    hi = intervals[:, 1]

    def cum(x):
        k = int(np.searchsorted(lo, x, side="right")) - 1
        if k < 0:
            return 0.0
        base = prefix[k] - (hi[k] - lo[k])
        return float(base + min(max(x - lo[k], 0.0), hi[k] - lo[k]))

    return cum(b) - cum(a)


def _subtract_intervals(delta, forbidden):
    """[0, delta) minus the union of open forbidden (lo, hi) pairs."""
    if not forbidden:
        return np.array([[0.0, delta]])
    forbidden = sorted((max(0.0, lo), min(delta, hi)) for lo, hi in forbidden if hi > lo)
    out = []
    cursor = 0.0
    for lo, hi in forbidden:
        if hi <= cursor:
            continue
        if lo > cursor:
            out.append((cursor, lo))
        cursor = max(cursor, hi)
        if cursor >= delta:
            break
    if cursor < delta:
        out.append((cursor, delta))
    return np.array(out) if out else np.empty((0, 2))


def _intersect_two(a, b):
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            out.append((lo, hi))
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return np.array(out) if out else np.empty((0, 2))


def _with_prefix(intervals):
    if len(intervals) == 0:
        return intervals.reshape(0, 2), np.empty(0)
    return intervals, np.cumsum(intervals[:, 1] - intervals[:, 0])


def _full_set(delta, d):
    full = np.array([[0.0, delta]])
    return LegalShiftSet(
        delta=delta,
        dim_intervals=[full.copy() for _ in range(d)],
        dim_prefix=[np.array([delta]) for _ in range(d)],
        intervals=full.copy(),
        prefix=np.array([delta]),
    )


@dataclass
class BlobForest:
    tree: Quadtree
    node_level: np.ndarray       # (N,)
    node_parent: np.ndarray      # (N,) node id at the next coarser level
    node_home: np.ndarray        # (N,) cell id at the node's level
    box_lo: np.ndarray           # (N, d) extended bounding boxes
    box_hi: np.ndarray
    entry_ptr: np.ndarray        # CSR over nodes: cells entering at this node
    entry_cell: np.ndarray
    cand_ptr: np.ndarray         # CSR over nodes: resolved candidate cells
    cand_cell: np.ndarray
    cand_prob: np.ndarray
    cell_entry_node: np.ndarray  # per cell: node it enters (-1 for the root)
    level_nodes: list            # per level: node ids
    shifts: list                 # per level: LegalShiftSet

    @property
    def n_nodes(self) -> int:
        return len(self.node_level)

    def delta(self, level: int) -> float:
        return self.shifts[level].delta

    def shift_measure(self, level: int, dim: int, a: float, b: float) -> float:
        s = self.shifts[level]
        if not (0 <= a <= b <= s.delta * (1 + 1e-12)):
            raise GeoTransportError("shift query outside [0, Delta_l]")
        return s.measure_dim(dim, a, b)

    def legal_measure(self, level: int) -> float:
        return self.shifts[level].measure

    def candidates(self, node: int):
        lo, hi = self.cand_ptr[node], self.cand_ptr[node + 1]
        return self.cand_cell[lo:hi], self.cand_prob[lo:hi]

    def containment_probability(self, level: int, node: int, cell: int) -> float:
        if self.node_level[node] != level:
            raise GeoTransportError("node does not live at the queried level")
        cells, probs = self.candidates(node)
        hits = np.nonzero(cells == cell)[0]
        if len(hits) == 0:
            raise GeoTransportError("cell is not a candidate of this blob")
        return float(probs[hits].sum())

    def blob_of(self, cell: int, level: int) -> int:
        """Node containing the net point of `cell` at `level`."""
        if level >= self.tree.level[cell]:
            raise GeoTransportError("blob membership is defined below the cell's level")
        node = int(self.cell_entry_node[cell])
        while node >= 0 and self.node_level[node] > level:
            node = int(self.node_parent[node])
        if node < 0 or self.node_level[node] != level:
            raise GeoTransportError("no blob found at the queried level")
        return node

    def members(self, node: int):
        """All cells whose net points belong to the blob (entry closure)."""
        out = []
        stack = [node]
        children = self._children_index()
        while stack:
            nd = stack.pop()
            lo, hi = self.entry_ptr[nd], self.entry_ptr[nd + 1]
            out.extend(int(c) for c in self.entry_cell[lo:hi])
            stack.extend(children.get(nd, ()))
        return sorted(out)

    def _children_index(self):
        if not hasattr(self, "_children_cache"):
            idx = {}
            for nd in range(self.n_nodes):
                par = int(self.node_parent[nd])
                if par >= 0:
                    idx.setdefault(par, []).append(nd)
            self._children_cache = idx
        return self._children_cache


def build_blob_forest(tree: Quadtree, net_positions: np.ndarray) -> BlobForest:
    if tree.kind == "uniform":
        return _build_uniform(tree, net_positions)
    return _build_warped(tree, net_positions)


# --------------------------------------------------------------------------
# coordinate lookup helpers
# --------------------------------------------------------------------------

def _coord_maps(tree):
    """Per level: dict coord-tuple -> cell id, and cell id -> coord tuple."""
    lookup, coord_of = [], {}
    for lvl in range(tree.depth + 1):
        coords = tree.level_coords[lvl]
        ids = tree.level_cells[lvl]
        if isinstance(coords, np.ndarray):
            table = {tuple(int(x) for x in coords[k]): int(ids[k]) for k in range(len(ids))}
        else:
            table = {tuple(c): int(ids[k]) for k, c in enumerate(coords)}
        lookup.append(table)
        for coord, cid in table.items():
            coord_of[cid] = coord
    return lookup, coord_of


# --------------------------------------------------------------------------
# warped construction: bottom-up box merging, real moats
# --------------------------------------------------------------------------

def _build_warped(tree: Quadtree, centers: np.ndarray) -> BlobForest:
    n = tree.n_original
    d = tree.dimension
    depth = tree.depth

    node_level, node_parent, node_home = [], [], []
    box_lo_list, box_hi_list = [], []
    entries = []
    level_nodes = [[] for _ in range(depth + 1)]
    cell_entry_node = np.full(tree.n_cells, -1, dtype=np.int64)
    shifts = [None] * (depth + 1)
    shifts[depth] = _full_set(tree.delta_level(depth), d)

    live = []   # (raw_lo, raw_hi, node_id, home_cell)
    for lvl in range(depth - 1, -1, -1):
        delta = tree.delta_level(lvl)
        ext = delta / (n * n)
        pool = list(live)
        for c in tree.level_cells[lvl + 1]:
            pool.append((centers[c].copy(), centers[c].copy(), -1, int(c)))
        groups = _merge_groups(pool, ext, d)
        live = []
        for group in groups:
            raw_lo = np.min([g[0] for g in group], axis=0)
            raw_hi = np.max([g[1] for g in group], axis=0)
            home = int(tree.parent[min(g[3] for g in group)])
            nid = len(node_level)
            node_level.append(lvl)
            node_parent.append(-1)
            node_home.append(home)
            box_lo_list.append(raw_lo - ext)
            box_hi_list.append(raw_hi + ext)
            entry = []
            for _, _, child_nid, payload in group:
                if child_nid < 0:
                    entry.append(payload)
                    cell_entry_node[payload] = nid
                else:
                    node_parent[child_nid] = nid
            entries.append(sorted(entry))
            level_nodes[lvl].append(nid)
            live.append((raw_lo, raw_hi, nid, home))
        shifts[lvl] = _legal_shifts(
            tree, delta,
            [(box_lo_list[nid], box_hi_list[nid], node_home[nid])
             for (_, _, nid, _) in live],
        )

    total = len(node_level)
    node_level = np.array(node_level, dtype=np.int64).reshape(-1)
    node_parent = np.array(node_parent, dtype=np.int64).reshape(-1)
    node_home = np.array(node_home, dtype=np.int64).reshape(-1)
    box_lo = np.array(box_lo_list).reshape(total, d) if total else np.empty((0, d))
    box_hi = np.array(box_hi_list).reshape(total, d) if total else np.empty((0, d))
    entry_ptr = np.zeros(total + 1, dtype=np.int64)
    for nid, e in enumerate(entries):
        entry_ptr[nid + 1] = entry_ptr[nid] + len(e)
    entry_cell = np.array([c for e in entries for c in e], dtype=np.int64)

    lookup, coord_of = _coord_maps(tree)
    cand_ptr = np.zeros(total + 1, dtype=np.int64)
    cells_out, probs_out = [], []
    for nid in range(total):
        lvl = int(node_level[nid])
        items = _sweep_candidates(
            tree, shifts[lvl], lookup[lvl], coord_of,
            int(node_home[nid]), box_lo[nid], box_hi[nid],
        )
        cand_ptr[nid + 1] = cand_ptr[nid] + len(items)
        for cell, p in items:
            cells_out.append(cell)
            probs_out.append(p)

    return BlobForest(
        tree=tree,
        node_level=node_level,
        node_parent=node_parent,
        node_home=node_home,
        box_lo=box_lo,
        box_hi=box_hi,
        entry_ptr=entry_ptr,
        entry_cell=entry_cell,
        cand_ptr=cand_ptr,
        cand_cell=np.array(cells_out, dtype=np.int64),
        cand_prob=np.array(probs_out, dtype=np.float64),
        cell_entry_node=cell_entry_node,
        level_nodes=[np.array(x, dtype=np.int64) for x in level_nodes],
        shifts=shifts,
    )


def _merge_groups(pool, ext, d):
    """Recursive per-dimension grouping by extended-box overlap."""
    if not pool:
        return []

    def recurse(items, dim):
        if dim == d:
            return [items]
        items = sorted(items, key=lambda g: (g[0][dim], g[3]))
        groups = []
        cur = [items[0]]
        cur_hi = items[0][1][dim] + ext
        for it in items[1:]:
            if it[0][dim] - ext <= cur_hi:
                cur.append(it)
                cur_hi = max(cur_hi, it[1][dim] + ext)
            else:
                groups.append(cur)
                cur = [it]
                cur_hi = it[1][dim] + ext
        groups.append(cur)
        out = []
        for g in groups:
            out.extend(recurse(g, dim + 1))
        return out

    return recurse(pool, 0)


def _legal_shifts(tree, delta, boxes):
    """Forbidden arcs per dimension from each blob box against its home faces."""
    d = tree.dimension
    forb = [[] for _ in range(d)]
    for lo, hi, home in boxes:
        for i in range(d):
            face_lo = tree.lo[home][i]
            face_hi = tree.hi[home][i]
            a = lo[i] - face_lo
            if a < delta:
                forb[i].append((a, min(hi[i] - face_lo, delta)))
            poke = hi[i] - face_hi
            if poke > 0:
                forb[i].append((0.0, min(poke, delta)))
    dim_intervals, dim_prefix = [], []
    for i in range(d):
        ints, pref = _with_prefix(_subtract_intervals(delta, forb[i]))
        dim_intervals.append(ints)
        dim_prefix.append(pref)
    inter = dim_intervals[0]
    for i in range(1, d):
        inter = _intersect_two(inter, dim_intervals[i])
    inter, pref = _with_prefix(inter)
    total = float(pref[-1]) if len(pref) else 0.0
    if total < delta / 2:
        out = _full_set(delta, d)
        out.degraded = True
        return out
    return LegalShiftSet(
        delta=delta,
        dim_intervals=dim_intervals,
        dim_prefix=dim_prefix,
        intervals=inter,
        prefix=pref,
    )


def _sweep_candidates(tree, shift_set, level_lookup, coord_of, home, lo, hi):
    """Sweep t across [0, Delta): each dimension crosses its home left face
    at cap_i = box_lo_i - face_lo_i (never, if that exceeds Delta).  Returns
    [(cell, probability)] with softlinked coordinates folded into the home."""
    d = tree.dimension
    delta = shift_set.delta
    home_coord = coord_of[home]
    home_lo = tree.lo[home]
    caps = []
    for i in range(d):
        a = float(lo[i]) - float(home_lo[i])
        # boxes poking left of the home face are crossed at every legal shift
        caps.append(delta if a >= delta else (a if a > 0.0 else 0.0))
    bps = sorted({0.0, delta, *[c for c in caps if c < delta]})
    resolved = {}
    for k in range(len(bps) - 1):
        lo_t, hi_t = bps[k], bps[k + 1]
        measure = shift_set.measure_in(lo_t, hi_t)
        if measure <= 0:
            continue
        target = tuple(
            home_coord[i] - (1 if caps[i] < delta and caps[i] <= lo_t else 0)
            for i in range(d)
        )
        cell = level_lookup.get(target, home)
        resolved[cell] = resolved.get(cell, 0.0) + measure
    total = sum(resolved.values())
    if total <= 0:
        return [(home, 1.0)]
    return [(cell, m / total) for cell, m in sorted(resolved.items())]


# --------------------------------------------------------------------------
# uniform construction: singleton blobs, every shift legal (vectorized)
# --------------------------------------------------------------------------

def _build_uniform(tree: Quadtree, centers: np.ndarray) -> BlobForest:
    d = tree.dimension
    depth = tree.depth
    cell_level = tree.level
    m = tree.n_cells

    # one node per (cell, level) pair with level < cell level, level-major
    per_level = {}
    anc_now = np.arange(m, dtype=np.int64)
    total = 0
    for lvl in range(depth - 1, -1, -1):
        sel = cell_level > lvl
        anc_now[sel] = tree.parent[anc_now[sel]]
        cells_here = np.nonzero(sel)[0].astype(np.int64)
        per_level[lvl] = (cells_here, anc_now[sel].copy())
        total += len(cells_here)

    node_level = np.empty(total, dtype=np.int64)
    node_home = np.empty(total, dtype=np.int64)
    node_cell = np.empty(total, dtype=np.int64)
    node_parent = np.full(total, -1, dtype=np.int64)
    level_nodes = [np.empty(0, dtype=np.int64) for _ in range(depth + 1)]
    slice_of = {}
    start = 0
    for lvl in range(depth - 1, -1, -1):
        cells_here, homes = per_level[lvl]
        k = len(cells_here)
        ids = np.arange(start, start + k, dtype=np.int64)
        node_level[ids] = lvl
        node_home[ids] = homes
        node_cell[ids] = cells_here
        slice_of[lvl] = (start, cells_here)
        if lvl < depth - 1:
            prev_start, prev_cells = slice_of[lvl + 1]
            pos = np.searchsorted(cells_here, prev_cells)
            node_parent[prev_start + np.arange(len(prev_cells))] = start + pos
        level_nodes[lvl] = ids
        start += k

    cell_entry_node = np.full(m, -1, dtype=np.int64)
    entry_counts = np.zeros(total, dtype=np.int64)
    for lvl in range(depth - 1, -1, -1):
        s0, cells_here = slice_of[lvl]
        entering = np.nonzero(cell_level[cells_here] == lvl + 1)[0]
        ids = s0 + entering
        entry_counts[ids] = 1
        cell_entry_node[cells_here[entering]] = ids
    entry_ptr = np.zeros(total + 1, dtype=np.int64)
    entry_ptr[1:] = np.cumsum(entry_counts)
    entry_cell = np.empty(int(entry_ptr[-1]), dtype=np.int64)
    for lvl in range(depth - 1, -1, -1):
        s0, cells_here = slice_of[lvl]
        entering = np.nonzero(cell_level[cells_here] == lvl + 1)[0]
        ids = s0 + entering
        entry_cell[entry_ptr[ids]] = cells_here[entering]

    cand_ptr, cand_cell, cand_prob = _uniform_candidates(
        tree, centers, node_cell, node_home, slice_of, depth, total
    )

    shifts = [_full_set(tree.delta_level(lvl), d) for lvl in range(depth + 1)]
    boxes = centers[node_cell] if total else np.empty((0, d))
    return BlobForest(
        tree=tree,
        node_level=node_level,
        node_parent=node_parent,
        node_home=node_home,
        box_lo=boxes.copy(),
        box_hi=boxes.copy(),
        entry_ptr=entry_ptr,
        entry_cell=entry_cell,
        cand_ptr=cand_ptr,
        cand_cell=cand_cell,
        cand_prob=cand_prob,
        cell_entry_node=cell_entry_node,
        level_nodes=level_nodes,
        shifts=shifts,
    )


def _uniform_candidates(tree, centers, node_cell, node_home, slice_of, depth, total):
    d = tree.dimension
    cand_counts = np.zeros(total, dtype=np.int64)
    collected = {}
    for lvl in range(depth - 1, -1, -1):
        s0, cells_here = slice_of[lvl]
        k = len(cells_here)
        if k == 0:
            continue
        delta = tree.delta_level(lvl)
        homes = node_home[s0 : s0 + k]
        pos = centers[node_cell[s0 : s0 + k]]
        a = pos - tree.lo[homes]                       # each entry in (0, delta)
        order = np.argsort(a, axis=1, kind="stable")
        a_sorted = np.take_along_axis(a, order, axis=1)
        bp = np.concatenate(
            [np.zeros((k, 1)), a_sorted, np.full((k, 1), delta)], axis=1
        )
        probs = np.diff(bp, axis=1) / delta            # (k, d+1)
        index = _coord_index(tree, lvl)
        coords = tree.level_coords[lvl]
        ids_lvl = tree.level_cells[lvl]
        home_row = {int(c): j for j, c in enumerate(ids_lvl)}
        home_pos = np.array([home_row[int(h)] for h in homes], dtype=np.int64)
        crossed = np.zeros((k, d), dtype=np.int64)
        res_cells = np.empty((k, d + 1), dtype=np.int64)
        for arc in range(d + 1):
            if arc > 0:
                crossed[np.arange(k), order[:, arc - 1]] = 1
            if isinstance(coords, np.ndarray):
                found = _lookup_coords(index, coords[home_pos] - crossed)
            else:
                found = np.empty(k, dtype=np.int64)
                for j in range(k):
                    t = tuple(
                        int(coords[home_pos[j]][i]) - int(crossed[j, i])
                        for i in range(d)
                    )
                    found[j] = index[1].get(t, -1)
            res_cells[:, arc] = np.where(found >= 0, found, homes)
        for j in range(k):
            agg = {}
            for arc in range(d + 1):
                p = probs[j, arc]
                if p <= 0:
                    continue
                cell = int(res_cells[j, arc])
                agg[cell] = agg.get(cell, 0.0) + p
            items = sorted(agg.items())
            cand_counts[s0 + j] = len(items)
            collected[s0 + j] = items
    cand_ptr = np.zeros(total + 1, dtype=np.int64)
    cand_ptr[1:] = np.cumsum(cand_counts)
    cand_cell = np.empty(int(cand_ptr[-1]), dtype=np.int64)
    cand_prob = np.empty(int(cand_ptr[-1]), dtype=np.float64)
    for nid, items in collected.items():
        base = int(cand_ptr[nid])
        for off, (cell, p) in enumerate(items):
            cand_cell[base + off] = cell
            cand_prob[base + off] = p
    return cand_ptr, cand_cell, cand_prob


def _coord_index(tree, lvl):
    coords = tree.level_coords[lvl]
    ids = tree.level_cells[lvl]
    if isinstance(coords, np.ndarray) and len(coords):
        span = coords.max(axis=0) - coords.min(axis=0) + 3
        if np.log2(span.astype(np.float64)).sum() < 62:
            lo = coords.min(axis=0) - 1
            mults = np.cumprod(np.concatenate([[1], span[::-1][:-1]]))[::-1].astype(np.int64)
            keys = (coords - lo) @ mults
            order = np.argsort(keys, kind="stable")
            return ("packed", (keys[order], ids[order], lo, mults, span))
        coords = [tuple(int(x) for x in c) for c in coords]
        return ("dict", {tuple(c): int(ids[k]) for k, c in enumerate(coords)})
    return ("dict", {tuple(c): int(ids[k]) for k, c in enumerate(coords)})


def _lookup_coords(index, targets):
    kind, data = index
    if kind == "packed":
        keys, ids, lo, mults, span = data
        shifted = targets - lo
        valid = np.all((shifted >= 0) & (shifted < span), axis=1)
        tkeys = shifted @ mults
        pos = np.searchsorted(keys, tkeys)
        pos_c = np.minimum(pos, len(keys) - 1)
        hit = valid & (pos < len(keys)) & (keys[pos_c] == tkeys)
        out = np.full(len(targets), -1, dtype=np.int64)
        out[hit] = ids[pos_c[hit]]
        return out
    out = np.empty(len(targets), dtype=np.int64)
    for j, t in enumerate(targets):
        out[j] = data.get(tuple(int(x) for x in t), -1)
    return out
