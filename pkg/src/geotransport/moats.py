"""Per-dimension persistent index answering moat-avoidance queries.

For a moat size lam, the points of one dimension collapse into maximal
groups whose moats chain together; a group [l, r] blocks any hyperplane
coordinate in the open interval (l - lam, r + lam).  Groups only merge as
lam grows, so the whole family of versions forms a merge forest: version
lookup is a binary search over the sorted merge moments and group lookup is
an ancestor search with binary lifting.  Build O(n log n), query O(log n),
space O(n log n).
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import GeoTransportError


class Placement(NamedTuple):
    shifted: bool
    coordinate: float


@dataclass
class _DimensionIndex:
    coords: np.ndarray       # sorted unique coordinates
    moments: np.ndarray      # sorted merge thresholds (gap / 2), ascending
    node_l: np.ndarray       # per forest node: least coordinate of the group
    node_r: np.ndarray       # greatest coordinate
    node_ihi: np.ndarray     # index of the greatest member coordinate
    birth: np.ndarray        # version at which the node becomes alive
    up: np.ndarray           # binary lifting table (levels, nodes)

    def version_for(self, lam: float) -> int:
        return bisect_right(self.moments, lam)

    def group_at(self, leaf: int, version: int) -> int:
        """Highest ancestor of `leaf` alive at `version` (birth <= version)."""
        cur = leaf
        for k in range(self.up.shape[0] - 1, -1, -1):
            anc = self.up[k, cur]
            if anc >= 0 and self.birth[anc] <= version:
                cur = anc
        return cur


class MoatIndex:
    """Moat-avoidance queries for every dimension of a point set."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise GeoTransportError("moat index needs at least one point")
        self.dimension = pts.shape[1]
        self._dims = [_build_dimension(pts[:, i]) for i in range(self.dimension)]

    def events(self, dim: int) -> np.ndarray:
        return self._dims[dim].moments

    def query_placement(self, dim: int, x: float, lam: float) -> Placement:
        """Clear(x) if the hyperplane at x misses every moat of size lam,
        else Shifted(l - lam) for the least coordinate l of the blocking
        group.  Distances exactly lam are clear (open moat intervals)."""
        if lam < 0:
            raise GeoTransportError("moat size must be nonnegative")
        di = self._dims[dim]
        version = di.version_for(lam)
        idx = bisect_right(di.coords, x) - 1
        if idx >= 0:
            g = di.group_at(idx, version)
            if x < di.node_r[g] + lam:
                return Placement(True, float(di.node_l[g] - lam))
            succ_leaf = int(di.node_ihi[g]) + 1
        else:
            succ_leaf = 0
        if succ_leaf < len(di.coords):
            g = di.group_at(succ_leaf, version)
            if di.node_l[g] - lam < x:
                return Placement(True, float(di.node_l[g] - lam))
        return Placement(False, float(x))


def build_moat_index(points) -> MoatIndex:
    return MoatIndex(points)


def _build_dimension(values: np.ndarray) -> _DimensionIndex:
    coords = np.unique(values)
    m = len(coords)
    n_nodes = 2 * m - 1 if m > 1 else 1
    node_l = np.empty(n_nodes)
    node_r = np.empty(n_nodes)
    node_ilo = np.empty(n_nodes, dtype=np.int64)
    node_ihi = np.empty(n_nodes, dtype=np.int64)
    birth = np.zeros(n_nodes, dtype=np.int64)
    parent = np.full(n_nodes, -1, dtype=np.int64)
    node_l[:m] = coords
    node_r[:m] = coords
    node_ilo[:m] = np.arange(m)
    node_ihi[:m] = np.arange(m)

    if m > 1:
        gaps = coords[1:] - coords[:-1]
        order = np.argsort(gaps, kind="stable")
        moments = gaps[order] / 2.0
        # DSU over coordinate indices; root carries the alive node id
        dsu = np.arange(m, dtype=np.int64)
        alive = np.arange(m, dtype=np.int64)

        def find(i):
            root = i
            while dsu[root] != root:
                root = dsu[root]
            while dsu[i] != root:
                dsu[i], i = root, dsu[i]
            return root

        nxt = m
        for k, gap_idx in enumerate(order):
            ra = find(gap_idx)
            rb = find(gap_idx + 1)
            na, nb = alive[ra], alive[rb]
            node_l[nxt] = node_l[na]
            node_r[nxt] = node_r[nb]
            node_ilo[nxt] = node_ilo[na]
            node_ihi[nxt] = node_ihi[nb]
            birth[nxt] = k + 1
            parent[na] = nxt
            parent[nb] = nxt
            dsu[ra] = rb
            alive[rb] = nxt
            nxt += 1
    else:
        moments = np.empty(0)

    levels = max(1, int(n_nodes).bit_length())
    up = np.full((levels, n_nodes), -1, dtype=np.int64)
    up[0] = parent
    for k in range(1, levels):
        prev = up[k - 1]
        mask = prev >= 0
        up[k, mask] = prev[prev[mask]]
    return _DimensionIndex(
        coords=coords,
        moments=moments,
        node_l=node_l,
        node_r=node_r,
        node_ihi=node_ihi,
        birth=birth,
        up=up,
    )
