"""Flow-to-map recovery: acyclify the support, then shortcut through every
vertex in topological order with prefix split trees.

Works on any geometric graph whose vertex divergences equal the instance
supplies (points) and zero (Steiner vertices); the cost never increases,
and integer supplies produce integer assignments.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .core import GeoTransportError, TransportMap


def acyclify(n_vertices, edge_tail, edge_head, edge_weight, flow, backend=None):
    """Reroute flow until its support is a forest; cost never increases."""
    core = _pick(backend).acyclify
    return core(n_vertices, edge_tail, edge_head, edge_weight, flow)


def resolve_forest_flows(n_vertices, edge_tail, edge_head, support, divergence):
    """Exact flow values on a forest support, peeled leaf by leaf.

    A forest flow is uniquely determined by its divergences; recomputing the
    values as partial sums of the divergence vector removes the float drift
    accumulated by rerouting and makes integer supplies give exactly integer
    flows.  Returns a full-length flow array (zero off the support).
    """
    support = np.asarray(support, dtype=np.int64)
    out = np.zeros(len(edge_tail))
    if len(support) == 0:
        return out
    resid = np.asarray(divergence, dtype=np.float64).copy()
    adj = {}
    deg = {}
    for e in support:
        a, b = int(edge_tail[e]), int(edge_head[e])
        adj.setdefault(a, []).append(e)
        adj.setdefault(b, []).append(e)
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    removed = set()
    stack = sorted(v for v, k in deg.items() if k == 1)
    while stack:
        v = stack.pop()
        if deg.get(v, 0) != 1:
            continue
        e = next(ei for ei in adj[v] if ei not in removed)
        removed.add(e)
        a, b = int(edge_tail[e]), int(edge_head[e])
        other = b if v == a else a
        # flow on (a -> b) that zeroes v's residual
        out[e] = resid[v] if v == a else -resid[v]
        resid[other] += resid[v]
        resid[v] = 0.0
        deg[v] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    return out


def extract_map(n_vertices, edge_tail, edge_head, flow, vertex_supply,
                point_of_vertex, backend=None):
    """Forest-supported flow -> transportation map on the original points.

    `point_of_vertex` maps graph vertices to original point ids (-1 for
    Steiner vertices).  Returns (TransportMap, max potential drift).
    """
    nz = np.nonzero(flow)[0]
    su = np.where(flow[nz] > 0, edge_tail[nz], edge_head[nz])
    sv = np.where(flow[nz] > 0, edge_head[nz], edge_tail[nz])
    amounts = np.abs(flow[nz])
    core = _pick(backend).extract
    ps, qs, vals, drift = core(n_vertices, su, sv, amounts, vertex_supply)
    entries = {}
    for p, q, v in zip(ps, qs, vals):
        src = int(point_of_vertex[p])
        dst = int(point_of_vertex[q])
        if src < 0 or dst < 0:
            raise GeoTransportError("map extraction ended at a Steiner vertex")
        key = (src, dst)
        entries[key] = entries.get(key, 0.0) + float(v)
    return TransportMap(entries), drift


class _Backend:
    def __init__(self, acyclify_fn, extract_fn):
        self.acyclify = acyclify_fn
        self.extract = extract_fn


def _pick(backend):
    if backend in (None, "auto"):
        return _Backend(_kernels.acyclify_core, _kernels.extract_core)
    if backend in ("python", "reference"):
        return _Backend(_kernels.acyclify_reference, _kernels.extract_reference)
    if backend == "cython":
        if _kernels.BACKEND != "cython":
            raise GeoTransportError("compiled kernels are not available")
        return _Backend(_kernels.acyclify_core, _kernels.extract_core)
    raise GeoTransportError(f"unknown backend {backend!r}")
