"""Exact ground truth at desk scale.

Two independent exact methods are provided for each problem so the oracles
can cross-validate each other: successive shortest augmenting paths with
potentials (primary) and an LP formulation solved by HiGHS (cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    FlowVector,
    OracleLimitError,
    TransportInstance,
    TransportMap,
)


@dataclass(frozen=True)
class OracleLimits:
    max_points: int = 500
    max_edges: int = 20_000

    def __post_init__(self):
        if self.max_points <= 0 or self.max_edges <= 0:
            raise ValueError("oracle limits must be positive")


DEFAULT_LIMITS = OracleLimits()


def exact_emd(instance: TransportInstance, limits: OracleLimits = DEFAULT_LIMITS):
    """Optimal transportation map on the complete bipartite instance.

    Returns (cost, TransportMap).  Refuses instances beyond `limits`.
    """
    if instance.n > limits.max_points:
        raise OracleLimitError(
            f"instance has {instance.n} points, oracle limit is {limits.max_points}"
        )
    srcs = instance.positive_indices
    snks = instance.negative_indices
    if len(srcs) == 0:
        return 0.0, TransportMap({})
    supply = instance.supplies[srcs].copy()
    demand = -instance.supplies[snks].copy()
    diff = instance.points[srcs][:, None, :] - instance.points[snks][None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    x = _transport_ssp(supply, demand, cost)
    entries = {}
    ii, jj = np.nonzero(x)
    for a, b in zip(ii, jj):
        entries[(int(srcs[a]), int(snks[b]))] = float(x[a, b])
    tmap = TransportMap(entries)
    return float(np.sum(x * cost)), tmap


def exact_emd_lp(instance: TransportInstance):
    """Independent LP solution of the same problem (HiGHS); cost only."""
    from scipy.optimize import linprog

    srcs = instance.positive_indices
    snks = instance.negative_indices
    if len(srcs) == 0:
        return 0.0
    ns, nt = len(srcs), len(snks)
    diff = instance.points[srcs][:, None, :] - instance.points[snks][None, :, :]
    c = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).ravel()
    a_eq = np.zeros((ns + nt, ns * nt))
    for i in range(ns):
        a_eq[i, i * nt : (i + 1) * nt] = 1.0
    for j in range(nt):
        a_eq[ns + j, j::nt] = 1.0
    b_eq = np.concatenate([instance.supplies[srcs], -instance.supplies[snks]])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, method="highs")
    if not res.success:
        raise OracleLimitError(f"LP cross-check failed: {res.message}")
    return float(res.fun)


def _transport_ssp(supply, demand, cost):
    """Dense successive shortest paths with potentials.

    supply (ns,), demand (nt,), cost (ns, nt); returns the optimal plan x.
    Each augmentation saturates a source, a sink, or a support arc, so the
    number of augmentations is finite; potentials keep reduced costs >= 0.
    """
    ns, nt = cost.shape
    x = np.zeros((ns, nt))
    pot_s = np.zeros(ns)
    pot_t = np.zeros(nt)
    rem_s = supply.astype(np.float64).copy()
    rem_t = demand.astype(np.float64).copy()
    scale = max(rem_s.sum(), 1e-300)
    feas_tol = 1e-13 * scale
    inf = np.inf
    guard = 4 * (ns + nt) * (ns + nt) + 16
    for _ in range(guard):
        if rem_s.sum() <= feas_tol and rem_t.sum() <= feas_tol:
            break
        dist_s = np.where(rem_s > feas_tol, 0.0, inf)
        dist_t = np.full(nt, inf)
        pred_t = np.full(nt, -1, dtype=np.int64)    # source feeding each sink
        pred_s = np.full(ns, -1, dtype=np.int64)    # sink feeding each source
        done_s = np.zeros(ns, dtype=bool)
        done_t = np.zeros(nt, dtype=bool)
        target = -1
        while True:
            cand_s = np.where(done_s, inf, dist_s)
            cand_t = np.where(done_t, inf, dist_t)
            bs = int(np.argmin(cand_s))
            bt = int(np.argmin(cand_t))
            if min(cand_s[bs], cand_t[bt]) == inf:
                break
            if cand_t[bt] <= cand_s[bs]:
                done_t[bt] = True
                if rem_t[bt] > feas_tol:
                    target = bt
                    break
                # relax backward arcs bt -> i over support
                red = -cost[:, bt] - pot_s + pot_t[bt] + dist_t[bt]
                mask = (x[:, bt] > 0) & ~done_s & (red < dist_s - 1e-18)
                if mask.any():
                    dist_s[mask] = red[mask]
                    pred_s[mask] = bt
            else:
                done_s[bs] = True
                red = cost[bs] + pot_s[bs] - pot_t + dist_s[bs]
                mask = ~done_t & (red < dist_t - 1e-18)
                if mask.any():
                    dist_t[mask] = red[mask]
                    pred_t[mask] = bs
        if target < 0:
            raise OracleLimitError("transportation instance is infeasible")
        d_star = dist_t[target]
        pot_s += np.minimum(dist_s, d_star)
        pot_t += np.minimum(dist_t, d_star)
        # walk the alternating path back from target, find bottleneck
        path = []
        t = target
        while True:
            s = pred_t[t]
            path.append((int(s), int(t)))
            t2 = pred_s[s]
            if t2 < 0:
                break
            t = t2
        origin = path[-1][0]
        bottleneck = min(rem_s[origin], rem_t[target])
        for k in range(len(path) - 1):
            s, t = path[k]
            bottleneck = min(bottleneck, x[s, path[k + 1][1]])
        for k, (s, t) in enumerate(path):
            x[s, t] += bottleneck
            if k + 1 < len(path):
                x[s, path[k + 1][1]] -= bottleneck
        rem_s[origin] -= bottleneck
        rem_t[target] -= bottleneck
    else:
        raise OracleLimitError("augmentation guard exceeded")
    return x


def exact_graph_flow(graph, b, limits: OracleLimits = DEFAULT_LIMITS):
    """Optimal uncapacitated min-cost flow on a spanner graph.

    Routes every unit along graph shortest paths: the optimum equals the
    transportation optimum between excess and deficit vertices under the
    shortest-path metric.  Returns (cost, FlowVector).
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    b = np.asarray(b, dtype=np.float64)
    if graph.n_edges > limits.max_edges:
        raise OracleLimitError(
            f"graph has {graph.n_edges} edges, oracle limit is {limits.max_edges}"
        )
    if abs(b.sum()) > 1e-9 * max(np.abs(b).sum(), 1.0):
        raise OracleLimitError("divergences do not sum to zero")
    values = np.zeros(graph.n_edges)
    srcs = np.nonzero(b > 0)[0]
    snks = np.nonzero(b < 0)[0]
    if len(srcs) == 0:
        return 0.0, FlowVector(graph, values)
    nv = graph.n_vertices
    w = coo_matrix(
        (graph.edge_weight, (graph.edge_tail, graph.edge_head)), shape=(nv, nv)
    ).tocsr()
    dist, pred = dijkstra(w, directed=False, indices=srcs, return_predecessors=True)
    plan = _transport_ssp(b[srcs], -b[snks], dist[:, snks])
    edge_ids = {}
    for e in range(graph.n_edges):
        edge_ids[(int(graph.edge_tail[e]), int(graph.edge_head[e]))] = e
    for a, s in enumerate(srcs):
        for bidx, t in enumerate(snks):
            amount = plan[a, bidx]
            if amount <= 0:
                continue
            v = int(t)
            while v != s:
                u = int(pred[a, v])
                e = edge_ids.get((u, v))
                if e is not None:
                    values[e] += amount
                else:
                    values[edge_ids[(v, u)]] -= amount
                v = u
    cost = float(np.sum(plan * dist[:, snks]))
    return cost, FlowVector(graph, values)


def exact_graph_flow_lp(graph, b):
    """LP cross-check of the graph flow cost (HiGHS, arc splitting)."""
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    ne, nv = graph.n_edges, graph.n_vertices
    rows = np.concatenate([graph.edge_tail, graph.edge_head, graph.edge_tail, graph.edge_head])
    cols = np.concatenate([np.arange(ne), np.arange(ne), np.arange(ne, 2 * ne), np.arange(ne, 2 * ne)])
    vals = np.concatenate([np.ones(ne), -np.ones(ne), -np.ones(ne), np.ones(ne)])
    a_eq = coo_matrix((vals, (rows, cols)), shape=(nv, 2 * ne))
    c = np.concatenate([graph.edge_weight, graph.edge_weight])
    res = linprog(c, A_eq=a_eq, b_eq=np.asarray(b, dtype=np.float64), method="highs")
    if not res.success:
        raise OracleLimitError(f"LP cross-check failed: {res.message}")
    return float(res.fun)


def optimal_matching_cost(instance: TransportInstance) -> float:
    """Hungarian-algorithm cost for a unit-supply instance (cross-check)."""
    from scipy.optimize import linear_sum_assignment

    srcs = instance.positive_indices
    snks = instance.negative_indices
    diff = instance.points[srcs][:, None, :] - instance.points[snks][None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rr, cc = linear_sum_assignment(cost)
    return float(cost[rr, cc].sum())
