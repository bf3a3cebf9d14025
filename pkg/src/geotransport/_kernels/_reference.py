"""Pure-Python reference kernels.

These are the correctness oracles for the compiled kernels: a prefix split
tree backed by a plain ordered list (every operation linear time) and an
acyclify pass backed by a path-walking forest.  Both follow exactly the
same deterministic tie-breaking rules as the compiled versions.
"""

from __future__ import annotations

import heapq

import numpy as np


class PstError(Exception):
    pass


class _Node:
    __slots__ = ("phi", "rep", "owner")

    def __init__(self, phi, rep, owner):
        self.phi = phi
        self.rep = rep
        self.owner = owner


class NaivePrefixSplitTree:
    """Ordered sequence of (potential, representative) nodes.

    insert appends at the end; merge appends another tree's nodes; a prefix
    split removes the shortest prefix of total potential exactly t, splitting
    one node in place when t falls strictly inside it.
    """

    def __init__(self):
        self._nodes = []
        self.work = 0

    def __len__(self):
        return len(self._nodes)

    def total(self) -> float:
        self.work += len(self._nodes)
        return sum(node.phi for node in self._nodes)

    def insert(self, phi, rep=-1):
        if phi < 0:
            raise PstError("potentials must be nonnegative")
        node = _Node(float(phi), rep, self)
        self._nodes.append(node)
        self.work += 1
        return node

    def delete(self, node):
        if node.owner is not self:
            raise PstError("delete of a node from a different tree")
        self._nodes.remove(node)
        self.work += len(self._nodes) + 1
        node.owner = None

    def merge(self, other):
        if other is self:
            raise PstError("cannot merge a tree with itself")
        for node in other._nodes:
            node.owner = self
        self._nodes.extend(other._nodes)
        self.work += len(other._nodes) + 1
        other._nodes = []

    def prefix_split(self, t):
        """Remove and return the prefix of total potential exactly t."""
        total = self.total()
        if t < 0 or t > total:
            raise PstError(f"prefix_split amount {t} outside [0, {total}]")
        out = NaivePrefixSplitTree()
        if t == 0:
            return out
        acc = 0.0
        for k, node in enumerate(self._nodes):
            self.work += 1
            acc_next = acc + node.phi
            if acc_next > t:
                left = t - acc
                right = node.phi - left
                head = _Node(left, node.rep, out)
                node.phi = right
                out._nodes = self._nodes[:k] + [head]
                for moved in self._nodes[:k]:
                    moved.owner = out
                self._nodes = self._nodes[k:]
                return out
            acc = acc_next
            if acc == t:
                out._nodes = self._nodes[: k + 1]
                for moved in out._nodes:
                    moved.owner = out
                self._nodes = self._nodes[k + 1 :]
                return out
        # only reachable through float drift: hand over everything
        out._nodes = self._nodes
        for moved in out._nodes:
            moved.owner = out
        self._nodes = []
        return out

    def items(self):
        """In-order (potential, representative) pairs."""
        return [(node.phi, node.rep) for node in self._nodes]


def acyclify_core(n_vertices, eu, ev, w, f):
    """Reroute flow until its support is a forest; never increases cost.

    Processes nonzero-flow darts in edge-index order.  When a dart closes a
    cycle, flow is rerouted toward whichever side of the cycle is cheaper and
    every edge whose flow hits zero leaves the forest.  Returns the new flow
    array; divergence is preserved exactly (all updates are +-F per edge).
    """
    eu = np.asarray(eu, dtype=np.int64)
    ev = np.asarray(ev, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64).copy()
    adj = [dict() for _ in range(n_vertices)]  # vertex -> {neighbor: edge id}

    def forest_remove(e):
        a, b = int(eu[e]), int(ev[e])
        del adj[a][b]
        del adj[b][a]

    for e in range(len(eu)):
        if f[e] == 0.0:
            continue
        if f[e] > 0:
            u, v = int(eu[e]), int(ev[e])
        else:
            u, v = int(ev[e]), int(eu[e])
        path = _find_path(adj, eu, u, v)
        if path is None:
            adj[u][v] = e
            adj[v][u] = e
            continue
        # unit cost of pushing one unit along the path u -> v
        pi = 0.0
        for pe, direction in path:
            along = f[pe] * direction
            pi += w[pe] if along > 0 else -w[pe]
        dart_mag = abs(f[e])
        dart_sign = 1.0 if f[e] > 0 else -1.0
        if w[e] >= pi:
            # cheaper via the path: move flow off the dart onto the path
            best = None
            best_val = None
            for pe, direction in path:
                along = f[pe] * direction
                if along < 0 and (best is None or -along < best_val):
                    best, best_val = pe, -along
            if best is None or dart_mag <= best_val:
                amount, saturated = dart_mag, None
            else:
                amount, saturated = best_val, best
            for pe, direction in path:
                f[pe] += amount * direction
            f[e] -= amount * dart_sign
            if saturated is not None:
                forest_remove(saturated)
                adj[u][v] = e
                adj[v][u] = e
        else:
            # cheaper via the dart: drain the path onto the dart
            best = None
            best_val = None
            for pe, direction in path:
                along = f[pe] * direction
                if along > 0 and (best is None or along < best_val):
                    best, best_val = pe, along
            amount = best_val
            for pe, direction in path:
                f[pe] -= amount * direction
            f[e] += amount * dart_sign
            forest_remove(best)
            adj[u][v] = e
            adj[v][u] = e
        # ties can zero several path edges at once; none may stay in the forest
        for pe, _ in path:
            if f[pe] == 0.0 and int(ev[pe]) in adj[int(eu[pe])]:
                if adj[int(eu[pe])][int(ev[pe])] == pe:
                    forest_remove(pe)
    return f


def _find_path(adj, eu, u, v):
    """Path u -> v in the forest as [(edge, +-1 direction)], or None.

    Direction is +1 when the traversal runs tail -> head of the stored edge.
    """
    if not adj[u] or not adj[v]:
        return None
    prev = {u: None}
    stack = [u]
    while stack:
        x = stack.pop()
        if x == v:
            break
        for y, e in adj[x].items():
            if y not in prev:
                prev[y] = (x, e)
                stack.append(y)
    if v not in prev:
        return None
    path = []
    x = v
    while prev[x] is not None:
        p, e = prev[x]
        direction = 1.0 if int(eu[e]) == p else -1.0
        path.append((e, direction))
        x = p
    path.reverse()
    return path


def extract_core(n_vertices, su, sv, amounts, mu, pst_cls=NaivePrefixSplitTree):
    """Shortcut a forest-supported flow into transportation assignments.

    su -> sv darts all carry positive flow.  Vertices are processed in
    topological order (ties by vertex id); positive-supply vertices insert a
    self node, outgoing flow is split off and merged downstream, and the
    trees left at negative-supply vertices pay out the map.
    Returns (sources, sinks, amounts, max_drift).
    """
    su = np.asarray(su, dtype=np.int64)
    sv = np.asarray(sv, dtype=np.int64)
    amounts = np.asarray(amounts, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    m = len(su)
    out_edges = [[] for _ in range(n_vertices)]
    indeg = np.zeros(n_vertices, dtype=np.int64)
    touched = set()
    for k in range(m):
        out_edges[su[k]].append(k)
        indeg[sv[k]] += 1
        touched.add(int(su[k]))
        touched.add(int(sv[k]))
    for v in range(n_vertices):
        if mu[v] != 0.0:
            touched.add(v)
    trees = {}
    ready = sorted(v for v in touched if indeg[v] == 0)
    heapq.heapify(ready)
    max_drift = 0.0
    result = {}
    processed = 0
    while ready:
        v = heapq.heappop(ready)
        processed += 1
        tree = trees.get(v)
        if tree is None:
            tree = pst_cls()
            trees[v] = tree
        if mu[v] > 0.0:
            tree.insert(mu[v], rep=v)
        for k in out_edges[v]:
            t = amounts[k]
            avail = tree.total()
            if t > avail:
                max_drift = max(max_drift, t - avail)
                t = avail
            prefix = tree.prefix_split(t)
            w = int(sv[k])
            wt = trees.get(w)
            if wt is None:
                wt = pst_cls()
                trees[w] = wt
            wt.merge(prefix)
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if processed != len(touched):
        raise ValueError("support graph is not a forest (topological order stuck)")
    for v in sorted(trees):
        if mu[v] < 0.0:
            for phi, rep in trees[v].items():
                if phi == 0.0:
                    continue
                key = (int(rep), int(v))
                result[key] = result.get(key, 0.0) + phi
    ps = np.array([k[0] for k in sorted(result)], dtype=np.int64)
    qs = np.array([k[1] for k in sorted(result)], dtype=np.int64)
    vals = np.array([result[k] for k in sorted(result)], dtype=np.float64)
    return ps, qs, vals, max_drift
