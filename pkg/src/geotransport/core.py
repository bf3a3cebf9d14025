"""Problem and solution representations shared by every stage of the solver.

A transport instance is a finite set of distinct points in R^d carrying real
supplies that sum to zero.  A transportation map assigns nonnegative amounts
to (source, sink) pairs; flows live on the oriented edges of a spanner graph
and are converted to maps by the recovery stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REL_TOL = 1e-9


class GeoTransportError(Exception):
    """Base class for errors raised by this package."""


class ParseError(GeoTransportError):
    """Malformed instance or map file."""


class InvalidMapError(GeoTransportError):
    """Transportation map refers to indices outside the instance."""


class UnsupportedInstanceError(GeoTransportError):
    """Input falls outside the supported problem class."""


class OracleLimitError(GeoTransportError):
    """Exact oracle asked to solve an instance beyond its size limits."""


class SolverDiagnosticError(GeoTransportError):
    """Solver could not reach the requested residual tolerance.

    Carries the best flow found so the caller can inspect or reuse it.
    """

    def __init__(self, message, best_flow=None):
        super().__init__(message)
        self.best_flow = best_flow


@dataclass(frozen=True)
class TransportInstance:
    """Points with real supplies summing to zero.

    Coincident input points are merged at construction (supplies summed,
    all-zero merges kept as zero-supply points); `source_index` maps each
    stored point back to the first input index it came from.
    """

    points: np.ndarray          # (n, d) float64
    supplies: np.ndarray        # (n,) float64
    dimension: int
    source_index: np.ndarray = field(default=None)  # (n,) original indices
    merged_from: np.ndarray = field(default=None)   # original index -> row

    def __post_init__(self):
        if self.source_index is None:
            object.__setattr__(self, "source_index", np.arange(self.n))
        if self.merged_from is None:
            object.__setattr__(self, "merged_from", np.arange(self.n))
        self.points.setflags(write=False)
        self.supplies.setflags(write=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def positive_indices(self) -> np.ndarray:
        return np.nonzero(self.supplies > 0)[0]

    @property
    def negative_indices(self) -> np.ndarray:
        return np.nonzero(self.supplies < 0)[0]

    @property
    def total_mass(self) -> float:
        """Sum of |mu| over all points; the scale for feasibility tolerances."""
        return float(np.sum(np.abs(self.supplies)))

    def spread(self) -> float:
        """Ratio of largest to smallest pairwise distance.

        Exact for small n; for large n the diameter is replaced by the
        bounding-box diagonal (an overestimate by at most sqrt(d)), which is
        all the mode selector needs.
        """
        if self.n < 2:
            return 1.0
        dmin = _min_pairwise_distance(self.points)
        if self.n <= 2048:
            dmax = _max_pairwise_distance(self.points)
        else:
            span = self.points.max(axis=0) - self.points.min(axis=0)
            dmax = float(np.sqrt(np.sum(span * span)))
        if dmin <= 0.0:
            raise UnsupportedInstanceError("coincident points survived merging")
        return dmax / dmin


def make_instance(points, supplies) -> TransportInstance:
    """Validate raw input and build a TransportInstance.

    Merges coincident points (exact coordinate equality) and checks that the
    supplies balance to zero within REL_TOL of total |mu|.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    mu = np.ascontiguousarray(supplies, dtype=np.float64)
    if pts.ndim != 2:
        raise UnsupportedInstanceError("points must be a 2-d array")
    n, d = pts.shape
    if mu.shape != (n,):
        raise UnsupportedInstanceError("one supply per point required")
    if d < 1:
        raise UnsupportedInstanceError("dimension must be positive")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(mu)):
        raise UnsupportedInstanceError("coordinates and supplies must be finite")
    scale = np.sum(np.abs(mu))
    if abs(np.sum(mu)) > REL_TOL * max(scale, 1.0):
        raise UnsupportedInstanceError(
            f"supplies sum to {np.sum(mu):.3g}, not zero (scale {scale:.3g})"
        )
    pts, mu, src, merged_from = _merge_coincident(pts, mu)
    return TransportInstance(points=pts, supplies=mu, dimension=d,
                             source_index=src, merged_from=merged_from)


def _merge_coincident(pts, mu):
    n = len(mu)
    order = np.lexsort(pts.T[::-1])
    sorted_pts = pts[order]
    same = np.all(sorted_pts[1:] == sorted_pts[:-1], axis=1)
    if not same.any():
        return pts, mu, np.arange(n), np.arange(n)
    group = np.zeros(len(order), dtype=np.int64)
    group[1:] = np.cumsum(~same)
    n_groups = group[-1] + 1
    merged_mu = np.zeros(n_groups)
    np.add.at(merged_mu, group, mu[order])
    # representative = first input index in each group
    rep = np.full(n_groups, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(rep, group, order)
    keep = np.argsort(rep, kind="stable")
    rep = rep[keep]
    rank = np.empty(n_groups, dtype=np.int64)
    rank[keep] = np.arange(n_groups)
    merged_from = np.empty(n, dtype=np.int64)
    merged_from[order] = rank[group]
    return pts[rep].copy(), merged_mu[keep], rep, merged_from


def _min_pairwise_distance(pts) -> float:
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    return float(dist[:, 1].min())


def _max_pairwise_distance(pts) -> float:
    best = 0.0
    step = 512
    for i in range(0, len(pts), step):
        block = pts[i : i + step]
        diff = block[:, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass
class TransportMap:
    """Sparse nonnegative assignment on P+ x P-.

    `entries` maps (i, j) index pairs of the owning instance to amounts.
    """

    entries: dict

    def cost(self, instance: TransportInstance) -> float:
        return total_cost(instance, self)

    def as_sorted_items(self):
        return sorted(self.entries.items())


@dataclass
class Violation:
    kind: str        # "row", "column", or "negative"
    index: tuple
    magnitude: float

    def __str__(self):
        return f"{self.kind} violation at {self.index}: {self.magnitude:.3g}"


def total_cost(instance: TransportInstance, tmap: TransportMap) -> float:
    """Sum of amount * Euclidean distance over all map entries."""
    if not tmap.entries:
        return 0.0
    pairs = np.array(list(tmap.entries.keys()), dtype=np.int64)
    amounts = np.fromiter(tmap.entries.values(), dtype=np.float64, count=len(tmap.entries))
    n = instance.n
    if pairs.min() < 0 or pairs.max() >= n:
        raise InvalidMapError("map entry references a point outside the instance")
    diff = instance.points[pairs[:, 0]] - instance.points[pairs[:, 1]]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(np.dot(amounts, dist))


def validate_map(instance: TransportInstance, tmap: TransportMap) -> list:
    """Return all row-sum, column-sum and nonnegativity violations.

    An empty list means the map is feasible within REL_TOL * total |mu|.
    """
    tol = REL_TOL * max(instance.total_mass, 1e-300)
    violations = []
    row = np.zeros(instance.n)
    col = np.zeros(instance.n)
    for (i, j), amount in tmap.entries.items():
        if not (0 <= i < instance.n and 0 <= j < instance.n):
            raise InvalidMapError(f"entry ({i}, {j}) out of range")
        if instance.supplies[i] <= 0 or instance.supplies[j] >= 0:
            violations.append(Violation("negative", (i, j), float("nan")))
            continue
        if amount < 0:
            violations.append(Violation("negative", (i, j), -amount))
        row[i] += amount
        col[j] += amount
    for i in instance.positive_indices:
        err = abs(row[i] - instance.supplies[i])
        if err > tol:
            violations.append(Violation("row", (int(i),), err))
    for j in instance.negative_indices:
        err = abs(col[j] + instance.supplies[j])
        if err > tol:
            violations.append(Violation("column", (int(j),), err))
    # mass routed between wrong-sign pairs also shows up as row/col errors,
    # but flag stray rows for zero-supply points explicitly
    zero = np.nonzero(instance.supplies == 0)[0]
    for k in zero:
        if row[k] > tol or col[k] > tol:
            violations.append(Violation("row", (int(k),), float(row[k] + col[k])))
    return violations


@dataclass
class FlowVector:
    """Signed real flow per oriented edge of a spanner graph."""

    graph: "SpannerGraph"
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.graph.n_edges,):
            raise GeoTransportError("flow vector does not match the graph's edge set")

    def copy(self) -> "FlowVector":
        return FlowVector(self.graph, self.values.copy())


def flow_divergence(graph, values) -> np.ndarray:
    """Divergence A f: net outflow per vertex under the fixed orientation."""
    v = np.asarray(values, dtype=np.float64)
    nv = graph.n_vertices
    out = np.bincount(graph.edge_tail, weights=v, minlength=nv)
    inn = np.bincount(graph.edge_head, weights=v, minlength=nv)
    return out - inn


def flow_cost(graph, values) -> float:
    """Cost sum |f_e| * length_e of a flow vector."""
    return float(np.dot(np.abs(np.asarray(values, dtype=np.float64)), graph.edge_weight))
