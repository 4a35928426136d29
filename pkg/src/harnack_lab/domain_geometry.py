"""Intrinsic geometry of a domain inside its closure graph.

A :class:`DomainView` marks the vertices of a closure graph as interior (the
domain ``U``) or Dirichlet boundary.  Intrinsic distances only travel through
interior vertices; a boundary vertex may be a path endpoint but never an
intermediate stop.  Builders that need a two-sided boundary (slits) duplicate
the boundary vertices, so the plain shortest-path metric on the closure graph
is the metric of the completion.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import (
    DisconnectedInterior,
    DomainError,
    Infeasible,
    IsolatedBoundaryVertex,
    NoChain,
    NoFarPoint,
    OverlappingSets,
    Unreachable,
)
from .graph_core import WeightedGraph

_EPS = 1e-9


class DomainView:
    """Domain ``U`` with Dirichlet boundary inside a closure graph.

    Distance tables are filled lazily and cached under a lock, so one view can
    be shared between threads once constructed.
    """

    def __init__(self, graph: WeightedGraph, interior: Iterable[int], boundary: Iterable[int],
                 edge_length: Sequence[float] | None = None, cache_limit: int = 256):
        self.graph = graph
        self.interior = np.unique(np.asarray(list(interior), dtype=np.int64))
        self.boundary = np.unique(np.asarray(list(boundary), dtype=np.int64))
        self.lengths = graph.lengths if edge_length is None else np.asarray(edge_length, dtype=float)
        if self.lengths.shape != (graph.m,) or np.any(self.lengths <= 0):
            raise DomainError("edge_length must be positive, one entry per edge")
        n = graph.n
        self.is_interior = np.zeros(n, dtype=bool)
        self.is_interior[self.interior] = True
        is_boundary = np.zeros(n, dtype=bool)
        is_boundary[self.boundary] = True
        if np.any(self.is_interior & is_boundary):
            raise OverlappingSets("interior and boundary overlap")
        if not np.all(self.is_interior | is_boundary):
            raise DomainError("interior and boundary must partition the closure graph")
        if len(self.interior) == 0:
            raise DisconnectedInterior("interior is empty")
        self.is_boundary = is_boundary
        self._full = sp.coo_matrix((np.r_[self.lengths, self.lengths],
                                    (np.r_[graph.u, graph.v], np.r_[graph.v, graph.u])),
                                   shape=(n, n)).tocsr()
        W = graph.adjacency
        touches = np.asarray(W[:, self.interior].sum(axis=1)).ravel() > 0
        if np.any(is_boundary & ~touches):
            bad = np.flatnonzero(is_boundary & ~touches)[:5].tolist()
            raise IsolatedBoundaryVertex(f"boundary vertices without interior neighbour: {bad}")
        sub = W[self.interior][:, self.interior]
        if len(self.interior) > 1:
            ncomp, _ = csgraph.connected_components(sub, directed=False)
            if ncomp != 1:
                raise DisconnectedInterior(f"interior splits into {ncomp} components")
        # rows of boundary vertices removed: no path may leave a boundary vertex
        self._no_exit = (sp.diags(self.is_interior.astype(float)) @ self._full).tocsr()
        self._lock = threading.Lock()
        self._cache: dict[int, np.ndarray] = {}
        self._cache_limit = cache_limit
        self._delta = None

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def mesh(self) -> float:
        return float(self.lengths.max())

    def _source_matrix(self, x: int):
        if self.is_interior[x]:
            return self._no_exit
        row = self._full[x]
        extra = sp.csr_matrix((row.data, row.indices, [0] * (x + 1) + [len(row.data)] * (self.n - x)),
                              shape=(self.n, self.n))
        return self._no_exit + extra

    def distances_from(self, x: int, limit: float = np.inf) -> np.ndarray:
        """``d_U(x, .)`` for every vertex (``inf`` where unreachable or beyond ``limit``)."""
        x = int(x)
        if np.isfinite(limit):
            return csgraph.dijkstra(self._source_matrix(x), directed=True, indices=x, limit=limit)
        with self._lock:
            hit = self._cache.get(x)
        if hit is not None:
            return hit
        d = csgraph.dijkstra(self._source_matrix(x), directed=True, indices=x)
        d.setflags(write=False)
        with self._lock:
            if len(self._cache) >= self._cache_limit:
                self._cache.pop(next(iter(self._cache)))
            self._cache[x] = d
        return d

    def intrinsic_distance(self, x: int, y: int) -> float:
        d = float(self.distances_from(x)[y])
        if not np.isfinite(d):
            raise Unreachable(f"{y} unreachable from {x} through the interior")
        return d

    @property
    def delta(self) -> np.ndarray:
        """``delta_U``: intrinsic distance to the Dirichlet boundary (0 on it)."""
        with self._lock:
            if self._delta is None:
                d = csgraph.dijkstra(self._full, directed=False, indices=self.boundary, min_only=True)
                d.setflags(write=False)
                self._delta = d
            return self._delta

    def inner_ball(self, center: int, r: float) -> np.ndarray:
        """``B_U(center, r) = {y in U : d_U(center, y) < r}``."""
        d = self.distances_from(center, limit=r)
        return np.flatnonzero((d < r - 1e-12) & self.is_interior)

    def shell(self, center: int, s: float, width: float | None = None) -> np.ndarray:
        """Interior vertices with ``s <= d_U(center, .) < s + width`` (width defaults to mesh)."""
        width = self.mesh if width is None else width
        d = self.distances_from(center, limit=s + width)
        return np.flatnonzero((d >= s - _EPS) & (d < s + width - 1e-12) & self.is_interior)

    def to_json(self, graph_ref: str = "graph.json") -> dict:
        return {"graph_ref": graph_ref, "interior": self.interior.tolist(),
                "boundary": self.boundary.tolist(), "edge_length": self.lengths.tolist()}

    @classmethod
    def from_json(cls, data: dict, graph: WeightedGraph) -> "DomainView":
        return cls(graph, data["interior"], data["boundary"], data.get("edge_length"))

    def __repr__(self):
        return f"DomainView(|U|={len(self.interior)}, |boundary|={len(self.boundary)})"


def domain_view(g: WeightedGraph, interior, boundary, edge_length=None) -> DomainView:
    return DomainView(g, interior, boundary, edge_length)


def intrinsic_distance(dv: DomainView, x: int, y: int) -> float:
    return dv.intrinsic_distance(x, y)


def inner_ball(dv: DomainView, center: int, r: float) -> np.ndarray:
    return dv.inner_ball(center, r)


# -- inner uniformity ----------------------------------------------------------


def admissible_path(dv: DomainView, x: int, y: int, c: float, dx=None, dy=None):
    """Shortest path from ``x`` to ``y`` through ``{z : delta(z) >= c min(d(x,z), d(z,y))}``.

    Returns ``(length, path)``; ``(inf, None)`` when the admissible set
    disconnects the endpoints.
    """
    if x == y:
        return 0.0, [int(x)]
    dx = dv.distances_from(x) if dx is None else dx
    dy = dv.distances_from(y) if dy is None else dy
    ok = dv.is_interior & (dv.delta >= c * np.minimum(dx, dy) - 1e-12)
    ok[[x, y]] = True
    keep = np.flatnonzero(ok)
    src, target = (int(i) for i in np.searchsorted(keep, [x, y]))
    sub = dv._source_matrix(x)[keep][:, keep]
    dist, pred = csgraph.dijkstra(sub, directed=True, indices=src, return_predecessors=True)
    if not np.isfinite(dist[target]):
        return np.inf, None
    path = [target]
    while path[-1] != src:
        path.append(pred[path[-1]])
    return float(dist[target]), [int(keep[i]) for i in reversed(path)]


@dataclass
class PairRecord:
    x: int
    y: int
    distance: float
    length: float
    path: list | None
    ok: bool

    def to_json(self):
        return {"x": self.x, "y": self.y, "d_U": self.distance, "length": self.length,
                "path": self.path, "ok": self.ok}


@dataclass
class InnerUniformCertificate:
    c: float
    C: float
    sampled_pairs: list = field(default_factory=list)
    status: str = "sampled-only"

    @property
    def failures(self):
        return [p for p in self.sampled_pairs if not p.ok]

    def to_json(self, with_paths: bool = False):
        pairs = [p.to_json() for p in self.sampled_pairs]
        if not with_paths:
            for p in pairs:
                p.pop("path")
        return {"c": self.c, "C": self.C, "status": self.status, "pairs": pairs}


def sample_pairs(dv: DomainView, pairs="auto", seed: int = 0, exhaustive_limit: int = 256):
    """Resolve a pair-sampling policy into ``(list_of_pairs, exhaustive_flag)``.

    ``pairs`` is ``"exhaustive"``, ``"auto"`` (exhaustive up to
    ``exhaustive_limit`` interior vertices, else 200 samples), an integer sample
    count, or an explicit list.  Sampling draws the requested number of
    uniform pairs plus half as many pairs of boundary-adjacent vertices.
    """
    U = dv.interior
    if pairs == "auto":
        pairs = "exhaustive" if len(U) <= exhaustive_limit else 200
    if isinstance(pairs, str):
        if pairs != "exhaustive":
            raise ValueError(f"unknown pair policy {pairs!r}")
        iu, ju = np.triu_indices(len(U), k=1)
        return [(int(U[i]), int(U[j])) for i, j in zip(iu, ju)], True
    if isinstance(pairs, (int, np.integer)):
        rng = np.random.default_rng(seed)
        out = [tuple(int(v) for v in rng.choice(U, 2, replace=False)) for _ in range(int(pairs))]
        near = U[dv.delta[U] <= 2 * dv.mesh + _EPS]
        if len(near) >= 2:
            out += [tuple(int(v) for v in rng.choice(near, 2, replace=False))
                    for _ in range(int(pairs) // 2)]
        return out, False
    return [(int(a), int(b)) for a, b in pairs], False


def inner_uniformity_check(dv: DomainView, c: float, C: float, pairs="auto", seed: int = 0,
                           keep_paths: bool = True) -> InnerUniformCertificate:
    """Test every sampled pair for a ``(c, C)``-inner uniform connecting path."""
    if not (0 < c <= 1) or C < 1:
        raise ValueError("need 0 < c <= 1 and C >= 1")
    plist, exhaustive = sample_pairs(dv, pairs, seed)
    cert = InnerUniformCertificate(c=c, C=C)
    by_source: dict[int, list] = {}
    for x, y in plist:
        by_source.setdefault(x, []).append(y)
    for x, ys in by_source.items():
        dx = dv.distances_from(x)
        for y in ys:
            if x == y:
                cert.sampled_pairs.append(PairRecord(x, y, 0.0, 0.0, [x], True))
                continue
            dy = dv.distances_from(y)
            length, path = admissible_path(dv, x, y, c, dx, dy)
            ok = bool(length <= C * dx[y] + 1e-9)
            cert.sampled_pairs.append(PairRecord(x, y, float(dx[y]), length,
                                                 path if (keep_paths or not ok) else None, ok))
    if cert.failures:
        cert.status = "refuted"
    else:
        cert.status = "certified" if exhaustive else "sampled-only"
    return cert


C_GRID = tuple(2.0 ** -j for j in range(0, 7))


def inner_uniformity_table(dv: DomainView, pairs="auto", seed: int = 0, c_grid=C_GRID) -> dict:
    """``C(c)`` = worst ratio of admissible-path length to ``d_U`` over the pairs, per ``c``."""
    plist, _ = sample_pairs(dv, pairs, seed)
    worst = {float(c): 1.0 for c in c_grid}
    for x, y in plist:
        if x == y:
            continue
        dx, dy = dv.distances_from(x), dv.distances_from(y)
        for c in c_grid:
            if not np.isfinite(worst[c]):
                continue
            length, _ = admissible_path(dv, x, y, c, dx, dy)
            worst[c] = max(worst[c], length / dx[y])
    return worst


def estimate_inner_uniformity_constants(dv: DomainView, pairs="auto", seed: int = 0,
                                        c_grid=C_GRID, C_max: float = 4.0):
    """Return ``(c_U, C_U)``: the largest grid ``c`` whose ``C(c) <= C_max``.

    When no ``c`` meets the cap, the finite ``C(c)`` minimum is returned.
    """
    table = inner_uniformity_table(dv, pairs, seed, c_grid)
    finite = {c: C for c, C in table.items() if np.isfinite(C)}
    if not finite:
        raise Infeasible("no sampled c admits a finite C")
    capped = [c for c, C in finite.items() if C <= C_max]
    if capped:
        c = max(capped)
    else:
        c = min(finite, key=lambda k: (finite[k], -k))
    return c, finite[c]


# -- special points --------------------------------------------------------------


def shell_point(dv: DomainView, center: int, distance: float, clearance: float,
                tol: float | None = None, metric_from=None) -> int:
    """Vertex with ``|d_U(center, .) - distance| <= tol`` and ``delta >= clearance - tol``.

    Among the candidates the one with largest ``delta_U`` wins; ties go to the
    smallest id.  ``tol`` defaults to the mesh.
    """
    tol = dv.mesh if tol is None else tol
    d = dv.distances_from(center, limit=distance + tol + _EPS) if metric_from is None else metric_from
    delta = dv.delta
    cand = np.flatnonzero(dv.is_interior & (np.abs(d - distance) <= tol + _EPS)
                          & (delta >= clearance - tol - _EPS))
    if len(cand) == 0:
        raise NoFarPoint(f"no vertex at distance {distance} with clearance {clearance}")
    best = cand[delta[cand] == delta[cand].max()]
    return int(best.min())


def far_point(dv: DomainView, xi: int, r: float, c_U: float) -> int:
    """Vertex at inner distance about ``r/4`` from ``xi`` with clearance about ``c_U r/4``."""
    if r < dv.mesh:
        raise NoFarPoint("r is below the mesh resolution")
    return shell_point(dv, xi, r / 4, c_U * r / 4)


# -- Harnack chains ----------------------------------------------------------------


@dataclass
class HarnackChain:
    length: int
    balls: list  # (center, radius) pairs, in order from x to y
    M: float

    def to_json(self):
        return {"N": self.length, "M": self.M, "balls": [[int(c), float(r)] for c, r in self.balls]}


def dyadic_radii(dv: DomainView, levels: int = 6) -> list:
    r_max = float(np.max(dv.delta[dv.interior]))
    return [r_max * 2.0 ** -j for j in range(levels) if r_max * 2.0 ** -j >= dv.mesh]


class _ChainIndex:
    """Ball/core incidence for one ``(M, radius_grid)`` pair."""

    def __init__(self, dv: DomainView, M: float, radius_grid):
        delta = dv.delta
        grid = np.sort(np.asarray(radius_grid, dtype=float))[::-1]
        centers = dv.interior[delta[dv.interior] >= grid.min() - _EPS]
        rows, cols, nodes = [], [], []
        limit = grid.max() / M + _EPS
        for start in range(0, len(centers), 256):
            chunk = centers[start:start + 256]
            D = csgraph.dijkstra(dv._no_exit, directed=True, indices=chunk, limit=limit)
            for i, c in enumerate(chunk):
                reach = np.flatnonzero(np.isfinite(D[i]))
                dist = D[i, reach]
                for r in grid:
                    if r > delta[c] + _EPS:
                        continue
                    core = reach[dist <= r / M + _EPS]
                    rows.append(np.full(len(core), len(nodes)))
                    cols.append(core)
                    nodes.append((int(c), float(r)))
        if not nodes:
            raise NoChain("no ball of the radius grid fits inside the domain")
        data = np.ones(sum(len(r) for r in rows))
        self.I = sp.csr_matrix((data, (np.concatenate(rows), np.concatenate(cols))),
                               shape=(len(nodes), dv.n))
        self.IT = self.I.T.tocsr()
        self.nodes = nodes

    def containing(self, v: int) -> np.ndarray:
        col = self.IT[v]
        return col.indices

    def bfs(self, x: int, y: int):
        start = self.containing(x)
        goal = np.zeros(len(self.nodes), dtype=bool)
        goal[self.containing(y)] = True
        if len(start) == 0 or not goal.any():
            raise NoChain("endpoint not covered by any ball core")
        visited = np.zeros(len(self.nodes), dtype=bool)
        visited[start] = True
        levels = [start]
        while not goal[levels[-1]].any():
            front = np.zeros(len(self.nodes))
            front[levels[-1]] = 1.0
            verts = self.IT @ front
            nxt = (self.I @ (verts > 0).astype(float)) > 0
            nxt &= ~visited
            idx = np.flatnonzero(nxt)
            if len(idx) == 0:
                raise NoChain("Harnack chain search exhausted the ball graph")
            visited[idx] = True
            levels.append(idx)
        end = levels[-1][goal[levels[-1]]]
        chain = [int(self._pick(end))]
        for lvl in reversed(levels[:-1]):
            row = self.I[chain[-1]]
            touching = (self.I @ row.T).toarray().ravel() > 0
            cand = lvl[touching[lvl]]
            chain.append(int(self._pick(cand)))
        chain.reverse()
        return len(levels), [self.nodes[i] for i in chain]

    def _pick(self, idx):
        # largest radius first, then smallest center id
        return min(idx, key=lambda i: (-self.nodes[i][1], self.nodes[i][0]))


def harnack_chain_length(dv: DomainView, x: int, y: int, M: float, radius_grid=None,
                         index: _ChainIndex | None = None) -> HarnackChain:
    """Shortest ``M``-Harnack chain from ``x`` to ``y`` over a fixed ball family.

    Balls are ``{d < r}`` with ``r`` from ``radius_grid`` and ``r <= delta_U(center)``;
    their cores are the closed balls ``{d <= r/M}``.  Two balls are linked when
    their cores share a vertex.
    """
    if M <= 1:
        raise ValueError("M must exceed 1")
    if not (dv.is_interior[x] and dv.is_interior[y]):
        raise ValueError("chain endpoints must lie in U")
    if index is None:
        index = _ChainIndex(dv, M, dyadic_radii(dv) if radius_grid is None else radius_grid)
    N, balls = index.bfs(int(x), int(y))
    return HarnackChain(N, balls, M)


def chain_index(dv: DomainView, M: float, radius_grid=None) -> _ChainIndex:
    """Precompute the ball family once for repeated chain queries."""
    return _ChainIndex(dv, M, dyadic_radii(dv) if radius_grid is None else radius_grid)
