"""Weighted graphs, Dirichlet energy, generator action and cable refinement.

Edges are undirected and stored once as parallel arrays ``(u, v, w)``.
The energy of ``f`` is ``sum_e w_e (f(u_e) - f(v_e))**2``.  The generator is
``Lf(x) = mu(x)^-1 sum_y w_xy (f(y) - f(x))`` so that
``<-Lf, g>_mu = E(f, g)``.
"""
from __future__ import annotations

import json
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import (
    DisconnectedGraph,
    DuplicateEdge,
    GraphError,
    NonpositiveFactor,
    NonpositiveWeight,
)

UNIT_MASS = "unit"
DEGREE_MASS = "degree"
CABLE_MASS = "cable"
RETAIN_MASS = "retain"


class WeightedGraph:
    """Immutable connected weighted graph on vertices ``0..n-1``.

    ``lengths`` are per-edge path lengths used by every metric computation
    (default 1).  ``coords`` is an optional ``(n, d)`` array used by builders
    and plots only.
    """

    def __init__(self, n, u, v, w, measure, coords=None, lengths=None):
        self.n = int(n)
        self.u = np.asarray(u, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.int64)
        self.w = np.asarray(w, dtype=float)
        self.measure = np.asarray(measure, dtype=float)
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        if lengths is None:
            lengths = np.ones(len(self.w))
        self.lengths = np.asarray(lengths, dtype=float)
        for arr in (self.u, self.v, self.w, self.measure, self.lengths):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        if self.n < 1:
            raise GraphError("graph needs at least one vertex")
        if not (len(self.u) == len(self.v) == len(self.w) == len(self.lengths)):
            raise GraphError("edge arrays differ in length")
        if len(self.w) and (np.any(self.u < 0) or np.any(self.v < 0)
                            or max(self.u.max(), self.v.max()) >= self.n):
            raise GraphError("edge endpoint outside vertex range")
        if np.any(self.u == self.v):
            raise GraphError("self-loops are not allowed")
        if not np.all(np.isfinite(self.w)) or np.any(self.w <= 0):
            raise NonpositiveWeight("edge weights must be positive and finite")
        if not np.all(np.isfinite(self.lengths)) or np.any(self.lengths <= 0):
            raise GraphError("edge lengths must be positive and finite")
        if self.measure.shape != (self.n,):
            raise GraphError("measure must have one entry per vertex")
        if not np.all(np.isfinite(self.measure)) or np.any(self.measure <= 0):
            raise GraphError("vertex measure must be positive")
        if self.coords is not None and len(self.coords) != self.n:
            raise GraphError("coords must have one row per vertex")
        if self.n > 1:
            ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
            if ncomp != 1:
                raise DisconnectedGraph(f"graph has {ncomp} components")

    @property
    def m(self) -> int:
        return len(self.w)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric conductance matrix ``W[x, y] = w_xy``."""
        W = sp.coo_matrix((np.r_[self.w, self.w], (np.r_[self.u, self.v], np.r_[self.v, self.u])),
                          shape=(self.n, self.n))
        return W.tocsr()

    @cached_property
    def length_adjacency(self) -> sp.csr_matrix:
        L = sp.coo_matrix((np.r_[self.lengths, self.lengths],
                           (np.r_[self.u, self.v], np.r_[self.v, self.u])),
                          shape=(self.n, self.n))
        return L.tocsr()

    @cached_property
    def degree(self) -> np.ndarray:
        """``w_x = sum_y w_xy``."""
        d = np.bincount(self.u, self.w, minlength=self.n) + np.bincount(self.v, self.w, minlength=self.n)
        d.setflags(write=False)
        return d

    @cached_property
    def conductance_laplacian(self) -> sp.csr_matrix:
        """``A = diag(w_x) - W``; satisfies ``f @ A @ f == E(f, f)``."""
        return (sp.diags(self.degree) - self.adjacency).tocsr()

    @cached_property
    def mesh(self) -> float:
        return float(self.lengths.max()) if self.m else 1.0

    def neighbors(self, x: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[x]:A.indptr[x + 1]]

    def edge_list(self):
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def distances(self, sources, limit: float = np.inf) -> np.ndarray:
        """Shortest-path lengths from ``sources`` (int or list; min over the list)."""
        if np.isscalar(sources):
            return csgraph.dijkstra(self.length_adjacency, directed=False,
                                    indices=int(sources), limit=limit)
        return csgraph.dijkstra(self.length_adjacency, directed=False,
                                indices=np.asarray(sources, dtype=np.int64),
                                limit=limit, min_only=True)

    def ball(self, center: int, r: float, closed: bool = False) -> np.ndarray:
        d = self.distances(center, limit=r + 1e-9 if closed else r)
        hit = d <= r + 1e-9 if closed else d < r - 1e-12
        return np.flatnonzero(hit)

    def vertex_boundary(self, S) -> np.ndarray:
        """Vertices outside ``S`` with a neighbour in ``S``."""
        mask = np.zeros(self.n, dtype=bool)
        mask[np.asarray(S, dtype=np.int64)] = True
        reach = self.adjacency[np.flatnonzero(mask)].indices
        out = np.zeros(self.n, dtype=bool)
        out[reach] = True
        return np.flatnonzero(out & ~mask)

    def with_measure(self, measure) -> "WeightedGraph":
        return WeightedGraph(self.n, self.u, self.v, self.w, measure, self.coords, self.lengths)

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        same_coords = (self.coords is None and other.coords is None) or (
            self.coords is not None and other.coords is not None
            and np.array_equal(self.coords, other.coords))
        return (self.n == other.n and np.array_equal(self.u, other.u)
                and np.array_equal(self.v, other.v) and np.array_equal(self.w, other.w)
                and np.array_equal(self.measure, other.measure)
                and np.array_equal(self.lengths, other.lengths) and same_coords)

    __hash__ = None

    def __repr__(self):
        return f"WeightedGraph(n={self.n}, m={self.m})"

    # -- serialization --------------------------------------------------

    def to_text(self, with_measure: bool = True) -> str:
        lines = [f"{self.n} {self.m}"]
        lines += [f"{a} {b} {c!r}" for a, b, c in self.edge_list()]
        if with_measure:
            lines += [repr(float(x)) for x in self.measure]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, measure_policy=DEGREE_MASS) -> "WeightedGraph":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        n, m = int(rows[0][0]), int(rows[0][1])
        edges = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:1 + m]]
        rest = rows[1 + m:]
        if rest:
            if len(rest) != n:
                raise GraphError(f"expected {n} measure lines, got {len(rest)}")
            measure_policy = [float(r[0]) for r in rest]
        return build_graph(edges, measure_policy, n=n)

    def to_json(self) -> dict:
        out = {"vertices": self.n,
               "edges": [[a, b, c] for a, b, c in self.edge_list()],
               "measure": self.measure.tolist()}
        if not np.all(self.lengths == 1.0):
            out["lengths"] = self.lengths.tolist()
        if self.coords is not None:
            out["coords"] = self.coords.tolist()
        return out

    @classmethod
    def from_json(cls, data) -> "WeightedGraph":
        if isinstance(data, str):
            data = json.loads(data)
        edges = [tuple(e) for e in data["edges"]]
        return build_graph(edges, data.get("measure", DEGREE_MASS), n=data["vertices"],
                           coords=data.get("coords"), lengths=data.get("lengths"))


def build_graph(edge_list: Iterable[Sequence], measure_policy=DEGREE_MASS, *, n: int | None = None,
                coords=None, lengths=None) -> WeightedGraph:
    """Build a validated graph from ``(x, y, w)`` triples.

    ``measure_policy`` is ``"unit"``, ``"degree"`` or an explicit per-vertex list.
    """
    edges = list(edge_list)
    if not edges:
        raise GraphError("edge list is empty")
    arr = np.array([(e[0], e[1]) for e in edges], dtype=np.int64)
    w = np.array([e[2] for e in edges], dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise NonpositiveWeight("edge weights must be positive and finite")
    lo, hi = arr.min(axis=1), arr.max(axis=1)
    keys = lo * (int(hi.max()) + 1) + hi
    if len(np.unique(keys)) != len(keys):
        raise DuplicateEdge("an undirected edge appears more than once")
    if n is None:
        n = int(arr.max()) + 1
    deg = np.bincount(arr[:, 0], w, minlength=n) + np.bincount(arr[:, 1], w, minlength=n)
    measure = _resolve_measure(measure_policy, n, deg)
    return WeightedGraph(n, arr[:, 0], arr[:, 1], w, measure, coords, lengths)


def _resolve_measure(policy, n, deg):
    if isinstance(policy, str):
        if policy == UNIT_MASS:
            return np.ones(n)
        if policy == DEGREE_MASS:
            return np.array(deg, dtype=float)
        raise GraphError(f"unknown measure policy {policy!r}")
    measure = np.asarray(policy, dtype=float)
    if measure.shape != (n,):
        raise GraphError("explicit measure must have one entry per vertex")
    return measure


def dirichlet_energy(g: WeightedGraph, f, h=None) -> float:
    """``E(f, h) = sum_e w_e (f(x)-f(y)) (h(x)-h(y))``; ``h`` defaults to ``f``."""
    f = np.asarray(f, dtype=float)
    df = f[g.u] - f[g.v]
    if h is None:
        return float(np.dot(g.w, df * df))
    h = np.asarray(h, dtype=float)
    return float(np.dot(g.w, df * (h[g.u] - h[g.v])))


def laplacian_apply(g: WeightedGraph, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return -(g.conductance_laplacian @ f) / g.measure


def cable_subdivide(g: WeightedGraph, k: int, measure_policy: str = RETAIN_MASS) -> WeightedGraph:
    """Replace each edge by a series path of ``k`` segments of conductance ``k w``.

    New vertex ids follow the originals, edge by edge.  Interior sub-vertices get
    mass ``w/k``.  With ``"cable"`` every vertex instead carries the lumped
    half-segment mass ``sum w/(2k)`` of its incident segments.
    """
    k = int(k)
    if k < 1:
        raise GraphError("k must be a positive integer")
    if k == 1:
        return g
    m, n = g.m, g.n
    new_ids = n + np.arange(m * (k - 1)).reshape(m, k - 1)
    chain = np.column_stack([g.u, new_ids, g.v])  # m x (k+1)
    u = chain[:, :-1].ravel()
    v = chain[:, 1:].ravel()
    w = np.repeat(g.w * k, k)
    lengths = np.repeat(g.lengths / k, k)
    n_new = n + m * (k - 1)
    if measure_policy == CABLE_MASS:
        half = np.repeat(g.w / k, k) / 2
        measure = np.bincount(u, half, minlength=n_new) + np.bincount(v, half, minlength=n_new)
    elif measure_policy == RETAIN_MASS:
        measure = np.concatenate([g.measure, np.repeat(g.w / k, k - 1)])
    else:
        raise GraphError(f"unknown cable measure policy {measure_policy!r}")
    coords = None
    if g.coords is not None:
        t = (np.arange(1, k) / k)[None, :, None]
        pu, pv = g.coords[g.u][:, None, :], g.coords[g.v][:, None, :]
        mid = (pu + t * (pv - pu)).reshape(-1, g.coords.shape[1])
        coords = np.vstack([g.coords, mid])
    return WeightedGraph(n_new, u, v, w, measure, coords, lengths)


def controlled_weights_constant(g: WeightedGraph) -> float:
    """``p0 = min over x ~ y of w_xy / w_x``."""
    d = g.degree
    return float(min(np.min(g.w / d[g.u]), np.min(g.w / d[g.v])))


def rescale(g: WeightedGraph, weight_factor: float = 1.0, measure_factor=1.0) -> WeightedGraph:
    mf = np.asarray(measure_factor, dtype=float)
    if weight_factor <= 0 or np.any(mf <= 0) or not np.all(np.isfinite(mf)):
        raise NonpositiveFactor("scaling factors must be positive")
    return WeightedGraph(g.n, g.u, g.v, g.w * weight_factor, g.measure * mf, g.coords, g.lengths)
