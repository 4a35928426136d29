"""Green kernels, capacities, harmonic measure and maximum-principle checks.

Conventions
-----------
For a vertex set ``Omega`` the Dirichlet matrix is ``A = (diag(w_x) - W)[Omega, Omega]``
with ``w_x`` summed over *all* neighbours.  The Green kernel is ``g = A^-1``; it
does not depend on the vertex measure, and the Green operator is ``A^-1 M``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .errors import BadNesting, HypothesisFailed, NoBoundary, SolverDivergence
from .graph_core import WeightedGraph, dirichlet_energy

DEFAULT_TOL = 1e-11
MATERIALIZE_LIMIT = 4000
_CHUNK = 512
_BLOCK_ELEMS = 4_000_000


def solver_tolerance() -> float:
    return float(os.environ.get("HARNACK_LAB_SOLVER_TOL", DEFAULT_TOL))


def _as_vertex_array(S, n=None) -> np.ndarray:
    arr = np.unique(np.asarray(list(S) if not isinstance(S, np.ndarray) else S, dtype=np.int64))
    if n is not None and len(arr) and (arr[0] < 0 or arr[-1] >= n):
        raise ValueError("vertex id out of range")
    return arr


class DirichletSolver:
    """Factorized Dirichlet matrix of ``omega``; reusable for many right-hand sides."""

    def __init__(self, g: WeightedGraph, omega, tol: float | None = None, method: str = "direct"):
        self.graph = g
        self.omega = _as_vertex_array(omega, g.n)
        if len(self.omega) == 0:
            raise ValueError("omega is empty")
        self.tol = solver_tolerance() if tol is None else tol
        self.pos = np.full(g.n, -1, dtype=np.int64)
        self.pos[self.omega] = np.arange(len(self.omega))
        L = g.conductance_laplacian
        self.A = L[self.omega][:, self.omega].tocsc()
        inner = np.asarray(g.adjacency[self.omega][:, self.omega].sum(axis=1)).ravel()
        leak = g.degree[self.omega] - inner
        ncomp, labels = csgraph.connected_components(self.A, directed=False)
        leaky = np.zeros(ncomp, dtype=bool)
        leaky[labels[leak > 1e-14 * g.degree[self.omega]]] = True
        if not leaky.all():
            raise NoBoundary("a component of omega has no neighbour outside omega")
        self.components = ncomp
        self.method = method
        self.max_residual = 0.0
        self.norm_inf = float(abs(self.A).sum(axis=1).max())
        if method == "direct":
            self._lu = spla.splu(self.A)
        elif method == "cg":
            self._jacobi = spla.LinearOperator(self.A.shape, matvec=lambda v: v / self.A.diagonal(),
                                               dtype=float)
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, B) -> np.ndarray:
        """Solve ``A X = B`` (``B`` dense or sparse, vector or matrix)."""
        if sp.issparse(B):
            B = B.toarray()
        B = np.asarray(B, dtype=float)
        vec = B.ndim == 1
        B2 = B[:, None] if vec else B
        if self.method == "direct":
            X = self._lu.solve(B2)
        else:
            X = np.empty_like(B2)
            for j in range(B2.shape[1]):
                X[:, j], info = spla.cg(self.A, B2[:, j], rtol=self.tol, atol=0.0,
                                        maxiter=20 * len(self.omega), M=self._jacobi)
        # normwise backward error, per column
        R = self.A @ X - B2
        scale = self.norm_inf * np.abs(X).max(axis=0) + np.abs(B2).max(axis=0)
        res = float((np.abs(R).max(axis=0) / np.maximum(scale, 1e-300)).max()) if B2.size else 0.0
        limit = self.tol if self.method == "direct" else 10 * self.tol
        if res > limit:
            raise SolverDivergence(f"relative residual {res:.3e} exceeds {limit:.1e}")
        self.max_residual = max(self.max_residual, res)
        return X[:, 0] if vec else X

    def unit_columns(self, vertices) -> np.ndarray:
        """Columns of ``A^-1`` for the given omega vertices."""
        idx = self.pos[np.asarray(vertices, dtype=np.int64)]
        if np.any(idx < 0):
            raise ValueError("vertex outside omega")
        out = np.empty((len(self.omega), len(idx)))
        step = self.chunk
        for s in range(0, len(idx), step):
            E = np.zeros((len(self.omega), len(idx[s:s + step])))
            E[idx[s:s + step], np.arange(E.shape[1])] = 1.0
            out[:, s:s + step] = self.solve(E)
        return out

    @property
    def chunk(self) -> int:
        """Right-hand sides per solve, keeping each dense block near ``_BLOCK_ELEMS``."""
        return max(1, min(_CHUNK, _BLOCK_ELEMS // len(self.omega)))

    @property
    def info(self) -> dict:
        return {"method": self.method, "size": int(len(self.omega)), "components": int(self.components),
                "max_relative_residual": self.max_residual, "tol": self.tol}


@dataclass
class GreenTable:
    """Dirichlet Green kernel ``g_Omega`` with row/column access."""

    graph: WeightedGraph
    domain: np.ndarray
    solver: DirichletSolver
    matrix: np.ndarray | None = None

    @property
    def pos(self):
        return self.solver.pos

    @property
    def solver_info(self) -> dict:
        return self.solver.info

    def columns(self, ys) -> np.ndarray:
        """``g(., y)`` over the domain for each ``y`` (``|Omega| x len(ys)``)."""
        ys = np.atleast_1d(np.asarray(ys, dtype=np.int64))
        if self.matrix is not None:
            return self.matrix[:, self.pos[ys]]
        return self.solver.unit_columns(ys)

    def column(self, y) -> np.ndarray:
        return self.columns([y])[:, 0]

    def block(self, xs, ys) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
        ys = np.atleast_1d(np.asarray(ys, dtype=np.int64))
        if self.matrix is not None:
            return self.matrix[np.ix_(self.pos[xs], self.pos[ys])]
        if len(xs) < len(ys):
            return self._sliced_columns(xs, ys).T
        return self._sliced_columns(ys, xs)

    def _sliced_columns(self, cols, rows) -> np.ndarray:
        out = np.empty((len(rows), len(cols)))
        step = self.solver.chunk
        for s in range(0, len(cols), step):
            out[:, s:s + step] = self.solver.unit_columns(cols[s:s + step])[self.pos[rows]]
        return out

    def value(self, x, y) -> float:
        return float(self.block([x], [y])[0, 0])

    def full_column(self, y) -> np.ndarray:
        """``g(., y)`` as a vertex function (zero off the domain)."""
        out = np.zeros(self.graph.n)
        out[self.domain] = self.column(y)
        return out

    def to_csv_rows(self):
        if self.matrix is None:
            raise ValueError("table not materialized")
        for i, x in enumerate(self.domain):
            for j, y in enumerate(self.domain):
                yield int(x), int(y), float(self.matrix[i, j])


def green_table(g: WeightedGraph, omega, materialize_limit: int = MATERIALIZE_LIMIT,
                method: str = "direct", tol: float | None = None) -> GreenTable:
    """``g_Omega = A^-1``; materialized densely when ``|Omega| <= materialize_limit``."""
    solver = DirichletSolver(g, omega, tol=tol, method=method)
    matrix = None
    if len(solver.omega) <= materialize_limit:
        matrix = solver.unit_columns(solver.omega)
    return GreenTable(g, solver.omega, solver, matrix)


def lambda_min(g: WeightedGraph, omega) -> float:
    """Smallest eigenvalue of the pencil ``A u = lambda M u`` on ``omega``."""
    solver = DirichletSolver(g, omega)
    mu = g.measure[solver.omega]
    if len(solver.omega) <= 2000:
        vals = la.eigh(solver.A.toarray(), np.diag(mu), eigvals_only=True, subset_by_index=[0, 0])
        return float(vals[0])
    vals = spla.eigsh(solver.A, k=1, M=sp.diags(mu).tocsc(), sigma=0.0, which="LM",
                      return_eigenvectors=False)
    return float(vals.min())


@dataclass
class EquilibriumPotential:
    potential: np.ndarray
    capacity: float
    energy: float
    flux: float
    target: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def capacity(g: WeightedGraph, D, A) -> EquilibriumPotential:
    """``Cap_D(A)``: minimal energy of ``f = 1`` on ``A``, ``f = 0`` off ``D``."""
    D = _as_vertex_array(D, g.n)
    A = _as_vertex_array(A, g.n)
    if len(D) >= g.n:
        raise NoBoundary("D is the whole graph")
    if not np.all(np.isin(A, D)):
        raise ValueError("A must be a subset of D")
    f = np.zeros(g.n)
    if len(A) == 0:
        return EquilibriumPotential(f, 0.0, 0.0, 0.0, A)
    f[A] = 1.0
    free = np.setdiff1d(D, A)
    if len(free):
        solver = DirichletSolver(g, free)
        rhs = np.asarray(g.adjacency[free][:, A].sum(axis=1)).ravel()
        f[free] = solver.solve(rhs)
    energy = dirichlet_energy(g, f)
    inA = np.zeros(g.n, dtype=bool)
    inA[A] = True
    cross = inA[g.u] != inA[g.v]
    outside = np.where(inA[g.u[cross]], g.v[cross], g.u[cross])
    flux = float(np.dot(g.w[cross], 1.0 - f[outside]))
    return EquilibriumPotential(f, energy, energy, flux, A)


@dataclass
class KernelCone:
    """Harmonic-measure kernels ``K[x, z]`` for rows ``x`` and boundary columns ``z``."""

    x: np.ndarray
    z: np.ndarray
    K: np.ndarray
    omitted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def omega(self, x: int, F) -> float:
        i = int(np.flatnonzero(self.x == x)[0])
        cols = np.isin(self.z, np.asarray(list(F), dtype=np.int64))
        return float(self.K[i, cols].sum())

    def harmonic(self, coeffs) -> np.ndarray:
        """Values on the rows of ``K @ coeffs``."""
        return self.K @ np.asarray(coeffs, dtype=float)


def harmonic_measure_kernel(g: WeightedGraph, omega, rows=None, columns=None,
                            solver: DirichletSolver | None = None) -> KernelCone:
    """Kernel of the exit distribution of ``omega`` on its outer vertex boundary.

    ``K[:, z]`` is the harmonic extension of ``1_z``: ``A K = W[omega, z]``.
    ``rows`` restricts the returned rows; ``columns`` restricts the boundary
    vertices (others are reported as omitted).
    """
    solver = DirichletSolver(g, omega) if solver is None else solver
    omega = solver.omega
    boundary = g.vertex_boundary(omega)
    z = boundary if columns is None else np.intersect1d(boundary, _as_vertex_array(columns))
    omitted = np.setdiff1d(boundary, z)
    x = omega if rows is None else _as_vertex_array(rows)
    if np.any(solver.pos[x] < 0):
        raise ValueError("rows must lie in omega")
    B = g.adjacency[omega][:, z].tocsc()
    if len(x) < len(z):
        # K[x, :] = (A^-1 e_x)^T B since A is symmetric; chunked to bound memory
        K = np.empty((len(x), len(z)))
        step = solver.chunk
        for s in range(0, len(x), step):
            R = solver.unit_columns(x[s:s + step])
            K[s:s + step] = np.asarray((B.T @ R).T)
    else:
        K = np.empty((len(x), len(z)))
        rows_pos = solver.pos[x]
        step = solver.chunk
        for s in range(0, len(z), step):
            K[:, s:s + step] = solver.solve(B[:, s:s + step])[rows_pos]
    np.clip(K, 0.0, None, out=K)
    return KernelCone(x, z, K, omitted)


def solve_dirichlet(g: WeightedGraph, omega, boundary_data, solver=None) -> np.ndarray:
    """Harmonic on ``omega`` with prescribed values elsewhere.

    ``boundary_data`` is a full vertex function or a ``{vertex: value}`` mapping
    over the outer boundary; unspecified outside vertices are 0.
    """
    solver = DirichletSolver(g, omega) if solver is None else solver
    if isinstance(boundary_data, dict):
        data = np.zeros(g.n)
        for k, val in boundary_data.items():
            data[int(k)] = float(val)
    else:
        data = np.array(boundary_data, dtype=float)
        if data.shape != (g.n,):
            raise ValueError("boundary data must be a full vertex function or a mapping")
    if not np.all(np.isfinite(data)):
        raise ValueError("boundary data must be finite")
    u = data.copy()
    u[solver.omega] = 0.0
    rhs = g.adjacency[solver.omega] @ u
    u[solver.omega] = solver.solve(rhs)
    return u


# -- maximum principles --------------------------------------------------------------


@dataclass
class MaxPrincipleReport:
    inf_holds: bool
    sup_holds: bool
    inf_closure: float
    inf_boundary: float
    sup_outside: float
    sup_boundary: float
    boundary: np.ndarray

    @property
    def holds(self) -> bool:
        return self.inf_holds and self.sup_holds


def check_maximum_principles(gt: GreenTable, x0: int, W, tol: float = 1e-10) -> MaxPrincipleReport:
    """Both Green maximum principles for ``x0 in W`` with ``W`` well inside ``Omega``.

    ``dW`` is the outer vertex boundary of ``W``.  Discretely the infimum clause
    is taken over ``(W u dW) \\ {x0}``.
    """
    g = gt.graph
    W = _as_vertex_array(W, g.n)
    in_omega = np.zeros(g.n, dtype=bool)
    in_omega[gt.domain] = True
    dW = g.vertex_boundary(W)
    if x0 not in set(W.tolist()) or not in_omega[W].all() or not in_omega[dW].all():
        raise BadNesting("need x0 in W, W and its vertex boundary inside Omega")
    col = gt.full_column(x0)
    scale = col.max()
    rest = np.setdiff1d(np.union1d(W, dW), [x0])
    outside = np.setdiff1d(gt.domain, W)
    inf_b = float(col[dW].min()) if len(dW) else np.inf
    sup_b = float(col[dW].max()) if len(dW) else 0.0
    inf_c = float(col[rest].min()) if len(rest) else np.inf
    sup_o = float(col[outside].max()) if len(outside) else 0.0
    inf_ok = bool(len(dW) == 0 or abs(inf_c - inf_b) <= tol * scale)
    sup_ok = bool(len(outside) == 0 or abs(sup_o - sup_b) <= tol * scale)
    return MaxPrincipleReport(inf_ok, sup_ok, inf_c, inf_b, sup_o, sup_b, dW)


@dataclass
class DominationReport:
    holds: bool
    worst_vertex: int | None
    worst_margin: float
    sphere: np.ndarray


def check_green_domination(gt: GreenTable, y: int, y_star: int, r: float, c0: float,
                           tol: float = 1e-10) -> DominationReport:
    """Propagate ``g(y, .) >= c0 g(y*, .)`` from the sphere around ``y*`` outward.

    The sphere is the outer vertex boundary of ``B(y*, r) = {d < r}``.  Raises
    :class:`HypothesisFailed` when the premise is false on the sphere.
    """
    g = gt.graph
    B = g.ball(y_star, r)
    sphere = g.vertex_boundary(B)
    in_omega = np.zeros(g.n, dtype=bool)
    in_omega[gt.domain] = True
    if not (in_omega[B].all() and in_omega[sphere].all() and in_omega[y]):
        raise BadNesting("B(y*, r) must be compactly inside Omega")
    gy, gs = gt.full_column(y), gt.full_column(y_star)
    scale = max(gy.max(), gs.max())
    if np.any(gy[sphere] < c0 * gs[sphere] - tol * scale):
        raise HypothesisFailed("premise fails on the sphere")
    region = np.setdiff1d(gt.domain, np.union1d(B, [y]))
    if len(region) == 0:
        return DominationReport(True, None, np.inf, sphere)
    margin = gy[region] - c0 * gs[region]
    i = int(np.argmin(margin))
    return DominationReport(bool(margin[i] >= -tol * scale), int(region[i]), float(margin[i]), sphere)


def semigroup_green_consistency(g: WeightedGraph, omega, T: float, steps: int | None = None) -> float:
    """``max |A^-1 M - int_0^T exp(-t M^-1 A) dt|`` by composite Simpson quadrature."""
    omega = _as_vertex_array(omega, g.n)
    if len(omega) > 12:
        raise ValueError("semigroup check is limited to |Omega| <= 12")
    solver = DirichletSolver(g, omega)
    A = solver.A.toarray()
    mu = g.measure[omega]
    G_op = la.solve(A, np.diag(mu))
    if T <= 0:
        return float(np.abs(G_op).max())
    L = A / mu[:, None]
    lam_max = float(np.max(np.abs(np.linalg.eigvals(L))))
    if steps is None:
        steps = int(np.ceil(T * lam_max / 0.02))
    steps = max(2, steps + steps % 2)
    h = T / steps
    step = la.expm(-h * L)
    P = np.eye(len(omega))
    acc = P.copy()
    for k in range(1, steps + 1):
        P = P @ step
        acc += (4.0 if k % 2 else 2.0) * P if k < steps else P
    integral = acc * h / 3.0
    return float(np.abs(G_op - integral).max())
