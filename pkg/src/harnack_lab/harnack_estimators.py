"""Harnack-type constants measured on finite weighted graphs.

All sup-over-cone quantities are reduced to finite column scans through
:func:`extremal_ray_constant`: for a kernel matrix ``K >= 0`` the ratio
``(K c)[i] / (K c)[j]`` over ``c >= 0`` is a linear-fractional function on a
simplex, so its maximum is attained at a single column.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain_geometry import DomainView, harnack_chain_length, shell_point
from .errors import DegenerateDomain, EmptyHalfBall, NoBoundary, PatchExceeded, HypothesisFailed, BadNesting
from .graph_core import WeightedGraph, laplacian_apply
from .potential_theory import (DirichletSolver, capacity, green_table, harmonic_measure_kernel,
                               solve_dirichlet)

ZERO_KERNEL = 1e-300


def extremal_ray_constant(K: np.ndarray):
    """``max_j max_i K[i, j] / min_i K[i, j]`` with the witnessing indices.

    Returns ``(value, (i_max, i_min, j), excluded)`` where ``excluded`` lists
    columns whose minimum is below :data:`ZERO_KERNEL`.
    """
    K = np.asarray(K, dtype=float)
    lo = K.min(axis=0)
    hi = K.max(axis=0)
    ok = lo > ZERO_KERNEL
    excluded = np.flatnonzero(~ok)
    if not ok.any():
        raise DegenerateDomain("every kernel column vanishes somewhere on the region")
    ratio = np.full(K.shape[1], -np.inf)
    ratio[ok] = hi[ok] / lo[ok]
    j = int(np.argmax(ratio))
    return float(ratio[j]), (int(np.argmax(K[:, j])), int(np.argmin(K[:, j])), j), excluded


def cone_ratio(K: np.ndarray, coeffs) -> float:
    """``max u / min u`` for ``u = K @ coeffs`` on the rows of ``K``."""
    u = np.asarray(K, dtype=float) @ np.asarray(coeffs, dtype=float)
    return float(u.max() / u.min())


# -- EHI ------------------------------------------------------------------------------


def ehi_kernel(g: WeightedGraph, center: int, R: float, delta: float):
    """Kernel of ``B(center, R)`` restricted to rows ``B(center, delta R)`` (closed)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if delta * R < g.mesh * (1 - 1e-12):
        raise EmptyHalfBall(f"delta R = {delta * R} is below the mesh {g.mesh}")
    d = g.distances(center, limit=R)
    ball = np.flatnonzero(d < R)
    half = np.flatnonzero(d <= delta * R * (1 + 1e-12))
    if len(g.vertex_boundary(ball)) == 0:
        raise NoBoundary(f"B({center}, {R}) is the whole graph")
    return harmonic_measure_kernel(g, ball, rows=half)


def ehi_constant(g: WeightedGraph, center: int, R: float, delta: float):
    """Sharp EHI constant of ``B(center, R)`` on the closed ball ``B(center, delta R)``.

    Returns ``(C_H, (x1, x2, z))``: ``K(x1, z) / K(x2, z) = C_H``.
    """
    kc = ehi_kernel(g, center, R, delta)
    value, (i, j, col), _ = extremal_ray_constant(kc.K)
    return value, (int(kc.x[i]), int(kc.x[j]), int(kc.z[col]))


@dataclass
class EhiEntry:
    center: int
    R: float
    delta: float
    C_H: float
    witness: tuple
    excluded_columns: int = 0


@dataclass
class EhiScanResult:
    entries: list
    summary: float
    scale_stability: float
    per_scale: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"sup": self.summary, "scale_stability": self.scale_stability,
                "per_scale": {str(k): v for k, v in self.per_scale.items()},
                "witnesses": [[e.center, e.R, list(e.witness), e.C_H] for e in self.entries]}

    def csv_rows(self):
        yield ("center", "R", "delta", "C_H", "x1", "x2", "z")
        for e in self.entries:
            yield (e.center, e.R, e.delta, e.C_H, *e.witness)


def _scale_stability(per_scale: dict) -> float:
    """Largest factor between the sup constants of consecutive radii (either direction)."""
    radii = sorted(per_scale)
    worst = 1.0
    for a, b in zip(radii, radii[1:]):
        q = per_scale[b] / per_scale[a]
        worst = max(worst, q, 1.0 / q)
    return worst


def ehi_scan(g: WeightedGraph, centers, radii, delta: float, jobs: int = 1) -> EhiScanResult:
    """Tabulate :func:`ehi_constant` over ``centers x radii``."""
    tasks = sorted({(int(c), float(R)) for c in centers for R in radii}, key=lambda t: (t[1], t[0]))

    def one(t):
        kc = ehi_kernel(g, t[0], t[1], delta)
        value, (i, j, col), excl = extremal_ray_constant(kc.K)
        return EhiEntry(t[0], t[1], delta, value, (int(kc.x[i]), int(kc.x[j]), int(kc.z[col])), len(excl))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            entries = list(ex.map(one, tasks))
    else:
        entries = [one(t) for t in tasks]
    per_scale: dict = {}
    for e in entries:
        per_scale[e.R] = max(per_scale.get(e.R, 1.0), e.C_H)
    return EhiScanResult(entries, max(e.C_H for e in entries), _scale_stability(per_scale), per_scale)


# -- capacitary width ---------------------------------------------------------------------


@dataclass
class CapacitaryWidthResult:
    V: np.ndarray
    eta: float
    w: float
    certificate: dict
    tested: np.ndarray

    def to_json(self) -> dict:
        return {"eta": self.eta, "w": self.w, "size_V": int(len(self.V)),
                "tested": int(len(self.tested)),
                "certificate": {str(k): v for k, v in self.certificate.items()}}


def capacity_ratio(g: WeightedGraph, V_mask: np.ndarray, x: int, r: float) -> float:
    """``Cap_{B(x,2r)}(closed B(x,r) minus V) / Cap_{B(x,2r)}(closed B(x,r))``."""
    d = g.distances(x, limit=2 * r)
    D = np.flatnonzero(d < 2 * r)
    ball = np.flatnonzero(d <= r * (1 + 1e-12))
    if len(D) >= g.n:
        raise PatchExceeded(f"B({x}, {2 * r}) covers the whole graph")
    rest = ball[~V_mask[ball]]
    if len(rest) == 0:
        return 0.0
    if len(rest) == len(ball):
        return 1.0
    return capacity(g, D, rest).capacity / capacity(g, D, ball).capacity


def capacitary_width(g: WeightedGraph, V, eta: float, r_grid, test_points=None) -> CapacitaryWidthResult:
    """Smallest grid radius at which ``V`` is capacity-thin around every tested point.

    ``test_points`` (default: all of ``V``) restricts where the ratio
    condition is evaluated.  Returns ``w = inf`` when no grid radius works.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    V = np.unique(np.asarray(list(V), dtype=np.int64))
    mask = np.zeros(g.n, dtype=bool)
    mask[V] = True
    pts = V if test_points is None else np.unique(np.asarray(list(test_points), dtype=np.int64))
    grid = sorted(float(r) for r in r_grid)
    if len(pts) == 0:
        return CapacitaryWidthResult(V, eta, grid[0], {}, pts)
    order = list(pts)
    for r in grid:
        cert = {}
        for k, x in enumerate(order):
            q = capacity_ratio(g, mask, int(x), r)
            cert[int(x)] = q
            if q < eta:
                # test the failing point first at the next radius
                order.insert(0, order.pop(k))
                break
        else:
            return CapacitaryWidthResult(V, eta, r, cert, pts)
    return CapacitaryWidthResult(V, eta, math.inf, {}, pts)


def width_grid(mesh: float, upper: float) -> list:
    """Radii ``mesh, 2 mesh, ...`` up to ``8 mesh``, then geometric with ratio about 1.1."""
    lin = mesh * np.arange(1, 9)
    geo = mesh * np.unique(np.round(np.geomspace(8, max(upper / mesh, 9), 40)))
    return sorted(set(np.round(np.concatenate([lin, geo]), 9).tolist()))


@dataclass
class LinearBoundReport:
    eta: float
    ratios: dict
    widths: dict
    A1: float
    spread: float

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.A1) and self.spread <= 2.0

    def to_json(self) -> dict:
        return {"eta": self.eta, "A1": self.A1, "spread": self.spread, "bounded": self.bounded,
                "ratios": {str(k): v for k, v in self.ratios.items()},
                "widths": {str(k): v for k, v in self.widths.items()}}


def near_boundary_set(dv: DomainView, r: float) -> np.ndarray:
    """``{x in U : delta_U(x) < r}`` as closure-graph ids."""
    return dv.interior[dv.delta[dv.interior] < r]


def cw_linear_bound_check(inst, eta: float, r_list, center: int | None = None, window: float = 2.0,
                          max_points: int = 24, seed: int = 0) -> LinearBoundReport:
    """Measure ``w_eta({delta_U < r}) / r`` over ``r_list`` on a gallery instance.

    Capacities are taken in the ambient space.  The ratio condition is
    evaluated at up to ``max_points`` points of the set within intrinsic
    distance ``window * r`` of ``center`` (stratified by boundary distance).
    """
    dv = inst.domain
    mesh = dv.mesh
    rng = np.random.default_rng(seed)
    ratios, widths = {}, {}
    for r in sorted(r_list):
        if r < mesh:
            raise ValueError(f"r = {r} is below the mesh")
        Vc = near_boundary_set(dv, r)
        V_amb = inst.to_ambient[Vc]
        pts = Vc
        if center is not None:
            d = dv.distances_from(center, limit=window * r)
            pts = Vc[d[Vc] <= window * r]
        pts = _stratified(pts, dv.delta, max_points, rng)
        res = capacitary_width(inst.ambient, V_amb, eta, width_grid(inst.ambient.mesh, 8 * r),
                               test_points=inst.to_ambient[pts])
        widths[r] = res.w
        ratios[r] = res.w / r
    vals = list(ratios.values())
    A1 = max(vals)
    spread = max(vals) / min(vals) if min(vals) > 0 else math.inf
    return LinearBoundReport(eta, ratios, widths, A1, spread)


def _stratified(pts, delta, k, rng):
    if len(pts) <= k:
        return pts
    levels = np.unique(np.round(delta[pts], 9))
    picks = []
    per = max(1, k // len(levels))
    for lv in levels:
        group = pts[np.round(delta[pts], 9) == lv]
        picks.extend(rng.choice(group, size=min(per, len(group)), replace=False).tolist())
    return np.unique(np.asarray(picks[: max(k, len(levels))], dtype=np.int64))


# -- harmonic measure decay ----------------------------------------------------------------


@dataclass
class DecayFit:
    radii: list
    omega: list
    width: float
    slope: float
    r_squared: float
    flat: bool

    def to_json(self) -> dict:
        return {"radii": self.radii, "omega": self.omega, "width": self.width,
                "slope": self.slope, "r_squared": self.r_squared, "flat": self.flat}


def sphere_exit_probability(g: WeightedGraph, V_mask: np.ndarray, x: int, r: float) -> float:
    """``omega(x, V on the sphere of B(x, r), V cap B(x, r))``."""
    d = g.distances(x, limit=r + g.mesh * 2)
    trace = np.flatnonzero((d < r) & V_mask)
    if len(trace) == 0:
        raise DegenerateDomain(f"V cap B({x}, {r}) is empty")
    comp = _component(g, trace, x)
    bd = g.vertex_boundary(comp)
    if len(bd) == 0:
        raise DegenerateDomain("trace domain has no boundary")
    sphere = bd[V_mask[bd] & (d[bd] >= r - 1e-12)]
    if len(sphere) == 0:
        return 0.0
    data = np.zeros(g.n)
    data[sphere] = 1.0
    return float(solve_dirichlet(g, comp, data)[x])


def _component(g: WeightedGraph, S, x):
    """Connected component of ``x`` inside the induced subgraph on ``S``."""
    from scipy.sparse.csgraph import connected_components
    S = np.asarray(S)
    sub = g.adjacency[S][:, S]
    _, labels = connected_components(sub, directed=False)
    k = labels[np.searchsorted(S, x)]
    return S[labels == k]


def hm_decay_check(g: WeightedGraph, V, x: int, r_list, eta: float = 0.1, width: float | None = None,
                   width_points=None) -> DecayFit:
    """Fit ``log omega`` against ``r / w_eta(V)``; slope should be negative for thin ``V``."""
    V = np.unique(np.asarray(list(V), dtype=np.int64))
    mask = np.zeros(g.n, dtype=bool)
    mask[V] = True
    if not mask[x]:
        raise DegenerateDomain("x must lie in V")
    if width is None:
        pts = [x] if width_points is None else width_points
        width = capacitary_width(g, V, eta, width_grid(g.mesh, 8 * max(r_list)), test_points=pts).w
    radii = sorted(float(r) for r in r_list)
    om = [sphere_exit_probability(g, mask, x, r) for r in radii]
    t = np.asarray(radii) / width
    flat = bool(np.all(np.abs(np.asarray(om) - 1.0) < 1e-9))
    if flat or min(om) <= 0:
        return DecayFit(radii, om, width, 0.0, 0.0 if not flat else 1.0, True)
    y = np.log(om)
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return DecayFit(radii, om, width, float(coef[0]), r2, False)


# -- harmonic measure versus Green function -------------------------------------------------


@dataclass
class GreenBoundReport:
    C4: float
    xi: int
    xi_r: int
    xi_prime: int
    worst_x: int
    r: float
    A2: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def proper_inner_ball(dv: DomainView, xi: int, radius: float, frame=()) -> np.ndarray:
    """Interior of ``B_U(xi, radius)``; rejects balls whose closure reaches the frame."""
    d = dv.distances_from(xi)
    frame = np.asarray(list(frame), dtype=np.int64)
    if len(frame) and np.min(d[frame]) < radius + dv.mesh * (1 - 1e-9):
        raise PatchExceeded(f"B_U({xi}, {radius}) reaches the artificial frame")
    ball = dv.inner_ball(xi, radius)
    if len(ball) == 0:
        raise DegenerateDomain("empty inner ball")
    return ball


def hm_green_bound(dv: DomainView, xi: int, r: float, A2: float, c_U: float, frame=()) -> GreenBoundReport:
    """Ratio of harmonic measure of the ``2r`` sphere to the normalized Green function.

    ``xi_r`` sits at intrinsic distance ``4r`` from ``xi`` with clearance
    ``2 c_U r``; ``xi'_r`` at distance ``c_U r`` from ``xi_r``.
    """
    g = dv.graph
    xi_r = shell_point(dv, xi, 4 * r, 2 * c_U * r)
    xi_p = shell_point(dv, xi_r, c_U * r, 0.0)
    D = proper_inner_ball(dv, xi, A2 * r, frame)
    gt = green_table(g, D, materialize_limit=0)
    col = gt.full_column(xi_r)
    inner2 = dv.inner_ball(xi, 2 * r)
    bd = g.vertex_boundary(inner2)
    sphere = bd[dv.is_interior[bd]]
    data = np.zeros(g.n)
    data[sphere] = 1.0
    omega = solve_dirichlet(g, inner2, data)
    xs = dv.inner_ball(xi, r)
    lhs = omega[xs]
    rhs = col[xs] / col[xi_p]
    q = np.where(lhs > 0, lhs / rhs, 0.0)
    k = int(np.argmax(q))
    return GreenBoundReport(float(q[k]), int(xi), int(xi_r), int(xi_p), int(xs[k]), float(r), float(A2))


# -- Green function comparisons ---------------------------------------------------------------


@dataclass
class ComparisonResult:
    kind: str
    constant: float
    checks: list  # (name, lhs, rhs, holds)

    @property
    def holds(self) -> bool:
        return all(c[3] for c in self.checks)

    def to_json(self) -> dict:
        return {"kind": self.kind, "constant": self.constant, "holds": self.holds,
                "checks": [{"name": n, "lhs": a, "rhs": b, "holds": h} for n, a, b, h in self.checks]}


def _ball(g, d, r, closed=False):
    return np.flatnonzero(d <= r * (1 + 1e-12)) if closed else np.flatnonzero(d < r)


def _proper(g, D, what):
    if len(D) >= g.n or len(g.vertex_boundary(D)) == 0:
        raise BadNesting(f"{what} is not a proper subset of the graph")
    return D


def _le(name, a, b, tol=1e-9):
    return (name, float(a), float(b), bool(a <= b * (1 + tol) + tol * 1e-3))


def green_comparison(g: WeightedGraph, cfg: dict) -> ComparisonResult:
    """One comparison config: ``{"kind": "a"|"b"|"c"|"d", "x0", "r", ...}``."""
    kind = cfg["kind"]
    x0, r = int(cfg["x0"]), float(cfg["r"])
    d = g.distances(x0)
    if kind == "a":
        A1, A2 = float(cfg["A1"]), float(cfg["A2"])
        if A1 <= 1 or A2 <= 1:
            raise BadNesting("need A1, A2 > 1")
        D = _proper(g, _ball(g, d, cfg.get("D_factor", A1) * r), "D")
        B = _ball(g, d, r)
        if not np.all(np.isin(_ball(g, d, A1 * r), D)):
            raise BadNesting("B(x0, A1 r) must lie in D")
        G = green_table(g, D, materialize_limit=0).block(B, B)
        far = np.zeros((len(B), len(B)), dtype=bool)
        for i, x in enumerate(B):
            far[i] = g.distances(int(x), limit=r / A2)[B] >= r / A2
        if not far.any():
            raise BadNesting("no pair at separation r/A2")
        vals = G[far]
        C0 = float(vals.max() / vals.min())
        return ComparisonResult("a", C0, [_le("C0>=1", 1.0, C0)])
    if kind == "b":
        A = float(cfg["A"])
        if A <= 1:
            raise BadNesting("need A > 1")
        D = _proper(g, _ball(g, d, A * r), "D")
        closed = _ball(g, d, r, closed=True)
        opened = _ball(g, d, r)
        if not np.all(np.isin(closed, D)):
            raise BadNesting("closed ball must lie in D")
        inside = np.zeros(g.n, dtype=bool)
        inside[closed] = True
        sphere = np.unique(np.concatenate([g.u[inside[g.u] & ~inside[g.v]], g.v[inside[g.v] & ~inside[g.u]]]))
        col = green_table(g, D, materialize_limit=0).full_column(x0)
        m = float(col[sphere].min())
        cap_closed = capacity(g, D, closed).capacity
        cap_open = capacity(g, D, opened).capacity
        checks = [_le("inf_sphere_g<=1/Cap(closed)", m, 1 / cap_closed),
                  _le("1/Cap(closed)<=1/Cap(open)", 1 / cap_closed, 1 / cap_open)]
        return ComparisonResult("b", (1 / cap_open) / m, checks)
    if kind == "c":
        A1, A2, a = float(cfg["A1"]), float(cfg["A2"]), float(cfg["a"])
        if not (1 <= A1 <= A2 and 0 < a <= 1):
            raise BadNesting("need 1 <= A1 <= A2 and 0 < a <= 1")
        D1 = _proper(g, _ball(g, d, A1 * r), "B(x0, A1 r)")
        D2 = _proper(g, _ball(g, d, A2 * r), "B(x0, A2 r)")
        small = _ball(g, d, a * r)
        big = _ball(g, d, r)
        if len(small) == 0:
            raise BadNesting("B(x0, a r) is empty")
        c_small = capacity(g, D2, small).capacity
        c_big = capacity(g, D1, big).capacity if len(np.setdiff1d(D1, big)) else math.inf
        if not math.isfinite(c_big):
            raise BadNesting("B(x0, r) must be strictly inside B(x0, A1 r)")
        return ComparisonResult("c", c_big / c_small, [_le("Cap2(aB)<=Cap1(B)", c_small, c_big)])
    if kind == "d":
        A1, A2 = float(cfg["A1"]), float(cfg["A2"])
        if not A2 > A1 >= 2:
            raise BadNesting("need A2 > A1 >= 2")
        ys = np.flatnonzero(np.abs(d - r) <= 1e-9 * max(r, 1))
        if len(ys) == 0:
            raise BadNesting(f"no vertex at distance exactly {r}")
        D1 = _proper(g, _ball(g, d, A1 * r), "B(x, A1 r)")
        D2 = _proper(g, _ball(g, d, A2 * r), "B(x, A2 r)")
        g1 = green_table(g, D1, materialize_limit=0).full_column(x0)[ys]
        g2 = green_table(g, D2, materialize_limit=0).full_column(x0)[ys]
        k = int(np.argmin(g1 - g2))
        checks = [_le("g_A1<=g_A2", g1[k], g2[k])]
        return ComparisonResult("d", float(np.max(g2 / g1)), checks)
    raise ValueError(f"unknown comparison kind {kind!r}")


def green_comparison_suite(g: WeightedGraph, configs) -> list:
    return [green_comparison(g, c) for c in configs]


# -- chaining -----------------------------------------------------------------------------------


@dataclass
class ChainCheck:
    holds: bool
    N: int
    C_H: float
    ratio: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def inner_ball_ehi(dv: DomainView, center: int, rho: float, M: float) -> float:
    """EHI constant of the inner ball ``{d_U < rho}`` on its core ``{d_U <= rho / M}``."""
    d = dv.distances_from(center)
    ball = np.flatnonzero((d < rho) & dv.is_interior)
    core = np.flatnonzero((d <= rho / M * (1 + 1e-12)) & dv.is_interior)
    kc = harmonic_measure_kernel(dv.graph, ball, rows=core)
    return extremal_ray_constant(kc.K)[0]


def harnack_chain_consequence_check(dv: DomainView, u, x1: int, x2: int, M: float,
                                    C_H: float | None = None, tol: float = 1e-9) -> ChainCheck:
    """Check ``C_H^-N u(x1) <= u(x2) <= C_H^N u(x1)`` along a shortest Harnack chain."""
    u = np.asarray(u, dtype=float)
    if np.any(u[dv.interior] < 0):
        raise HypothesisFailed("u must be non-negative")
    lap = laplacian_apply(dv.graph, u)[dv.interior] * dv.graph.measure[dv.interior]
    scale = float(np.max(np.abs(u))) * float(np.max(dv.graph.degree)) or 1.0
    if np.max(np.abs(lap)) > 1e-8 * scale:
        raise HypothesisFailed("u is not harmonic on the domain")
    chain = harnack_chain_length(dv, x1, x2, M)
    if C_H is None:
        C_H = max(inner_ball_ehi(dv, c, rho, M) for c, rho in chain.balls)
    a, b = u[x1], u[x2]
    N = chain.length
    bound = C_H ** N
    ratio = b / a if a > 0 else (1.0 if b == 0 else math.inf)
    holds = bool(b <= bound * a * (1 + tol) and a <= bound * b * (1 + tol))
    return ChainCheck(holds, N, float(C_H), float(ratio))
