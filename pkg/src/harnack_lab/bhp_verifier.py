"""Boundary Harnack constants and Green cross-ratios near a boundary vertex.

Every constant here has the form ``max_{x, y} [max_z (L_x - L_y) - min_z (L_x - L_y)]``
with ``L = log`` of a positive kernel block, i.e. the diameter of the row set
in the Hilbert projective metric.  The sup over pairs of non-negative
combinations of columns reduces to this column scan (see
:func:`harnack_lab.harnack_estimators.extremal_ray_constant`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .domain_geometry import DomainView, admissible_path, shell_point
from .errors import (BadNesting, DegenerateDomain, EmptyCone, EmptyFreeBoundary, EmptySphere,
                     NoFarPoint, NoSpecialPoint, PatchExceeded)
from .potential_theory import KernelCone, green_table, harmonic_measure_kernel

ZERO_KERNEL = 1e-300
_CHUNK_ELEMS = 4_000_000


@dataclass
class BhpConfig:
    """Scale, enlargement factors and inner-uniformity constants for one boundary vertex.

    ``A2``, ``A3``, ``A4`` default to the values derived from ``(c_U, C_U)``;
    explicit values shrink the radii to fit a finite patch.  ``A0`` defaults to
    ``A5 = A3 + A4``.
    """

    domain: DomainView
    xi: int
    r: float
    c_U: float
    C_U: float
    A0: float | None = None
    A2: float | None = None
    A3: float | None = None
    A4: float | None = None
    frame: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if not 0 < self.c_U <= 1 or self.C_U < 1:
            raise ValueError("need 0 < c_U <= 1 <= C_U")
        if self.A2 is None:
            self.A2 = 2 * (12 + self.C_U)
        if self.A3 is None:
            self.A3 = max(2 + 2 / self.c_U, 7.0)
        if self.A4 is None:
            self.A4 = self.A2 + self.C_U * (self.A3 + 0.25 * self.c_U ** 2 + 8)
        if self.A0 is None:
            self.A0 = self.A5
        self.frame = np.asarray(self.frame, dtype=np.int64)
        dv = self.domain
        if dv.is_interior[self.xi]:
            raise ValueError("xi must be a boundary vertex")
        if self.r < 4 * dv.mesh * (1 - 1e-12):
            raise BadNesting(f"r = {self.r} is below four mesh units ({dv.mesh})")

    @property
    def A5(self) -> float:
        return self.A3 + self.A4

    @property
    def mesh(self) -> float:
        return self.domain.mesh

    def constants(self) -> dict:
        return {"r": self.r, "c_U": self.c_U, "C_U": self.C_U, "A0": self.A0, "A2": self.A2,
                "A3": self.A3, "A4": self.A4, "A5": self.A5}

    def inner_ball(self, factor: float) -> np.ndarray:
        """``B_U(xi, factor r)``, rejected when its closure meets the patch frame."""
        radius = factor * self.r
        dv = self.domain
        if len(self.frame):
            d = dv.distances_from(self.xi)
            if np.min(d[self.frame]) < radius + dv.mesh * (1 - 1e-9):
                raise PatchExceeded(f"B_U(xi, {radius:g}) reaches the frame of the patch")
        ball = dv.inner_ball(self.xi, radius)
        if len(ball) == 0:
            raise DegenerateDomain(f"B_U(xi, {radius:g}) is empty")
        return ball

    def sphere(self, factor: float) -> np.ndarray:
        """``U`` cap the discrete sphere ``{factor r <= d_U < factor r + mesh}``."""
        s = self.domain.shell(self.xi, factor * self.r)
        if len(s) == 0:
            raise EmptySphere(f"no vertex at distance {factor * self.r:g}")
        return s


# -- Hilbert-metric diameter -----------------------------------------------------------------


def hilbert_diameter(K: np.ndarray):
    """``max_{i,j} max_c K[i,c]/K[j,c] * max_c' K[j,c']/K[i,c']`` with witness indices.

    Returns ``(value, (i, j, c, c'))``.
    """
    K = np.asarray(K, dtype=float)
    if K.size == 0:
        raise EmptyCone("empty kernel block")
    if np.any(K <= ZERO_KERNEL):
        raise DegenerateDomain("kernel block has vanishing entries")
    L = np.log(K)
    n = L.shape[0]
    best, arg = -1.0, (0, 0, 0, 0)
    step = max(1, _CHUNK_ELEMS // max(1, n * L.shape[1]))
    for s in range(0, n, step):
        diff = L[s:s + step, None, :] - L[None, :, :]
        hi = diff.max(axis=2)
        lo = diff.min(axis=2)
        span = hi - lo
        k = int(np.argmax(span))
        if span.flat[k] > best:
            i, j = divmod(k, n)
            i += s
            best = float(span.flat[k])
            d = L[i] - L[j]
            arg = (i, j, int(np.argmax(d)), int(np.argmin(d)))
    i, j, c, c2 = arg
    value = (K[i, c] / K[j, c]) * (K[j, c2] / K[i, c2])
    return float(value), arg


def quadruple_ratio(G: np.ndarray, i1: int, i2: int, j1: int, j2: int) -> float:
    """``G[i1,j1] G[i2,j2] / (G[i2,j1] G[i1,j2])``."""
    return float(G[i1, j1] * G[i2, j2] / (G[i2, j1] * G[i1, j2]))


# -- boundary Harnack -------------------------------------------------------------------------


@dataclass
class BhpWitness:
    ratio: float
    x: int
    y: int
    z: int
    z_prime: int
    special: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ratio": self.ratio, "x": self.x, "y": self.y, "z": self.z, "z_prime": self.z_prime,
                "special": self.special}

    def recompute(self, cone: KernelCone) -> float:
        rx = int(np.flatnonzero(cone.x == self.x)[0])
        ry = int(np.flatnonzero(cone.x == self.y)[0])
        cz = int(np.flatnonzero(cone.z == self.z)[0])
        cz2 = int(np.flatnonzero(cone.z == self.z_prime)[0])
        K = cone.K
        return float(K[rx, cz] / K[ry, cz] * K[ry, cz2] / K[rx, cz2])


@dataclass
class BhpResult:
    C1: float
    witness: BhpWitness | None
    cone: KernelCone
    trivial: bool = False

    def to_json(self) -> dict:
        return {"C1": self.C1, "trivial": self.trivial, "columns": int(len(self.cone.z)),
                "rows": int(len(self.cone.x)),
                "witness": None if self.witness is None else self.witness.to_json()}


def _connected(g, S) -> bool:
    ncomp, _ = connected_components(g.adjacency[S][:, S], directed=False)
    return ncomp == 1


def boundary_kernel_cone(cfg: BhpConfig) -> KernelCone:
    """Exit kernels of ``D = B_U(xi, A0 r)`` through its free boundary, rows on ``B_U(xi, r)``.

    Boundary vertices of ``D`` outside ``U`` carry Dirichlet data and are
    listed in ``omitted``.
    """
    dv = cfg.domain
    D = cfg.inner_ball(cfg.A0)
    if not _connected(dv.graph, D):
        raise DegenerateDomain("B_U(xi, A0 r) is disconnected")
    rows = dv.inner_ball(cfg.xi, cfg.r)
    bd = dv.graph.vertex_boundary(D)
    free = bd[dv.is_interior[bd]]
    if len(free) == 0:
        raise EmptyFreeBoundary("the whole boundary of D is Dirichlet")
    return harmonic_measure_kernel(dv.graph, D, rows=rows, columns=free)


def bhp_constant(cfg: BhpConfig) -> BhpResult:
    """Sharp boundary Harnack constant of the free-boundary cone on ``B_U(xi, r)``."""
    try:
        cone = boundary_kernel_cone(cfg)
    except EmptyFreeBoundary:
        return BhpResult(1.0, None, KernelCone(np.zeros(0, np.int64), np.zeros(0, np.int64),
                                               np.zeros((0, 0))), trivial=True)
    if len(cone.x) == 0:
        raise EmptyCone("B_U(xi, r) has no interior vertex")
    if len(cone.z) == 1:
        return BhpResult(1.0, BhpWitness(1.0, int(cone.x[0]), int(cone.x[0]), int(cone.z[0]),
                                         int(cone.z[0])), cone)
    value, (i, j, c, c2) = hilbert_diameter(cone.K)
    w = BhpWitness(value, int(cone.x[i]), int(cone.x[j]), int(cone.z[c]), int(cone.z[c2]))
    return BhpResult(value, w, cone)


# -- Green cross-ratio ------------------------------------------------------------------------


@dataclass
class CrossRatioResult:
    value: float
    x1: int
    x2: int
    y1: int
    y2: int
    exhaustive: bool
    n_x: int
    n_y: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _subsample(pts, k, rng):
    if len(pts) <= k:
        return pts, True
    return np.sort(rng.choice(pts, size=k, replace=False)), False


def green_cross_ratio(cfg: BhpConfig, max_points: int = 400, seed: int = 0) -> CrossRatioResult:
    """Largest ``g_D(x1,y1) g_D(x2,y2) / (g_D(x2,y1) g_D(x1,y2))`` with ``D = B_U(xi, A4 r)``.

    ``x_i`` range over ``B_U(xi, r)`` and ``y_i`` over the ``A3 r`` sphere;
    each set is sampled down to ``max_points`` when larger.
    """
    rng = np.random.default_rng(seed)
    D = cfg.inner_ball(cfg.A4)
    X, ex1 = _subsample(cfg.domain.inner_ball(cfg.xi, cfg.r), max_points, rng)
    Y, ex2 = _subsample(cfg.sphere(cfg.A3), max_points, rng)
    if len(X) == 0:
        raise EmptySphere("B_U(xi, r) has no interior vertex")
    if not np.all(np.isin(Y, D)):
        raise BadNesting("the A3 sphere must lie inside D")
    G = green_table(cfg.domain.graph, D, materialize_limit=0).block(X, Y)
    value, (i, j, c, c2) = hilbert_diameter(G)
    return CrossRatioResult(value, int(X[i]), int(X[j]), int(Y[c]), int(Y[c2]), ex1 and ex2,
                            len(X), len(Y))


def cross_ratio_value(cfg: BhpConfig, x1: int, x2: int, y1: int, y2: int) -> float:
    """Cross-ratio of one quadruple in ``D = B_U(xi, A4 r)``."""
    D = cfg.inner_ball(cfg.A4)
    G = green_table(cfg.domain.graph, D, materialize_limit=0).block([x1, x2], [y1, y2])
    return quadruple_ratio(G, 0, 1, 0, 1)


# -- special points and the comparability decomposition -----------------------------------------


def special_points(cfg: BhpConfig) -> dict:
    """``x*`` on the ``r`` sphere and ``y*`` on the ``A3 r`` sphere, with one-mesh slack."""
    dv = cfg.domain
    try:
        x_star = shell_point(dv, cfg.xi, cfg.r, cfg.c_U * cfg.r)
        y_star = shell_point(dv, cfg.xi, cfg.A3 * cfg.r, cfg.A3 * cfg.c_U * cfg.r)
    except NoFarPoint as exc:
        raise NoSpecialPoint(str(exc)) from exc
    return {"x_star": x_star, "y_star": y_star, "slack": dv.mesh,
            "delta_x_star": float(dv.delta[x_star]), "delta_y_star": float(dv.delta[y_star])}


def last_sphere_point(dv: DomainView, path, center: int, radius: float) -> int:
    """Last vertex of ``path`` in the shell ``[radius, radius + mesh)`` around ``center``."""
    d = dv.distances_from(center)
    dp = d[np.asarray(path)]
    on = np.flatnonzero((dp >= radius - 1e-9) & (dp < radius + dv.mesh - 1e-12))
    if len(on) == 0:
        on = np.flatnonzero(dp < radius + dv.mesh - 1e-12)
    return int(path[on[-1]])


@dataclass
class DecompositionTable:
    far: tuple  # (min ratio, max ratio, count) for delta(y) >= c_U^2 r / 4
    near: tuple
    special: dict
    anchor_ratio: float

    @property
    def spread(self) -> float:
        vals = [v for part in (self.far, self.near) if part[2] for v in part[:2]]
        return max(vals) / min(vals)

    def to_json(self) -> dict:
        return {"far": list(self.far), "near": list(self.near), "special": self.special,
                "anchor_ratio": self.anchor_ratio, "spread": self.spread}


def gc1_decomposition_check(cfg: BhpConfig, max_points: int = 200, seed: int = 0) -> DecompositionTable:
    """Compare ``g_D(x,y)`` with ``g_D(x*,y) g_D(x,y*) / g_D(x*,y*)`` on ``D = B_U(xi, A4 r)``."""
    dv = cfg.domain
    rng = np.random.default_rng(seed)
    sp_ = special_points(cfg)
    xs_, ys_ = sp_["x_star"], sp_["y_star"]
    D = cfg.inner_ball(cfg.A4)
    X, _ = _subsample(dv.inner_ball(cfg.xi, cfg.r), max_points, rng)
    Y, _ = _subsample(cfg.sphere(cfg.A3), max_points, rng)
    X = np.union1d(X, [xs_])
    Y = np.union1d(Y, [ys_])
    gt = green_table(dv.graph, D, materialize_limit=0)
    G = gt.block(X, Y)
    ix = int(np.flatnonzero(X == xs_)[0])
    iy = int(np.flatnonzero(Y == ys_)[0])
    ratio = G * G[ix, iy] / np.outer(G[:, iy], G[ix, :])
    try:
        length, path = admissible_path(dv, ys_, xs_, cfg.c_U)
        z_star = last_sphere_point(dv, path, ys_, cfg.c_U * cfg.r)
        sp_["z_star"] = z_star
        sp_["curve_length"] = float(length)
    except Exception as exc:  # the decomposition table does not need z*
        sp_["z_star"] = None
        sp_["z_star_error"] = type(exc).__name__
    far = dv.delta[Y] >= 0.25 * cfg.c_U ** 2 * cfg.r
    parts = []
    for sel in (far, ~far):
        block = ratio[:, sel]
        parts.append((float(block.min()), float(block.max()), int(block.size)) if block.size else
                     (math.nan, math.nan, 0))
    return DecompositionTable(parts[0], parts[1], sp_, float(ratio[ix, iy]))


# -- annulus bound and curve avoidance -----------------------------------------------------------


@dataclass
class AnnulusReport:
    green_ratio: float | None
    green_skipped: str | None
    curves_checked: int
    curves_avoiding: int
    curves_contained: int
    uncertified: int
    y_star: int

    @property
    def curves_ok(self) -> bool:
        return self.curves_checked > 0 and self.curves_avoiding == self.curves_checked \
            and self.curves_contained == self.curves_checked

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["curves_ok"] = self.curves_ok
        return out


def annulus_bound_check(cfg: BhpConfig, n_pairs: int = 40, seed: int = 0) -> AnnulusReport:
    """Green ratio ``g_D(x,z)/g_D(x,y*)`` over the annulus and curve avoidance between sphere points.

    Curves are inner-uniform paths (constant ``c_U``) between pairs on the
    ``A3 r`` sphere; each must avoid ``B_U(xi, 2r)`` and stay within
    ``B_U(xi, A3 (C_U + 1) r)``.  Paths longer than ``C_U d_U`` are counted as
    uncertified and excluded.
    """
    dv = cfg.domain
    rng = np.random.default_rng(seed)
    y_star = special_points(cfg)["y_star"]
    green_ratio, skipped = None, None
    outer, inner = (cfg.A3 + 3) * cfg.r, (cfg.A3 - 3) * cfg.r
    if outer >= cfg.A4 * cfg.r:
        skipped = "annulus not inside D"
    else:
        try:
            D = cfg.inner_ball(cfg.A4)
            d = dv.distances_from(cfg.xi)
            F = np.flatnonzero(dv.is_interior & (d < outer) & (d >= inner))
            X = dv.inner_ball(cfg.xi, 2 * cfg.r)
            gt = green_table(dv.graph, D, materialize_limit=0)
            G = gt.block(X, F)
            gy = gt.block(X, [y_star])[:, 0]
            green_ratio = float(np.max(G / gy[:, None]))
        except PatchExceeded as exc:
            skipped = str(exc)
    S = cfg.sphere(cfg.A3)
    d = dv.distances_from(cfg.xi)
    pairs = set()
    limit = n_pairs * 20
    while len(pairs) < min(n_pairs, len(S) * (len(S) - 1) // 2) and limit:
        a, b = rng.choice(S, size=2, replace=False)
        pairs.add((int(min(a, b)), int(max(a, b))))
        limit -= 1
    checked = avoiding = contained = uncertified = 0
    for a, b in sorted(pairs):
        length, path = admissible_path(dv, a, b, cfg.c_U)
        if length > cfg.C_U * dv.intrinsic_distance(a, b) + 1e-9:
            uncertified += 1
            continue
        checked += 1
        dp = d[np.asarray(path)]
        avoiding += bool(np.all(dp >= 2 * cfg.r))
        contained += bool(np.all(dp <= cfg.A3 * (cfg.C_U + 1) * cfg.r + 1e-9))
    return AnnulusReport(green_ratio, skipped, checked, avoiding, contained, uncertified, y_star)
