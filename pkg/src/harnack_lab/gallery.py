"""Deterministic builders for the example spaces.

Every builder returns a :class:`GalleryInstance` holding

* ``ambient``: the whole lattice (the space the domain is carved from),
* ``domain``: a :class:`DomainView` on its own closure graph (interior plus the
  boundary vertices adjacent to it, boundary-to-boundary edges dropped),
* ``to_ambient``: closure vertex id -> ambient vertex id,
* ``frame``: closure ids of the artificial outer boundary of the finite patch.

Slit vertices strictly inside the slit are duplicated into an upper and a
lower copy, so the closure graph realizes the two-sided boundary of the
completion.  The slit tip and the far end stay single vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .domain_geometry import DomainView
from .errors import BadMesh, EmptyInterior
from .graph_core import DEGREE_MASS, WeightedGraph, cable_subdivide

_ROUND = 9


@dataclass
class GalleryInstance:
    ambient: WeightedGraph
    domain: DomainView
    to_ambient: np.ndarray
    frame: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def graph(self) -> WeightedGraph:
        """The closure graph the domain lives on."""
        return self.domain.graph

    @property
    def mesh(self) -> float:
        return self.domain.mesh

    def vertex_at(self, coord, prefer: str | None = None) -> int:
        """Closure vertex at a coordinate; ``prefer`` picks a slit copy (``"top"``/``"bottom"``)."""
        key = tuple(round(float(c), _ROUND) for c in np.atleast_1d(coord))
        hits = [int(i) for i in np.flatnonzero(np.all(np.round(self.graph.coords, _ROUND) == key, axis=1))]
        if not hits:
            raise KeyError(f"no vertex at {coord}")
        if len(hits) > 1 and prefer is not None:
            sides = self.metadata.get("copies", {})
            hits = [h for h in hits if sides.get(str(h), sides.get(h)) == prefer] or hits
        return hits[0]

    def to_json(self) -> dict:
        return {"metadata": self.metadata, "graph": self.graph.to_json(),
                "domain": self.domain.to_json(graph_ref="graph"),
                "ambient": self.ambient.to_json(), "to_ambient": self.to_ambient.tolist(),
                "frame": self.frame.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "GalleryInstance":
        g = WeightedGraph.from_json(data["graph"])
        amb = WeightedGraph.from_json(data["ambient"])
        dv = DomainView.from_json(data["domain"], g)
        return cls(amb, dv, np.asarray(data["to_ambient"], dtype=np.int64),
                   np.asarray(data["frame"], dtype=np.int64), data["metadata"])


# -- lattice helpers -------------------------------------------------------------


def _lattice(dim: int, lo, hi, h: float, density=None, mean: str = "geometric",
             measure=DEGREE_MASS) -> WeightedGraph:
    """Box lattice ``prod [lo_i, hi_i]`` (integer index ranges) with spacing ``h``."""
    ranges = [np.arange(lo[d], hi[d] + 1) for d in range(dim)]
    grids = np.meshgrid(*ranges, indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    shape = tuple(len(r) for r in ranges)
    ids = np.arange(len(idx)).reshape(shape)
    us, vs = [], []
    for d in range(dim):
        sl_a = [slice(None)] * dim
        sl_b = [slice(None)] * dim
        sl_a[d] = slice(0, -1)
        sl_b[d] = slice(1, None)
        us.append(ids[tuple(sl_a)].ravel())
        vs.append(ids[tuple(sl_b)].ravel())
    u, v = np.concatenate(us), np.concatenate(vs)
    coords = idx * h
    if density is None:
        w = np.ones(len(u))
        mu = _degree(len(idx), u, v, w) if measure == DEGREE_MASS else np.ones(len(idx))
    else:
        rho = density(coords)
        w = np.sqrt(rho[u] * rho[v]) if mean == "geometric" else 0.5 * (rho[u] + rho[v])
        mu = rho
    g = WeightedGraph(len(idx), u, v, w, mu, coords, np.full(len(u), float(h)))
    g.index_coords = idx
    return g


def _degree(n, u, v, w):
    return np.bincount(u, w, minlength=n) + np.bincount(v, w, minlength=n)


def _carve(ambient: WeightedGraph, interior_mask: np.ndarray, frame_mask: np.ndarray,
           duplicate_side=None, measure_from_ambient: bool = False):
    """Closure graph of ``interior_mask`` inside ``ambient``.

    ``duplicate_side`` maps an ambient boundary vertex to a function
    ``side(neighbour_ambient_id) -> label``; one closure copy is made per label.
    """
    n = ambient.n
    u, v = ambient.u, ambient.v
    keep_edge = interior_mask[u] | interior_mask[v]
    eu, ev, ew, el = u[keep_edge], v[keep_edge], ambient.w[keep_edge], ambient.lengths[keep_edge]
    touched = np.zeros(n, dtype=bool)
    touched[eu] = True
    touched[ev] = True
    duplicate_side = duplicate_side or {}
    closure_of: dict = {}
    new_amb, copies = [], {}

    def node(a, label=None):
        key = (a, label)
        if key not in closure_of:
            closure_of[key] = len(new_amb)
            new_amb.append(a)
            if label is not None:
                copies[closure_of[key]] = label
        return closure_of[key]

    for a in np.flatnonzero(touched):
        if a not in duplicate_side:
            node(int(a))
    cu, cv = [], []
    for a, b in zip(eu, ev):
        a, b = int(a), int(b)
        la = duplicate_side[a](b) if a in duplicate_side else None
        lb = duplicate_side[b](a) if b in duplicate_side else None
        cu.append(node(a, la))
        cv.append(node(b, lb))
    to_amb = np.asarray(new_amb, dtype=np.int64)
    order = np.lexsort((np.array([copies.get(i, "") for i in range(len(to_amb))]), to_amb))
    relabel = np.empty(len(order), dtype=np.int64)
    relabel[order] = np.arange(len(order))
    cu = relabel[np.asarray(cu)]
    cv = relabel[np.asarray(cv)]
    to_amb = to_amb[order]
    copies = {int(relabel[k]): lab for k, lab in copies.items()}
    nc = len(to_amb)
    mu = ambient.measure[to_amb] if measure_from_ambient else _degree(nc, cu, cv, ew)
    g = WeightedGraph(nc, cu, cv, ew, mu, ambient.coords[to_amb], el)
    interior = np.flatnonzero(interior_mask[to_amb])
    boundary = np.flatnonzero(~interior_mask[to_amb])
    frame = np.flatnonzero(frame_mask[to_amb] & ~interior_mask[to_amb])
    return DomainView(g, interior, boundary), to_amb, frame, copies


def _frame_mask(idx, lo, hi):
    return np.any((idx == np.asarray(lo)) | (idx == np.asarray(hi)), axis=1)


# -- builders ---------------------------------------------------------------------


def build_path(n: int) -> GalleryInstance:
    """PATH(n): vertices ``0..n``, unit weights, interior ``1..n-1``."""
    if n < 2:
        raise ValueError("path needs n >= 2")
    amb = _lattice(1, [0], [n], 1.0)
    inside = np.zeros(amb.n, dtype=bool)
    inside[1:n] = True
    dv, to_amb, _, _ = _carve(amb, inside, np.zeros(amb.n, dtype=bool))
    return GalleryInstance(amb, dv, to_amb, np.zeros(0, dtype=np.int64),
                           {"builder": "path", "params": {"n": n}, "mesh": 1.0})


def build_grid(nx: int, ny: int) -> GalleryInstance:
    """``nx x ny`` unit grid; the outer frame is the Dirichlet boundary."""
    if nx < 3 or ny < 3:
        raise ValueError("grid needs at least 3 x 3 vertices to have an interior")
    amb = _lattice(2, [0, 0], [nx - 1, ny - 1], 1.0)
    fm = _frame_mask(amb.index_coords, [0, 0], [nx - 1, ny - 1])
    dv, to_amb, _, _ = _carve(amb, ~fm, fm)
    return GalleryInstance(amb, dv, to_amb, np.zeros(0, dtype=np.int64),
                           {"builder": "grid", "params": {"nx": nx, "ny": ny}, "mesh": 1.0})


def build_half_plane_grid(N: int, h: float = 1.0, density=None, mean="geometric",
                          meta=None) -> GalleryInstance:
    """Upper half of the box ``[-N, N]^2``; the row ``y = 0`` is the true boundary."""
    amb = _lattice(2, [-N, -N], [N, N], h, density, mean)
    idx = amb.index_coords
    fm = _frame_mask(idx, [-N, -N], [N, N])
    inside = (idx[:, 1] > 0) & ~fm
    dv, to_amb, frame, _ = _carve(amb, inside, fm, measure_from_ambient=density is not None)
    meta = meta or {"builder": "half_plane", "params": {"N": N, "h": h}}
    meta.update(mesh=h, xi=[0.0, 0.0])
    return GalleryInstance(amb, dv, to_amb, frame, meta)


def build_slit_grid(N: int, h: float = 1.0, slit_length: float = 1.0, density=None,
                    mean="geometric", meta=None) -> GalleryInstance:
    """Box ``[-N h, N h]^2`` minus the slit ``[-slit_length, 0] x {0}``.

    Interior slit vertices are split into ``top``/``bottom`` copies; the tip
    ``(0, 0)`` is kept as one vertex reachable from both sides.
    """
    fr = Fraction(slit_length).limit_denominator(10 ** 6) / Fraction(h).limit_denominator(10 ** 6)
    if fr.denominator != 1 or N * h < 4:
        raise BadMesh("h must divide the slit length and N h must be at least 4")
    k = int(fr)
    if k >= N - 1:
        raise BadMesh("slit must end inside the patch")
    amb = _lattice(2, [-N, -N], [N, N], h, density, mean)
    idx = amb.index_coords
    fm = _frame_mask(idx, [-N, -N], [N, N])
    on_slit = (idx[:, 1] == 0) & (idx[:, 0] <= 0) & (idx[:, 0] >= -k)
    inside = ~fm & ~on_slit
    y_of = idx[:, 1]

    def side(nb):
        return "top" if y_of[nb] > 0 else "bottom"

    dup = {int(a): side for a in np.flatnonzero(on_slit & (idx[:, 0] < 0) & (idx[:, 0] > -k))}
    dv, to_amb, frame, copies = _carve(amb, inside, fm, dup, measure_from_ambient=density is not None)
    meta = meta or {"builder": "slit_grid", "params": {"N": N, "h": h, "slit_length": slit_length}}
    meta.update(mesh=h, xi=[0.0, 0.0], copies={str(k_): v for k_, v in copies.items()},
                note="slit tip (0,0) is a single boundary vertex reachable from both sides")
    return GalleryInstance(amb, dv, to_amb, frame, meta)


def alpha_density(alpha: float, sign: int = 1):
    def rho(coords):
        r2 = np.sum(np.asarray(coords, dtype=float) ** 2, axis=1)
        return (1.0 + r2) ** (sign * alpha / 2.0)
    return rho


def build_weighted_lattice_alpha(dim: int, N: int, alpha: float, exponent_sign: int = 1,
                                 domain: str = "box", mean: str = "geometric") -> GalleryInstance:
    """Lattice ``[-N, N]^dim`` with density ``(1+|x|^2)^(s alpha/2)``.

    Edge weights are the geometric (or arithmetic) mean of the endpoint
    densities and the measure is the density itself.  ``domain`` selects the
    carved region: ``box`` (outer frame is the boundary), ``half-plane`` or
    ``slit`` (2-D only).
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if N < 8:
        raise ValueError("N must be at least 8")
    rho = alpha_density(alpha, exponent_sign)
    params = {"dim": dim, "N": N, "alpha": alpha, "exponent_sign": exponent_sign,
              "domain": domain, "mean": mean}
    meta = {"builder": "alpha_lattice", "params": params}
    if domain == "half-plane":
        return build_half_plane_grid(N, 1.0, rho, mean, meta)
    if domain == "slit":
        return build_slit_grid(N, 1.0, 1.0, rho, mean, meta)
    if domain != "box":
        raise ValueError(f"unknown domain {domain!r}")
    lo, hi = [-N] * dim, [N] * dim
    amb = _lattice(dim, lo, hi, 1.0, rho, mean)
    fm = _frame_mask(amb.index_coords, lo, hi)
    dv, to_amb, _, _ = _carve(amb, ~fm, fm, measure_from_ambient=True)
    meta.update(mesh=1.0)
    return GalleryInstance(amb, dv, to_amb, np.zeros(0, dtype=np.int64), meta)


def build_interval_domain(inst: GalleryInstance, a: float, b: float) -> GalleryInstance:
    """Interval ``(a, b)`` of a 1-D instance: interior strictly inside, boundary ``{a, b}``."""
    amb = inst.ambient
    if amb.coords is None or amb.coords.shape[1] != 1:
        raise ValueError("interval domains need a 1-D instance")
    x = amb.coords[:, 0]
    if not a < b:
        raise ValueError("need a < b")
    inside = (x > a + 1e-12) & (x < b - 1e-12)
    if not inside.any():
        raise EmptyInterior(f"no lattice point strictly inside ({a}, {b})")
    ends = np.zeros(amb.n, dtype=bool)
    ends[np.argmin(np.abs(x - a))] = True
    ends[np.argmin(np.abs(x - b))] = True
    dv, to_amb, _, _ = _carve(amb, inside, np.zeros(amb.n, dtype=bool),
                              measure_from_ambient=True)
    if not np.all(ends[to_amb[dv.boundary]]):
        raise EmptyInterior("interval endpoints must be lattice points")
    meta = {"builder": "interval", "params": {"a": a, "b": b, "base": inst.metadata}, "mesh": inst.mesh}
    return GalleryInstance(amb, dv, to_amb, np.zeros(0, dtype=np.int64), meta)


def refine_instance(inst: GalleryInstance, k: int) -> GalleryInstance:
    """Cable refinement: every edge of closure and ambient split into ``k`` segments."""
    if k == 1:
        return inst
    dv = inst.domain
    g = cable_subdivide(dv.graph, k)
    amb = cable_subdivide(inst.ambient, k)
    m = dv.graph.m
    interior = np.concatenate([dv.interior, dv.graph.n + np.arange(m * (k - 1))])
    boundary = dv.boundary
    new_dv = DomainView(g, interior, boundary)
    lookup = {tuple(np.round(c, _ROUND)): i for i, c in enumerate(amb.coords)}
    to_amb = np.array([lookup[tuple(np.round(c, _ROUND))] for c in g.coords], dtype=np.int64)
    meta = dict(inst.metadata)
    meta["refinement"] = k
    meta["mesh"] = float(new_dv.mesh)
    return GalleryInstance(amb, new_dv, to_amb, inst.frame.copy(), meta)


BUILDERS = {
    "path": lambda n=4: build_path(int(n)),
    "grid": lambda nx=9, ny=9: build_grid(int(nx), int(ny)),
    "half_plane": lambda N=20, h=1.0: build_half_plane_grid(int(N), float(h)),
    "slit_grid": lambda N=20, h=1.0, slit_length=1.0: build_slit_grid(int(N), float(h), float(slit_length)),
    "alpha_lattice": lambda dim=2, N=20, alpha=0.0, exponent_sign=1, domain="box", mean="geometric":
        build_weighted_lattice_alpha(int(dim), int(N), float(alpha), int(exponent_sign), domain, mean),
}


def build(spec: dict) -> GalleryInstance:
    """Build from ``{"builder": name, "params": {...}, "refine": k, "interval": [a, b]}``."""
    name = spec["builder"]
    if name not in BUILDERS:
        raise KeyError(f"unknown builder {name!r}; known: {sorted(BUILDERS)}")
    inst = BUILDERS[name](**spec.get("params", {}))
    if "interval" in spec:
        inst = build_interval_domain(inst, *spec["interval"])
    if spec.get("refine", 1) != 1:
        inst = refine_instance(inst, int(spec["refine"]))
    return inst
