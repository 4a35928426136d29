"""Experiment configs, task dispatch and report files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bhp_verifier as bv
from . import harnack_estimators as he
from .domain_geometry import DomainView, estimate_inner_uniformity_constants, inner_uniformity_check
from .errors import (BadMesh, BadNesting, ConfigParse, DegenerateDomain, EmptyCone, EmptyFreeBoundary,
                     EmptyHalfBall, EmptyInterior, EmptySphere, HypothesisFailed, Infeasible, NoBoundary,
                     NoChain, NoFarPoint, NoSpecialPoint, PatchExceeded)
from .gallery import GalleryInstance, build
from .graph_core import WeightedGraph
from .potential_theory import capacity, check_maximum_principles, green_table

SCHEMA = "harnack-lab/1"
TASKS = ("ehi-scan", "cw-bound", "hm-decay", "hm-green", "green-compare", "bhp", "cross-ratio",
         "gc1", "annulus", "invariants")
REJECTIONS = (BadMesh, BadNesting, DegenerateDomain, EmptyCone, EmptyHalfBall, EmptyInterior,
              EmptySphere, HypothesisFailed, Infeasible, NoBoundary, NoChain, NoFarPoint, NoSpecialPoint,
              PatchExceeded)


class Rejected(Exception):
    """A task parameter violates the target operation's precondition."""


def sig(x, digits: int = 12):
    """Round floats (recursively) to ``digits`` significant digits; non-finite become strings."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.{digits}g}")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [sig(v, digits) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): sig(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [sig(v, digits) for v in x]
    return x


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# -- config ---------------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"{path}: {exc}") from exc
    return validate_config(cfg)


def validate_config(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigParse("config must be a JSON object")
    if cfg.get("schema") != SCHEMA:
        raise ConfigParse(f"schema must be {SCHEMA!r}")
    if not isinstance(cfg.get("builder"), dict) or "builder" not in cfg["builder"]:
        raise ConfigParse("builder must be an object with a 'builder' name")
    tasks = cfg.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigParse("tasks must be a non-empty list")
    for t in tasks:
        if not isinstance(t, dict) or t.get("task") not in TASKS:
            raise ConfigParse(f"unknown task {t!r}; known: {', '.join(TASKS)}")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigParse("seed must be an integer")
    return cfg


def build_instance(spec: dict) -> GalleryInstance:
    """Gallery builder dict, or ``{"builder": "graph", "graph": {...}, "interior": [...], "boundary": [...]}``."""
    if spec["builder"] == "graph":
        src = spec["graph"]
        if isinstance(src, str):
            with open(src) as fh:
                src = json.load(fh)
        g = WeightedGraph.from_json(src)
        dv = DomainView(g, spec["interior"], spec["boundary"])
        return GalleryInstance(g, dv, np.arange(g.n), np.zeros(0, dtype=np.int64), {"builder": "graph"})
    return build(spec)


# -- task context -----------------------------------------------------------------------------


@dataclass
class Context:
    inst: GalleryInstance
    config: dict
    seed: int
    _iu: tuple | None = None
    iu_report: dict = field(default_factory=dict)

    @property
    def dv(self) -> DomainView:
        return self.inst.domain

    def point(self, coord, ambient: bool = False) -> int:
        if isinstance(coord, int):
            return coord
        v = self.inst.vertex_at(coord)
        return int(self.inst.to_ambient[v]) if ambient else v

    @property
    def xi(self) -> int:
        c = self.config.get("xi", self.inst.metadata.get("xi"))
        if c is None:
            raise ConfigParse("config needs 'xi' for boundary tasks")
        return self.point(c)

    def inner_constants(self):
        if self._iu is None:
            spec = self.config.get("inner_uniformity", "estimate")
            if isinstance(spec, dict):
                self._iu = (float(spec["c_U"]), float(spec["C_U"]))
                self.iu_report = {"source": "provided", "c_U": self._iu[0], "C_U": self._iu[1]}
            else:
                c, C = estimate_inner_uniformity_constants(self.dv, seed=self.seed)
                cert = inner_uniformity_check(self.dv, c, C, seed=self.seed)
                self._iu = (float(c), float(C))
                self.iu_report = {"source": "estimated", "c_U": c, "C_U": C, "status": cert.status}
        return self._iu

    def bhp_config(self, t: dict, r: float) -> bv.BhpConfig:
        c_U, C_U = self.inner_constants()
        return bv.BhpConfig(self.dv, self.xi, float(r), c_U, C_U, A0=t.get("A0"), A2=t.get("A2"),
                            A3=t.get("A3"), A4=t.get("A4"), frame=self.inst.frame)


def _check(name, passed, value=None):
    return {"name": name, "passed": bool(passed), "value": value}


def _stability(name, values: dict, factor: float):
    vals = [values[k] for k in sorted(values)]
    worst = 1.0
    for a, b in zip(vals, vals[1:]):
        q = b / a
        worst = max(worst, q, 1 / q)
    return _check(name, worst <= factor, worst)


# -- task implementations ---------------------------------------------------------------------


def task_ehi_scan(ctx: Context, t: dict):
    g = ctx.inst.ambient
    radii = t.get("radii", [4, 8, 16])
    if "centers" in t:
        centers = [ctx.point(c, ambient=True) for c in t["centers"]]
    else:
        stride = t.get("stride", 8)
        margin = max(radii)
        co = g.coords
        lo, hi = co.min(axis=0) + margin, co.max(axis=0) - margin
        inside = np.all((co >= lo) & (co <= hi), axis=1) & np.all(np.mod(co - lo, stride) == 0, axis=1)
        centers = np.flatnonzero(inside).tolist()
    if any(r < g.mesh for r in radii):
        raise Rejected("radius below the mesh")
    res = he.ehi_scan(g, centers, radii, t.get("delta", 0.5))
    checks = [_check("C_H>=1", all(e.C_H >= 1 - 1e-12 for e in res.entries))]
    if "stability_factor" in t:
        checks.append(_stability("scale_stability", res.per_scale, t["stability_factor"]))
    return res.to_json(), list(res.csv_rows()), checks


def task_cw_bound(ctx: Context, t: dict):
    r_list = t.get("r_list", [2, 4, 8, 16])
    if min(r_list) < ctx.dv.mesh:
        raise Rejected("r below the mesh")
    xi = ctx.xi if t.get("window") else None
    rep = he.cw_linear_bound_check(ctx.inst, t.get("eta", 0.1), r_list, center=xi,
                                   window=t.get("window", 2.0), max_points=t.get("max_points", 24),
                                   seed=ctx.seed)
    rows = [("r", "w", "ratio")] + [(float(r), rep.widths[r], rep.ratios[r]) for r in sorted(rep.ratios)]
    checks = [_check("A1_finite", math.isfinite(rep.A1), rep.A1)]
    if "stability_factor" in t:
        checks.append(_check("spread", rep.spread <= t["stability_factor"], rep.spread))
    return rep.to_json(), rows, checks


def task_hm_decay(ctx: Context, t: dict):
    g = ctx.inst.ambient
    box = np.asarray(t["V_box"], dtype=float)
    co = g.coords
    V = np.flatnonzero(np.all((co >= box[:, 0] - 1e-9) & (co <= box[:, 1] + 1e-9), axis=1))
    x = ctx.point(t["x"], ambient=True)
    fit = he.hm_decay_check(g, V, x, t.get("r_list", [4, 8, 16, 32]), t.get("eta", 0.1),
                            width_points=[x])
    rows = [("r", "omega")] + list(zip(fit.radii, fit.omega))
    mono = all(b <= a + 1e-10 for a, b in zip(fit.omega, fit.omega[1:]))
    checks = [_check("omega_nonincreasing", mono)]
    if not fit.flat:
        checks.append(_check("slope<0", fit.slope < 0, fit.slope))
    return fit.to_json(), rows, checks


def task_hm_green(ctx: Context, t: dict):
    c_U, _ = ctx.inner_constants()
    vals, reps = {}, []
    for r in t.get("scales", [8, 16]):
        if r < 4 * ctx.dv.mesh:
            raise Rejected(f"r = {r} below four mesh units")
        rep = he.hm_green_bound(ctx.dv, ctx.xi, r, t.get("A2", 7.0), c_U, frame=ctx.inst.frame)
        vals[r] = rep.C4
        reps.append(rep.to_json())
    rows = [("r", "C4", "xi_r", "xi_prime", "worst_x")] + [
        (float(d["r"]), d["C4"], d["xi_r"], d["xi_prime"], d["worst_x"]) for d in reps]
    checks = [_check("C4_finite", all(math.isfinite(v) for v in vals.values()))]
    if "stability_factor" in t:
        checks.append(_stability("scale_stability", vals, t["stability_factor"]))
    return {"entries": reps}, rows, checks


def task_green_compare(ctx: Context, t: dict):
    g = ctx.inst.ambient
    out, rows, checks = [], [("kind", "x0", "r", "constant", "holds")], []
    for c in t["configs"]:
        c = dict(c)
        c["x0"] = ctx.point(c["x0"], ambient=True)
        res = he.green_comparison(g, c)
        out.append(res.to_json())
        rows.append((res.kind, c["x0"], float(c["r"]), res.constant, res.holds))
        checks.extend(_check(f"{res.kind}:{n}", h, [a, b]) for n, a, b, h in res.checks)
    return {"results": out}, rows, checks


def _scan_bhp(ctx: Context, t: dict, fn, key):
    vals, entries = {}, []
    for r in t.get("scales", [8, 16]):
        cfg = ctx.bhp_config(t, r)
        entry = fn(cfg)
        entry["r"] = float(r)
        entry["constants"] = cfg.constants()
        vals[float(r)] = entry[key]
        entries.append(entry)
    return vals, entries


def task_bhp(ctx: Context, t: dict):
    checks = []

    def one(cfg):
        res = bv.bhp_constant(cfg)
        ok = res.C1 >= 1 - 1e-9
        if res.witness is not None and len(res.cone.z) > 1:
            ok &= abs(res.witness.recompute(res.cone) - res.C1) <= 1e-9 * res.C1
        checks.append(_check(f"r={cfg.r:g}:C1>=1_and_witness", ok, res.C1))
        return res.to_json()

    vals, entries = _scan_bhp(ctx, t, one, "C1")
    rows = [("r", "C1", "x", "y", "z", "z_prime")] + [
        (e["r"], e["C1"], *(([e["witness"][k] for k in ("x", "y", "z", "z_prime")]) if e["witness"] else [""] * 4))
        for e in entries]
    if "stability_factor" in t:
        checks.append(_stability("scale_stability", vals, t["stability_factor"]))
    return {"entries": entries}, rows, checks


def task_cross_ratio(ctx: Context, t: dict):
    checks = []

    def one(cfg):
        res = bv.green_cross_ratio(cfg, t.get("max_points", 400), ctx.seed)
        checks.append(_check(f"r={cfg.r:g}:finite", math.isfinite(res.value) and res.value >= 1 - 1e-9,
                             res.value))
        return res.to_json()

    vals, entries = _scan_bhp(ctx, t, one, "value")
    rows = [("r", "value", "x1", "x2", "y1", "y2")] + [
        (e["r"], e["value"], e["x1"], e["x2"], e["y1"], e["y2"]) for e in entries]
    if "stability_factor" in t:
        checks.append(_stability("scale_stability", vals, t["stability_factor"]))
    return {"entries": entries}, rows, checks


def task_gc1(ctx: Context, t: dict):
    checks = []

    def one(cfg):
        tab = bv.gc1_decomposition_check(cfg, t.get("max_points", 200), ctx.seed)
        checks.append(_check(f"r={cfg.r:g}:anchor", abs(tab.anchor_ratio - 1) <= 1e-9, tab.anchor_ratio))
        out = tab.to_json()
        out["spread_value"] = tab.spread
        return out

    vals, entries = _scan_bhp(ctx, t, one, "spread_value")
    rows = [("r", "far_min", "far_max", "far_n", "near_min", "near_max", "near_n")] + [
        (e["r"], *e["far"], *e["near"]) for e in entries]
    if "stability_factor" in t:
        checks.append(_stability("spread_stability", vals, t["stability_factor"]))
    return {"entries": entries}, rows, checks


def task_annulus(ctx: Context, t: dict):
    checks = []

    def one(cfg):
        rep = bv.annulus_bound_check(cfg, t.get("pairs", 40), ctx.seed)
        checks.append(_check(f"r={cfg.r:g}:curves_avoid", rep.curves_ok,
                             [rep.curves_avoiding, rep.curves_checked]))
        out = rep.to_json()
        out["ratio_value"] = rep.green_ratio if rep.green_ratio is not None else math.nan
        return out

    vals, entries = _scan_bhp(ctx, t, one, "ratio_value")
    rows = [("r", "green_ratio", "curves_checked", "curves_avoiding", "curves_contained")] + [
        (e["r"], e["ratio_value"], e["curves_checked"], e["curves_avoiding"], e["curves_contained"])
        for e in entries]
    return {"entries": entries}, rows, checks


def task_invariants(ctx: Context, t: dict):
    """Green symmetry, positivity, maximum principles and point capacity on a small inner ball."""
    dv = ctx.dv
    g = dv.graph
    r = t.get("r", 4 * dv.mesh)
    center = ctx.point(t["center"]) if "center" in t else int(dv.interior[np.argmax(dv.delta[dv.interior])])
    omega = dv.inner_ball(center, r)
    if len(g.vertex_boundary(omega)) == 0:
        raise Rejected("ball has no boundary")
    gt = green_table(g, omega)
    G = gt.matrix
    sym = float(np.max(np.abs(G - G.T)) / np.max(np.abs(G)))
    W = dv.inner_ball(center, r / 2)
    mp = check_maximum_principles(gt, center, W) if len(W) < len(omega) else None
    cap = capacity(g, omega, [center]).capacity * gt.value(center, center)
    checks = [_check("symmetry", sym <= 1e-10, sym), _check("positivity", bool(np.all(G > 0))),
              _check("point_capacity", abs(cap - 1) <= 1e-9, cap)]
    if mp is not None:
        checks.append(_check("maximum_principles", mp.holds))
    rows = [("check", "passed", "value")] + [(c["name"], c["passed"], c["value"]) for c in checks]
    return {"center": center, "r": r, "size": int(len(omega))}, rows, checks


HANDLERS = {"ehi-scan": task_ehi_scan, "cw-bound": task_cw_bound, "hm-decay": task_hm_decay,
            "hm-green": task_hm_green, "green-compare": task_green_compare, "bhp": task_bhp,
            "cross-ratio": task_cross_ratio, "gc1": task_gc1, "annulus": task_annulus,
            "invariants": task_invariants}


# -- orchestration ----------------------------------------------------------------------------------


def run_task(ctx: Context, index: int, t: dict) -> tuple:
    start = time.perf_counter()
    try:
        summary, rows, checks = HANDLERS[t["task"]](ctx, t)
        status = "passed" if all(c["passed"] for c in checks) else "failed"
        entry = {"task": t["task"], "status": status, "summary": summary, "checks": checks}
    except (Rejected, *REJECTIONS) as exc:
        rows = [("status", "reason"), ("rejected", f"{type(exc).__name__}: {exc}")]
        entry = {"task": t["task"], "status": "rejected", "reason": f"{type(exc).__name__}: {exc}"}
    entry["index"] = index
    entry["wall_clock"] = time.perf_counter() - start
    return entry, rows


def run_config(cfg: dict, out_dir, jobs: int = 1) -> tuple:
    """Run every task, write ``report.json`` and one CSV per task; return ``(exit_code, report)``."""
    cfg = validate_config(cfg)
    out = Path(out_dir)
    start = time.perf_counter()
    inst = build_instance(cfg["builder"])
    ctx = Context(inst, cfg, int(cfg.get("seed", 0)))
    tasks = list(enumerate(cfg["tasks"]))
    if any(t["task"] in ("bhp", "cross-ratio", "gc1", "annulus", "hm-green") for _, t in tasks):
        ctx.inner_constants()
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(lambda it: run_task(ctx, *it), tasks))
    else:
        results = [run_task(ctx, i, t) for i, t in tasks]
    entries = []
    for (i, t), (entry, rows) in zip(tasks, results):
        name = f"{i:02d}_{t['task']}.csv"
        atomic_write(out / name, csv_text(rows))
        entry["csv"] = name
        entries.append(entry)
    statuses = [e["status"] for e in entries]
    code = 1 if "failed" in statuses else (2 if "rejected" in statuses else 0)
    report = {"schema": SCHEMA, "config": cfg, "instance": inst.metadata | {"vertices": inst.graph.n},
              "inner_uniformity": ctx.iu_report, "tasks": entries, "exit_code": code,
              "wall_clock": time.perf_counter() - start}
    atomic_write(out / "report.json", json.dumps(sig(report), indent=2, sort_keys=True) + "\n")
    return code, report
