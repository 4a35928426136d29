"""SVG figures rebuilt from a run report."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import bhp_verifier as bv  # noqa: E402
from .errors import MissingCoordinates  # noqa: E402
from .potential_theory import green_table  # noqa: E402
from .runner import Context, build_instance  # noqa: E402

KINDS = ("green-heatmap", "kernel-heatmap", "constants-vs-scale")
_SCALE_KEYS = {"bhp": "C1", "cross-ratio": "value", "hm-green": "C4", "gc1": "spread_value"}


def _field_plot(ctx: Context, values: np.ndarray, marks: dict, title: str, path: Path):
    g = ctx.dv.graph
    co = g.coords
    if co is None or co.shape[1] != 2:
        raise MissingCoordinates("heatmaps need 2-D vertex coordinates")
    dv = ctx.dv
    fig, ax = plt.subplots(figsize=(6, 6))
    pos = values > 0
    sc = ax.scatter(co[pos, 0], co[pos, 1], c=np.log10(values[pos]), s=4, marker="s", cmap="viridis",
                    linewidths=0)
    fig.colorbar(sc, ax=ax, label="log10")
    bd = dv.boundary
    ax.scatter(co[bd, 0], co[bd, 1], s=5, c="k", marker="s", linewidths=0, label="boundary")
    for name, v in marks.items():
        if v is not None:
            ax.plot(co[v, 0], co[v, 1], "o", ms=6, mfc="none", mec="r")
            ax.annotate(name, co[v], color="r", fontsize=8)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, format="svg")
    plt.close(fig)


def _first_task(report: dict, names):
    for entry, t in zip(report["tasks"], report["config"]["tasks"]):
        if t["task"] in names and entry["status"] == "passed":
            return t, entry
    raise ValueError(f"report has no successful {' / '.join(names)} task")


def _context(report: dict) -> Context:
    cfg = report["config"]
    ctx = Context(build_instance(cfg["builder"]), cfg, int(cfg.get("seed", 0)))
    iu = report.get("inner_uniformity") or {}
    if "c_U" in iu:
        ctx._iu = (float(iu["c_U"]), float(iu["C_U"]))
    return ctx


def green_heatmap(report: dict, path: Path):
    ctx = _context(report)
    if ctx.dv.graph.coords is None:
        raise MissingCoordinates("graph has no coordinates")
    t, _ = _first_task(report, ("gc1", "cross-ratio", "bhp"))
    cfg = ctx.bhp_config(t, t.get("scales", [8])[0])
    pts = bv.special_points(cfg)
    D = cfg.inner_ball(cfg.A4)
    col = green_table(ctx.dv.graph, D, materialize_limit=0).full_column(pts["x_star"])
    _field_plot(ctx, col, {"xi": cfg.xi, "x*": pts["x_star"], "y*": pts["y_star"]},
                f"g_D(x*, .), r = {cfg.r:g}", path)


def kernel_heatmap(report: dict, path: Path):
    ctx = _context(report)
    if ctx.dv.graph.coords is None:
        raise MissingCoordinates("graph has no coordinates")
    t, entry = _first_task(report, ("bhp",))
    first = entry["summary"]["entries"][0]
    cfg = ctx.bhp_config(t, first["r"])
    z = first["witness"]["z"] if first["witness"] else None
    D = cfg.inner_ball(cfg.A0)
    from .potential_theory import harmonic_measure_kernel
    cone = harmonic_measure_kernel(ctx.dv.graph, D, columns=[z] if z is not None else None)
    values = np.zeros(ctx.dv.graph.n)
    values[cone.x] = cone.K[:, 0]
    _field_plot(ctx, values, {"xi": cfg.xi, "z": z}, f"K(., z), r = {cfg.r:g}", path)


def constants_vs_scale(report: dict, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    for t, entry in zip(report["config"]["tasks"], report["tasks"]):
        if entry["status"] != "passed":
            continue
        if t["task"] == "ehi-scan":
            per = entry["summary"]["per_scale"]
            xs = sorted(float(k) for k in per)
            ys = [per[k] for k in sorted(per, key=float)]
        elif t["task"] in _SCALE_KEYS:
            es = entry["summary"]["entries"]
            xs = [e["r"] for e in es]
            ys = [e[_SCALE_KEYS[t["task"]]] for e in es]
        else:
            continue
        ys = [float(y) for y in ys]
        ax.loglog(xs, ys, "o-", label=t["task"])
        plotted = True
    if not plotted:
        raise ValueError("report has no scale scans")
    ax.set_xlabel("scale")
    ax.set_ylabel("measured constant")
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot(report_path, what: str, out: Path | None = None) -> Path:
    report_path = Path(report_path)
    with open(report_path) as fh:
        report = json.load(fh)
    if what not in KINDS:
        raise ValueError(f"unknown plot {what!r}; known: {', '.join(KINDS)}")
    path = Path(out) if out else report_path.with_name(f"{what}.svg")
    {"green-heatmap": green_heatmap, "kernel-heatmap": kernel_heatmap,
     "constants-vs-scale": constants_vs_scale}[what](report, path)
    return path
