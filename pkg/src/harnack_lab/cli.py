"""Command line entry point: ``harnack-lab run | plot | gallery``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigParse, HarnackLabError
from .gallery import BUILDERS, build

log = logging.getLogger("harnack_lab")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigParse(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = _parse_value(v)
    return out


def cmd_run(args) -> int:
    from .runner import load_config, run_config
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path("out")
    code, report = run_config(cfg, out, jobs=args.jobs)
    for e in report["tasks"]:
        log.info("%-14s %s", e["task"], e["status"])
    print(f"{out / 'report.json'}: exit {code}")
    return code


def cmd_plot(args) -> int:
    from .plotting import plot
    for what in args.what:
        print(plot(args.report, what, args.out if len(args.what) == 1 else None))
    return 0


def cmd_gallery(args) -> int:
    params = _params(args.params)
    spec = {"builder": args.builder, "params": params}
    for key in ("refine", "interval"):
        if key in params:
            spec[key] = params.pop(key)
    inst = build(spec)
    text = json.dumps(inst.to_json())
    if args.emit:
        Path(args.emit).write_text(text)
        print(f"{args.emit}: {inst.graph.n} vertices, {inst.graph.m} edges")
    else:
        sys.stdout.write(text + "\n")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harnack-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: ./out)")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render SVG figures from a report")
    pl.add_argument("report")
    pl.add_argument("--what", nargs="+", required=True,
                    choices=["green-heatmap", "kernel-heatmap", "constants-vs-scale"])
    pl.add_argument("--out", help="output file (single plot only)")
    pl.set_defaults(func=cmd_plot)

    g = sub.add_parser("gallery", help="build a gallery instance and emit it as JSON")
    g.add_argument("builder", choices=sorted(BUILDERS))
    g.add_argument("params", nargs="*", help="key=value builder parameters")
    g.add_argument("--emit", help="write the instance JSON here")
    g.set_defaults(func=cmd_gallery)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigParse as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, HarnackLabError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
