"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 physics or validation failure,
4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .capacitance import capacitance_mesh, icosphere, read_mesh
from .config import load_config
from .design import ParticleRecipe, capacitance_ball
from .errors import EmbedError

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_SOLVER = 0, 2, 3, 4

logger = logging.getLogger("embedmedia")


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
    if args.out is not None:
        cfg.output_dir = Path(args.out)
    return cfg


def cmd_design(args) -> int:
    cfg = _load(args)
    summary = pipeline.run_design(cfg, M=args.M)
    print((cfg.output_dir / "summary.txt").read_text(), end="")
    logger.debug("design summary: %s", summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    recipe = None
    if args.M is not None:
        M, a = args.M, pipeline.radius_for_count(cfg.p, args.M)
    elif cfg.recipe_file is not None:
        recipe = ParticleRecipe.load(cfg.recipe_file)
        M, a = int(round(recipe.expected_count)), recipe.a
    else:
        M, a = pipeline.schedule(cfg)[-1]
    sim = pipeline.run_simulation(cfg, M, a, cfg.output_dir, tag=f"M{M}", recipe=recipe)
    info = {"M": sim.M, "a": sim.a, "d_min": sim.d_min, "relative_volume": sim.relative_volume,
            "smallness": sim.smallness}
    pipeline._dump(cfg.output_dir / f"simulate_M{M}.json", info)
    print(json.dumps(info, indent=2, default=pipeline._jsonable))
    return EXIT_OK


def cmd_continuum(args) -> int:
    cfg = _load(args)
    sol = pipeline.run_continuum(cfg, cfg.output_dir)
    pipeline._dump(cfg.output_dir / "continuum.json", {k: v for k, v in sol.info.items()
                                                        if k != "seconds"})
    print(f"continuum solve on grid {sol.medium.domain.grid_shape}: {sol.info.get('method')}")
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _load(args)
    summary = pipeline.run_converge(cfg, cfg.output_dir)
    for r in summary["rows"]:
        print(f"M={r['M']:6d}  a={r['a']:.3e}  rel_vol={r['relative_volume']:.3e}  "
              f"field_err={r['field_err_max']:.3e}  far_err={r['far_err_l2']:.3e}")
    print(f"slope(relative_volume) = {summary['slope_relative_volume']}")
    return EXIT_OK


def cmd_capacitance(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.mesh:
        mesh = read_mesh(args.mesh)
        c = capacitance_mesh(mesh)
        rows.append({"mesh": args.mesh, "triangles": len(mesh.triangles), "capacitance": c})
    else:
        exact = capacitance_ball(args.radius)
        for level in args.levels:
            mesh = icosphere(level, args.radius)
            c = capacitance_mesh(mesh)
            rows.append({"mesh": f"icosphere-{level}", "triangles": len(mesh.triangles),
                         "capacitance": c, "relative_error": abs(c / exact - 1)})
    with open(out / "capacitance.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[-1].keys()))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    passed, checks = pipeline.run_validate(cfg, cfg.output_dir)
    for c in checks:
        print(f"[{'PASS' if c.ok else 'FAIL'}] {c.name}: {json.dumps(c.detail, default=pipeline._jsonable)}")
    return EXIT_OK if passed else EXIT_PHYSICS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedmedia", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--mode", choices=["free-kernel", "background-green"], default=None)
        p.add_argument("--threads", type=int, default=None)
        p.set_defaults(func=fn)
        return p

    scenario("design", cmd_design, "compute the embedding recipe").add_argument("--M", type=int)
    scenario("simulate", cmd_simulate, "solve the particle system for one M").add_argument(
        "--M", type=int)
    scenario("continuum", cmd_continuum, "solve the limiting medium")
    scenario("converge", cmd_converge, "discrete vs continuum over the M schedule")
    scenario("validate", cmd_validate, "run invariant checks on a scenario")

    cap = sub.add_parser("capacitance", help="capacitance of a mesh or icosphere study")
    cap.add_argument("--mesh", default=None, help="OFF or ASCII STL file")
    cap.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4])
    cap.add_argument("--radius", type=float, default=1.0)
    cap.add_argument("--out", default=None)
    cap.add_argument("--threads", type=int, default=None)
    cap.set_defaults(func=cmd_capacitance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads:
            import numba
            from threadpoolctl import threadpool_limits

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
            with threadpool_limits(args.threads):
                return args.func(args)
        return args.func(args)
    except EmbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cells = getattr(exc, "cells", None)
        if cells:
            print(f"offending cells: {cells[:50]}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
