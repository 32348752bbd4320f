"""Command-line interface: ``meshfuse fit|synth|eval|ablate|bench``.

Exit codes: 0 on success, 1 when fitting fails (solver divergence, degenerate
triangulation, uncovered pixels), 2 on I/O or usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__, depthio, pipeline
from .errors import DegenerateError, FormatError, SolverError, UncoveredPixelError

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2

logger = logging.getLogger("meshfuse")


def _spacing(text: str) -> Optional[float]:
    if text.strip().lower() == "none":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a spacing in px or 'none', got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("spacing must be > 0")
    return value


def _spacing_list(text: str) -> list[Optional[float]]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty spacing list")
    return [_spacing(t) for t in items]


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, help="data weight (overrides the config)")
    p.add_argument("--iters", type=int, help="iteration cap (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a mesh to a depth map")
    p.add_argument("--depth", required=True, help="metric depth map (pfm, pgm, csv)")
    p.add_argument("--landmarks", help="CSV of u1,u2,depth_m landmarks")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="mesh file to write")
    p.add_argument("--format", choices=depthio.MESH_KINDS, help="mesh format (default: from --out)")
    p.add_argument("--steiner", type=_spacing, help="Steiner spacing in px, or 'none'")
    p.add_argument("--truth", help="ground-truth depth map for the density metric")
    p.add_argument("--report", help="report path (default: <out>.report.yaml)")
    _add_solver_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--config", required=True, help="scene config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=depthio.DEPTH_KINDS, default="pfm", help="depth format")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")

    p = sub.add_parser("eval", help="score a mesh file against ground truth")
    p.add_argument("--mesh", required=True, help="OBJ or PLY mesh")
    p.add_argument("--truth", "--depth", dest="truth", required=True, help="ground-truth depth map")
    p.add_argument("--config", help="config file (intrinsics, rel_tol, depth format)")
    p.add_argument("--residuals", help="write per-pixel estimate/truth CSV here")
    p.add_argument("--out", help="report path")

    p = sub.add_parser("ablate", help="Steiner spacing ablation on a synthetic scene")
    p.add_argument("--config", required=True, help="scene (and solver) config file")
    p.add_argument("--steiner", type=_spacing_list, default=[100.0, 50.0, 10.0],
                   help="comma-separated spacings (default: 100,50,10)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    p.add_argument("--repeats", type=int, default=1, help="timing repeats per spacing")
    p.add_argument("--out", help="write the CSV table here instead of stdout")
    _add_solver_flags(p)

    p = sub.add_parser("bench", help="time a fixed-budget fit")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--steiner", type=_spacing, default=pipeline.DEFAULT_STEINER)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args) -> dict:
    out = {"lambda": args.lam, "max_iters": args.iters}
    if getattr(args, "steiner", None) is not None and not isinstance(args.steiner, list):
        out["steiner"] = args.steiner
    return out


def _cmd_fit(args) -> None:
    report = pipeline.run_fit(
        args.depth,
        landmarks_path=args.landmarks,
        config_path=args.config,
        out_path=args.out,
        mesh_kind=args.format,
        truth_path=args.truth,
        report_path=args.report,
        overrides=_overrides(args),
    )
    print(
        f"V={report.vertices} E={report.edges} F={report.triangles} "
        f"iterations={report.iterations} energy={report.energy_total!r} "
        f"accurate_density={report.accurate_density!r}"
    )


def _cmd_synth(args) -> None:
    values = depthio.read_config(args.config)
    spec = pipeline.scene_from_config(values, seed=args.seed)
    scale = pipeline.settings_from_config(values).pgm_scale
    paths = pipeline.write_scene(spec, args.out, args.format, scale)
    for role, path in paths.items():
        print(f"{role}: {path}")


def _cmd_eval(args) -> None:
    report = pipeline.run_eval(
        args.mesh, args.truth, config_path=args.config, residuals_path=args.residuals, report_path=args.out
    )
    print(f"accurate_density={report.accurate_density!r}")


def _cmd_ablate(args) -> None:
    values = depthio.read_config(args.config)
    spec = pipeline.scene_from_config(values, seed=args.seed)
    settings = pipeline.settings_from_config(values, _overrides(args))
    rows = pipeline.run_ablation(spec, args.steiner, settings, repeats=args.repeats)
    table = pipeline.format_ablation(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write(table)
    else:
        sys.stdout.write(table)


def _cmd_bench(args) -> None:
    r = pipeline.run_bench(args.width, args.height, args.steiner, args.iters, args.seed)
    print(
        f"{r.width}x{r.height} S={r.spacing} V={r.vertices} pixels={r.valid_pixels} "
        f"iterations={r.iterations}"
    )
    print(f"fit_ms={r.fit_ms:.1f} solve_ms={r.solve_ms:.1f} dual_update_ms={r.dual_update_ms:.3f}")


COMMANDS = {
    "fit": _cmd_fit,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "bench": _cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except (SolverError, DegenerateError, UncoveredPixelError) as exc:
        print(f"meshfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, FormatError, ValueError) as exc:
        print(f"meshfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
