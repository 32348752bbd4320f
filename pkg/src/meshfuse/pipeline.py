"""End-to-end fitting, evaluation, Steiner ablation and benchmarking.

Configuration files are flat ``key = value`` text. Solver and pipeline keys:

    lambda, sigma, tau, theta, max_iters, energy_rel_tol, auto_steps, freeze_w
    steiner          grid spacing in px, or ``none`` for image corners only
    fx, fy, cx, cy   pinhole intrinsics (default: f = max(W, H), centered)
    depth_kind       pfm | pgm16 | csv (default: from the file extension)
    pgm_scale        meters per PGM16 unit
    rel_tol          accuracy tolerance of the density metric

Scene keys (synthetic data):

    scene            plane | two_plane | curved  (preset, optional)
    curvature        curvature of the ``curved`` preset
    width, height, noise_sigma, outlier_frac, outlier_lo, outlier_hi,
    invalid_frac, seed, landmark_spacing (or ``none``), landmark_jitter
    plane.K.region   ``all`` | ``rect x0 y0 x1 y1`` | ``halfplane_ge n1 n2 c``
                     | ``halfplane_lt n1 n2 c``
    plane.K.coeffs   ``a b c``   for xi = a u1 + b u2 + c
    plane.K.quad     ``d e f``   optional quadratic terms
"""

from __future__ import annotations

import gc
import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import depthio, synth
from .barycentric import DepthGrid, SparseInterpolator, build_interpolator, render
from .depthio import Intrinsics
from .errors import FormatError
from .mesh2d import Landmark, Mesh2D, triangulate
from .metrics import accurate_density
from .pdsolver import PrimalDualSolver, SolveResult, SolverConfig, initial_inverse_depth, solve
from .report import EvalReport, write_residuals

logger = logging.getLogger(__name__)

DEFAULT_STEINER = 50.0

SOLVER_KEYS = {
    "lambda": ("lam", float),
    "sigma": ("sigma", float),
    "tau": ("tau", float),
    "theta": ("theta", float),
    "max_iters": ("max_iters", int),
    "energy_rel_tol": ("energy_rel_tol", float),
    "auto_steps": ("auto_steps", "bool"),
    "freeze_w": ("freeze_w", "bool"),
}
PIPELINE_KEYS = {"steiner", "fx", "fy", "cx", "cy", "depth_kind", "pgm_scale", "rel_tol"}
SCENE_KEYS = {
    "scene", "curvature", "width", "height", "noise_sigma", "outlier_frac", "outlier_lo",
    "outlier_hi", "invalid_frac", "seed", "landmark_spacing", "landmark_jitter",
}
PLANE_KEY = re.compile(r"plane\.(\d+)\.(region|coeffs|quad)$")


def _bool(key: str, text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"config key {key!r}: expected a boolean, got {text!r}")


def _number(key: str, text: str, kind=float):
    try:
        if kind is int:
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(text)
    except ValueError:
        raise FormatError(f"config key {key!r}: expected a number, got {text!r}") from None


def _optional(key: str, text: str) -> Optional[float]:
    return None if text.strip().lower() == "none" else _number(key, text)


def check_keys(values: dict) -> None:
    """Reject keys that no part of the pipeline understands."""
    for key in values:
        if key in SOLVER_KEYS or key in PIPELINE_KEYS or key in SCENE_KEYS or PLANE_KEY.match(key):
            continue
        raise FormatError(f"unknown config key {key!r}")


@dataclass
class FitSettings:
    """Everything a fit needs besides the input data."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    steiner_spacing: Optional[float] = DEFAULT_STEINER
    intrinsics: Optional[Intrinsics] = None
    depth_kind: Optional[str] = None
    pgm_scale: Optional[float] = None
    rel_tol: float = 0.10

    def intrinsics_for(self, width: int, height: int) -> Intrinsics:
        return self.intrinsics or Intrinsics.default(width, height)

    def echo(self) -> dict:
        """Flat config echo for reports, in a fixed order."""
        s = self.solver
        out = {
            "lambda": s.lam,
            "sigma": s.sigma,
            "tau": s.tau,
            "theta": s.theta,
            "max_iters": s.max_iters,
            "energy_rel_tol": s.energy_rel_tol,
            "auto_steps": s.auto_steps,
            "freeze_w": s.freeze_w,
            "steiner": self.steiner_spacing,
            "rel_tol": self.rel_tol,
        }
        if self.intrinsics is not None:
            k = self.intrinsics
            out.update(fx=k.fx, fy=k.fy, cx=k.cx, cy=k.cy)
        return out


def settings_from_config(values: dict, overrides: Optional[dict] = None) -> FitSettings:
    """Build :class:`FitSettings` from parsed config values.

    ``overrides`` maps config keys to already-typed values (from the command
    line) and wins over the file.
    """
    check_keys(values)
    solver_kw = {}
    for key, (name, kind) in SOLVER_KEYS.items():
        if key in values:
            text = values[key]
            solver_kw[name] = _bool(key, text) if kind == "bool" else _number(key, text, kind)
    settings = {}
    if "steiner" in values:
        settings["steiner_spacing"] = _optional("steiner", values["steiner"])
    intr = [k for k in ("fx", "fy", "cx", "cy") if k in values]
    if intr:
        if len(intr) != 4:
            raise FormatError("intrinsics need all of fx, fy, cx, cy")
        settings["intrinsics"] = Intrinsics(*(_number(k, values[k]) for k in ("fx", "fy", "cx", "cy")))
    if "depth_kind" in values:
        settings["depth_kind"] = values["depth_kind"]
    if "pgm_scale" in values:
        settings["pgm_scale"] = _number("pgm_scale", values["pgm_scale"])
    if "rel_tol" in values:
        settings["rel_tol"] = _number("rel_tol", values["rel_tol"])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in SOLVER_KEYS:
            solver_kw[SOLVER_KEYS[key][0]] = value
        elif key == "steiner":
            settings["steiner_spacing"] = value
        else:
            raise ValueError(f"unknown override {key!r}")
    return FitSettings(solver=SolverConfig(**solver_kw), **settings)


def _floats(key: str, text: str, n: Optional[int] = None) -> tuple[float, ...]:
    parts = text.split()
    if n is not None and len(parts) != n:
        raise FormatError(f"config key {key!r}: expected {n} numbers, got {text!r}")
    return tuple(_number(key, p) for p in parts)


def scene_from_config(values: dict, seed: Optional[int] = None) -> synth.SceneSpec:
    """Build a :class:`~meshfuse.synth.SceneSpec` from parsed config values.

    Either a ``scene`` preset or explicit ``plane.K.*`` entries define the
    geometry; the remaining keys set noise, outliers, invalid pixels and
    landmarks.
    """
    check_keys(values)
    kw = {}
    for key in ("noise_sigma", "outlier_frac", "invalid_frac", "landmark_jitter"):
        if key in values:
            kw[key] = _number(key, values[key])
    if "outlier_lo" in values or "outlier_hi" in values:
        kw["outlier_range"] = (
            _number("outlier_lo", values.get("outlier_lo", "0.05")),
            _number("outlier_hi", values.get("outlier_hi", "2.0")),
        )
    if "landmark_spacing" in values:
        kw["landmark_spacing"] = _optional("landmark_spacing", values["landmark_spacing"])
    kw["seed"] = seed if seed is not None else _number("seed", values.get("seed", "0"), int)
    size = {k: _number(k, values[k], int) for k in ("width", "height") if k in values}

    planes = {}
    for key, text in values.items():
        m = PLANE_KEY.match(key)
        if m:
            planes.setdefault(int(m.group(1)), {})[m.group(2)] = (key, text)

    preset = values.get("scene")
    if preset is not None and planes:
        raise FormatError("give either a scene preset or plane.K entries, not both")
    if preset is not None:
        if preset == "plane":
            spec = synth.plane_scene(**size, **kw)
        elif preset == "two_plane":
            spec = synth.two_plane_scene(**size, **kw)
        elif preset == "curved":
            if "curvature" in values:
                size["curvature"] = _number("curvature", values["curvature"])
            spec = synth.curved_scene(**size, **kw)
        else:
            raise FormatError(f"unknown scene preset {preset!r}")
    else:
        if not planes:
            raise FormatError("scene config needs a 'scene' preset or plane.K entries")
        if set(size) != {"width", "height"}:
            raise FormatError("scene config needs width and height")
        plist = []
        for k in sorted(planes):
            entry = planes[k]
            if "region" not in entry or "coeffs" not in entry:
                raise FormatError(f"plane.{k} needs region and coeffs")
            rkey, rtext = entry["region"]
            parts = rtext.split()
            if not parts:
                raise FormatError(f"config key {rkey!r}: empty region")
            try:
                region = synth.Region(parts[0], _floats(rkey, " ".join(parts[1:])))
            except ValueError as exc:
                raise FormatError(f"config key {rkey!r}: {exc}") from None
            coeffs = _floats(*entry["coeffs"], n=3)
            quad = _floats(*entry["quad"], n=3) if "quad" in entry else (0.0, 0.0, 0.0)
            plist.append(synth.Plane(region, coeffs, quad))
        spec = synth.SceneSpec(size["width"], size["height"], plist, **kw)
    spec.validate()
    return spec


def scene_to_config(spec: synth.SceneSpec) -> dict:
    """Explicit (preset-free) config values reproducing ``spec`` exactly."""
    out = {
        "width": spec.width,
        "height": spec.height,
        "noise_sigma": repr(float(spec.noise_sigma)),
        "outlier_frac": repr(float(spec.outlier_frac)),
        "outlier_lo": repr(float(spec.outlier_range[0])),
        "outlier_hi": repr(float(spec.outlier_range[1])),
        "invalid_frac": repr(float(spec.invalid_frac)),
        "seed": spec.seed,
        "landmark_spacing": "none" if spec.landmark_spacing is None else repr(float(spec.landmark_spacing)),
        "landmark_jitter": repr(float(spec.landmark_jitter)),
    }
    for k, plane in enumerate(spec.planes):
        region = " ".join([plane.region.kind] + [repr(float(p)) for p in plane.region.params])
        out[f"plane.{k}.region"] = region
        out[f"plane.{k}.coeffs"] = " ".join(repr(float(c)) for c in plane.coeffs)
        out[f"plane.{k}.quad"] = " ".join(repr(float(c)) for c in plane.quad)
    return out


# -- fitting ----------------------------------------------------------------------


@dataclass
class FitOutcome:
    mesh: Mesh2D
    interpolator: SparseInterpolator
    result: SolveResult
    fit_time_ms: float

    def estimate(self, width: int, height: int) -> np.ndarray:
        return render(self.mesh, width, height)


def fit_grid(grid: DepthGrid, landmarks: Sequence[Landmark], settings: FitSettings) -> FitOutcome:
    """Triangulate, build the interpolator and solve."""
    t0 = time.perf_counter()
    mesh = triangulate(landmarks, (grid.width, grid.height), settings.steiner_spacing)
    A = build_interpolator(mesh, grid)
    result = solve(mesh, grid, settings.solver, A=A)
    fit_ms = 1e3 * (time.perf_counter() - t0)
    return FitOutcome(result.mesh, A, result, fit_ms)


def make_report(
    outcome: FitOutcome,
    grid: DepthGrid,
    settings: FitSettings,
    truth: Optional[DepthGrid] = None,
) -> EvalReport:
    """Report for a fit; density is measured against ``truth`` if given, else ``grid``."""
    ref = truth if truth is not None else grid
    density = None
    if ref.n_valid:
        density = accurate_density(outcome.estimate(ref.width, ref.height), ref, settings.rel_tol)
    r, m = outcome.result, outcome.mesh
    return EvalReport(
        accurate_density=density,
        per_frame_density=[] if density is None else [density],
        rel_tol=settings.rel_tol,
        density_reference=None if density is None else ("truth" if truth is not None else "observed"),
        energy_total=r.energy.total,
        energy_smooth=r.energy.smooth,
        energy_depth=r.energy.depth,
        energy_tracking=r.energy.tracking,
        iterations=r.iterations,
        converged=r.converged,
        wall_time_ms=r.wall_time_ms,
        fit_time_ms=outcome.fit_time_ms,
        vertices=m.n_vertices,
        edges=m.n_edges,
        triangles=m.n_triangles,
        valid_pixels=grid.n_valid,
        config=settings.echo(),
        trajectory=list(r.trajectory),
    )


def report_path_for(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".report.yaml")


def run_fit(
    depth_path,
    landmarks_path=None,
    config_path=None,
    out_path="mesh.obj",
    mesh_kind: Optional[str] = None,
    truth_path=None,
    report_path=None,
    overrides: Optional[dict] = None,
) -> EvalReport:
    """Fit a mesh to a depth file and write the mesh and its report.

    The report goes to ``report_path`` (default: ``<out stem>.report.yaml``
    next to the mesh).
    """
    values = depthio.read_config(config_path) if config_path else {}
    settings = settings_from_config(values, overrides)
    grid = depthio.read_depth(depth_path, settings.depth_kind, settings.pgm_scale)
    landmarks = depthio.read_landmarks(landmarks_path) if landmarks_path else []
    truth = None
    if truth_path:
        truth = depthio.read_depth(truth_path, settings.depth_kind, settings.pgm_scale)
        if truth.values.shape != grid.values.shape:
            raise FormatError("ground truth and input depth differ in size")
    outcome = fit_grid(grid, landmarks, settings)
    depthio.write_mesh(outcome.mesh, settings.intrinsics_for(grid.width, grid.height), out_path, mesh_kind)
    report = make_report(outcome, grid, settings, truth)
    report.write(report_path or report_path_for(out_path))
    logger.info(
        "fit: V=%d F=%d, %d iterations, E=%.6g, density=%s",
        report.vertices, report.triangles, report.iterations, report.energy_total, report.accurate_density,
    )
    return report


def run_eval(
    mesh_path,
    truth_path,
    config_path=None,
    residuals_path=None,
    report_path=None,
) -> EvalReport:
    """Accurate density of an existing mesh file against a ground-truth depth file."""
    values = depthio.read_config(config_path) if config_path else {}
    settings = settings_from_config(values)
    truth = depthio.read_depth(truth_path, settings.depth_kind, settings.pgm_scale)
    verts, faces = depthio.read_mesh(mesh_path)
    mesh = depthio.mesh_from_points(
        verts, faces, settings.intrinsics_for(truth.width, truth.height), frame=(truth.width, truth.height)
    )
    estimate = render(mesh, truth.width, truth.height)
    density = accurate_density(estimate, truth, settings.rel_tol)
    if residuals_path:
        write_residuals(residuals_path, estimate, truth)
    report = EvalReport(
        accurate_density=density,
        per_frame_density=[density],
        rel_tol=settings.rel_tol,
        density_reference="truth",
        vertices=mesh.n_vertices,
        edges=mesh.n_edges,
        triangles=mesh.n_triangles,
        valid_pixels=truth.n_valid,
        config=settings.echo(),
    )
    if report_path:
        report.write(report_path)
    return report


def write_scene(spec: synth.SceneSpec, out_dir, kind: str = "pfm", pgm_scale: Optional[float] = None) -> dict:
    """Generate ``spec`` and write observed/truth depth, landmarks and the scene config.

    Returns:
        Mapping of role (``observed``, ``truth``, ``landmarks``, ``config``)
        to the written path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = synth.generate(spec)
    ext = {"pfm": "pfm", "csv": "csv", "pgm16": "pgm"}.get(kind)
    if ext is None:
        raise FormatError(f"unknown depth kind {kind!r}; expected one of {depthio.DEPTH_KINDS}")
    if kind == "pgm16" and pgm_scale is None:
        pgm_scale = 1e-3
    paths = {
        "observed": out_dir / f"observed.{ext}",
        "truth": out_dir / f"truth.{ext}",
        "landmarks": out_dir / "landmarks.csv",
        "config": out_dir / "scene.cfg",
    }
    depthio.write_depth(paths["observed"], scene.observed, kind, pgm_scale)
    depthio.write_depth(paths["truth"], scene.truth, kind, pgm_scale)
    depthio.write_landmarks(paths["landmarks"], scene.landmarks)
    paths["config"].write_text(depthio.format_config(scene_to_config(spec)))
    return paths


# -- ablation and benchmark --------------------------------------------------------


@dataclass
class AblationRow:
    spacing: Optional[float]
    accurate_density: float
    time_ms: float
    solve_ms: float
    vertices: int
    iterations: int


ABLATION_COLUMNS = ("spacing", "accurate_density", "time_ms", "solve_ms", "vertices", "iterations")


def _spacing_order(s: Optional[float]) -> float:
    # coarsest first; no Steiner grid at all is the coarsest
    return float("inf") if s is None else s


def run_ablation(
    spec: synth.SceneSpec,
    spacings: Iterable[Optional[float]],
    settings: Optional[FitSettings] = None,
    repeats: int = 1,
) -> list[AblationRow]:
    """Fit one generated scene with each Steiner spacing.

    ``time_ms`` is the whole fit (triangulation, interpolator and solve) and
    ``solve_ms`` the solve alone; each is the minimum over ``repeats`` runs,
    timed with the garbage collector paused as ``timeit`` does. Repeats are
    interleaved across spacings so slow phases of a shared machine hit every
    spacing alike. Rows are ordered from the coarsest
    spacing to the finest.
    """
    spacings = list(spacings)
    if not spacings:
        raise ValueError("ablation needs at least one Steiner spacing")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    settings = settings or FitSettings()
    scene = synth.generate(spec)
    spacings = sorted(set(spacings), key=_spacing_order, reverse=True)
    best: dict = {}
    for _ in range(repeats):
        for s in spacings:
            run = replace(settings, steiner_spacing=s)
            gc_was_enabled = gc.isenabled()
            gc.disable()
            try:
                outcome = fit_grid(scene.observed, scene.landmarks, run)
            finally:
                if gc_was_enabled:
                    gc.enable()
            prev = best.get(s)
            if prev is None:
                density = accurate_density(
                    outcome.estimate(spec.width, spec.height), scene.truth, settings.rel_tol
                )
                best[s] = AblationRow(
                    s, density, outcome.fit_time_ms, outcome.result.wall_time_ms,
                    outcome.mesh.n_vertices, outcome.result.iterations,
                )
            else:
                prev.time_ms = min(prev.time_ms, outcome.fit_time_ms)
                prev.solve_ms = min(prev.solve_ms, outcome.result.wall_time_ms)
    return [best[s] for s in spacings]


def format_ablation(rows: Sequence[AblationRow]) -> str:
    """CSV table with a header row; ``none`` marks the corners-only mesh."""
    lines = [",".join(ABLATION_COLUMNS)]
    for r in rows:
        s = "none" if r.spacing is None else repr(float(r.spacing))
        lines.append(
            f"{s},{r.accurate_density!r},{r.time_ms:.3f},{r.solve_ms:.3f},{r.vertices},{r.iterations}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class BenchResult:
    width: int
    height: int
    spacing: Optional[float]
    iterations: int
    vertices: int
    valid_pixels: int
    fit_ms: float
    solve_ms: float
    dual_update_ms: float


def run_bench(
    width: int = 640,
    height: int = 480,
    spacing: Optional[float] = DEFAULT_STEINER,
    iters: int = 200,
    seed: int = 0,
    dual_samples: int = 50,
) -> BenchResult:
    """Time a fixed-budget fit and the per-pixel dual update on a curved scene.

    The fit runs exactly ``iters`` iterations (no early stop). The dual update
    time is the median over ``dual_samples`` calls of the per-pixel dual
    ascent together with its pull on the vertices.
    """
    spec = synth.curved_scene(width, height, noise_sigma=0.005, outlier_frac=0.05, seed=seed)
    scene = synth.generate(spec)
    settings = FitSettings(
        solver=SolverConfig(max_iters=iters, energy_rel_tol=0.0), steiner_spacing=spacing
    )
    outcome = fit_grid(scene.observed, scene.landmarks, settings)

    b = scene.observed.valid_values()
    mesh, A = outcome.mesh, outcome.interpolator
    solver = PrimalDualSolver(mesh, A, b, settings.solver, xi=initial_inverse_depth(mesh, A, b))
    samples = []
    p = solver.duals.p
    for _ in range(dual_samples):
        t0 = time.perf_counter()
        p, _pull = solver.pixel_dual_update(p)
        samples.append(time.perf_counter() - t0)
    return BenchResult(
        width=width,
        height=height,
        spacing=spacing,
        iterations=outcome.result.iterations,
        vertices=mesh.n_vertices,
        valid_pixels=scene.observed.n_valid,
        fit_ms=outcome.fit_time_ms,
        solve_ms=outcome.result.wall_time_ms,
        dual_update_ms=1e3 * float(np.median(samples)),
    )
