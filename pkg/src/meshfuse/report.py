"""Evaluation reports and per-pixel residual dumps.

A report is a YAML document with a fixed field order and a versioned header,
so that two reports can be compared with a plain text diff. Floats are
written with ``repr`` precision and read back bit-exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .barycentric import DepthGrid
from .errors import FormatError

REPORT_FORMAT = "meshfuse-report"
REPORT_VERSION = 1
HEADER = f"# {REPORT_FORMAT} v{REPORT_VERSION}\n"

# fields that hold wall-clock measurements and so differ between runs
TIMING_FIELDS = ("wall_time_ms", "fit_time_ms")


@dataclass
class EvalReport:
    """Outcome of one fit (or one evaluation of an existing mesh).

    ``accurate_density`` is the mean of ``per_frame_density``; a single depth
    map gives a one-element list. ``density_reference`` says which grid the
    density was measured against (``truth`` or the ``observed`` input).
    ``wall_time_ms`` is the solve alone; ``fit_time_ms`` adds triangulation
    and interpolator construction. ``trajectory`` holds ``(iteration,
    energy)`` pairs sampled every 10 iterations.
    """

    accurate_density: Optional[float] = None
    per_frame_density: list[float] = field(default_factory=list)
    rel_tol: float = 0.10
    density_reference: Optional[str] = None
    energy_total: Optional[float] = None
    energy_smooth: Optional[float] = None
    energy_depth: Optional[float] = None
    energy_tracking: Optional[float] = None
    iterations: int = 0
    converged: bool = False
    wall_time_ms: Optional[float] = None
    fit_time_ms: Optional[float] = None
    vertices: int = 0
    edges: int = 0
    triangles: int = 0
    valid_pixels: int = 0
    config: dict = field(default_factory=dict)
    trajectory: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        d = self.accurate_density
        if d is not None and not 0.0 <= d <= 1.0:
            raise ValueError(f"accurate_density must lie in [0, 1], got {d}")

    def without_timing(self) -> "EvalReport":
        """Copy with the wall-clock fields cleared, for run-to-run comparison."""
        return replace(self, **{k: None for k in TIMING_FIELDS})

    def to_dict(self) -> dict:
        out = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
        for f in fields(self):
            out[f.name] = _plain(getattr(self, f.name))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("format") != REPORT_FORMAT:
            raise FormatError(f"not a {REPORT_FORMAT} document")
        if data.get("version") != REPORT_VERSION:
            raise FormatError(f"unsupported report version {data.get('version')!r}")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known - {"format", "version"}
        if extra:
            raise FormatError(f"unknown report fields: {sorted(extra)}")
        kw = {k: v for k, v in data.items() if k in known}
        kw["trajectory"] = [(int(i), float(e)) for i, e in kw.get("trajectory", [])]
        return cls(**kw)

    def dumps(self) -> str:
        return HEADER + yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise FormatError(f"malformed report: {exc}") from None
        if not isinstance(data, dict):
            raise FormatError("malformed report: expected a mapping")
        return cls.from_dict(data)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls.loads(Path(path).read_text())


def _plain(value):
    """numpy scalars/arrays and tuples to YAML-safe builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


# -- residual dumps ---------------------------------------------------------------

RESIDUAL_COLUMNS = ("u1", "u2", "estimate", "truth")


def write_residuals(path, estimated, truth: DepthGrid) -> None:
    """One CSV row per valid ground-truth pixel: position, estimate, truth.

    Undefined estimates are written as ``nan``.
    """
    estimated = np.asarray(estimated, dtype=np.float64)
    v, u = np.nonzero(truth.mask)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESIDUAL_COLUMNS)
        for x, y, e, t in zip(u, v, estimated[v, u], truth.values[v, u]):
            w.writerow([int(x), int(y), repr(float(e)), repr(float(t))])


def density_from_residuals(path, rel_tol: float = 0.10) -> float:
    """Accurate density recomputed from a residual dump."""
    hits = total = 0
    with open(path, newline="") as f:
        reader = csv.reader(f)
        if tuple(next(reader, ())) != RESIDUAL_COLUMNS:
            raise FormatError(f"{path}: not a residual dump")
        for lineno, row in enumerate(reader, 2):
            try:
                est, gt = float(row[2]), float(row[3])
            except (IndexError, ValueError):
                raise FormatError(f"{path} line {lineno}: malformed row") from None
            total += 1
            if not math.isnan(est) and abs(est - gt) <= rel_tol * gt:
                hits += 1
    if total == 0:
        raise ValueError("no valid ground-truth pixels")
    return hits / total
