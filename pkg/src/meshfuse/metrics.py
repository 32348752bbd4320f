"""Reconstruction quality metrics."""

from __future__ import annotations

import numpy as np

from .barycentric import DepthGrid


def accurate_density(estimated, truth: DepthGrid, rel_tol: float = 0.10) -> float:
    """Fraction of ground-truth pixels whose estimate is within ``rel_tol`` of the truth.

    ``estimated`` is an (H, W) inverse-depth image aligned with ``truth``;
    NaN marks pixels where the method gives no estimate, which count as
    inaccurate.
    """
    estimated = np.asarray(estimated, dtype=np.float64)
    if estimated.shape != truth.values.shape:
        raise ValueError(f"shape mismatch: {estimated.shape} vs {truth.values.shape}")
    n = truth.n_valid
    if n == 0:
        raise ValueError("no valid ground-truth pixels")
    est = estimated[truth.mask]
    gt = truth.values[truth.mask]
    with np.errstate(invalid="ignore"):
        ok = np.abs(est - gt) <= rel_tol * gt
    return float(np.count_nonzero(ok)) / n
