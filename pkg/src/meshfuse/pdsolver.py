"""First-order primal-dual solver for the L1 + NLTGV2 mesh fitting problem.

The problem

    min_x  sum_e ||D_e x||_1 + lambda * sum_v |xi_v - z_v| + lambda * ||A xi - b||_1

is written as ``min_x max_y <K x, y> + G(x) - F*(y)`` with ``K = [D; lambda A]``,
one dual 3-vector ``q_e`` per edge and one dual scalar ``p_d`` per valid pixel.
The tracking term stays in ``G`` and only applies to vertices that carry a
landmark inverse depth.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .barycentric import DepthGrid, SparseInterpolator, build_interpolator
from .errors import DivergenceError, SolverError
from .mesh2d import Mesh2D
from .nltgv import apply_D, apply_D_adjoint

logger = logging.getLogger(__name__)

# Energy is evaluated (and the stopping rule checked) every this many iterations.
ENERGY_EVERY = 10
POWER_ITERS = 50
POWER_RTOL = 1e-6
NORM_SAFETY = 1.05


@dataclass
class SolverConfig:
    """Solver parameters.

    ``lam`` is the data weight lambda. With ``auto_steps`` the dual and primal
    steps are both set to ``1/L`` where ``L`` bounds ``||[D; lam A]||``;
    otherwise ``sigma`` and ``tau`` must be given. ``energy_rel_tol = 0``
    runs the full ``max_iters`` budget. ``freeze_w`` keeps every ``w`` at its
    initial value (zero), leaving only the inverse depths free.
    """

    lam: float = 0.5
    sigma: Optional[float] = None
    tau: Optional[float] = None
    theta: float = 1.0
    max_iters: int = 200
    energy_rel_tol: float = 1e-5
    auto_steps: bool = True
    freeze_w: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        self.max_iters = int(self.max_iters)
        if not self.energy_rel_tol >= 0:
            raise ValueError("energy_rel_tol must be >= 0")
        if not self.auto_steps:
            if self.sigma is None or self.tau is None:
                raise ValueError("sigma and tau are required when auto_steps is off")
            if self.sigma <= 0 or self.tau <= 0:
                raise ValueError("sigma and tau must be > 0")


@dataclass
class DualState:
    """Per-edge duals ``q`` (E, 3) and per-valid-pixel duals ``p`` (n,)."""

    q: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh2D, A: SparseInterpolator) -> "DualState":
        return cls(np.zeros((mesh.n_edges, 3)), np.zeros(A.n_valid_pixels))

    def is_feasible(self) -> bool:
        return bool(np.all(np.abs(self.q) <= 1.0) and np.all(np.abs(self.p) <= 1.0))

    def copy(self) -> "DualState":
        return DualState(self.q.copy(), self.p.copy())


class Energy(NamedTuple):
    total: float
    smooth: float
    depth: float
    tracking: float


@dataclass
class SolveResult:
    mesh: Mesh2D
    energy: Energy
    iterations: int
    converged: bool
    wall_time_ms: float
    sigma: float
    tau: float
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    duals: Optional[DualState] = field(default=None, repr=False)


def resolvent_Fstar(q_tilde, p_tilde, lam, b) -> tuple[np.ndarray, np.ndarray]:
    """Resolvent of the dual term: projections onto the unit l-inf ball.

    ``q = q~ / max(1, |q~|)`` componentwise and
    ``p = (p~ - lam b) / max(1, |p~ - lam b|)``. Inside the iteration ``lam``
    is the dual step times the data weight.
    """
    q = np.clip(q_tilde, -1.0, 1.0)
    p = np.clip(np.asarray(p_tilde) - lam * np.asarray(b), -1.0, 1.0)
    return q, p


def resolvent_G(xi_tilde, z, tau, lam):
    """Shrinkage of ``xi~`` toward the landmark inverse depth ``z`` by ``tau*lam``.

    ``z`` may be None / NaN for vertices without a landmark depth, which are
    passed through unchanged. Works on scalars and arrays.
    """
    if z is None:
        return xi_tilde
    t = tau * lam
    xi_tilde = np.asarray(xi_tilde, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    diff = xi_tilde - z
    out = np.where(diff > t, xi_tilde - t, np.where(diff < -t, xi_tilde + t, z))
    out = np.where(np.isnan(z), xi_tilde, out)
    return out[()] if out.ndim == 0 else out


def estimate_operator_norm(
    mesh: Mesh2D, A: SparseInterpolator, lam: float, freeze_w: bool = False
) -> float:
    """Upper estimate of ``||K||`` for ``K x = (D x, lam A xi)``.

    Power iteration on ``K^T K`` from a fixed start vector, then a 5% margin.
    """
    n = mesh.n_vertices
    if (mesh.n_edges == 0 and (A.n_valid_pixels == 0 or lam == 0)) or n == 0:
        raise SolverError("operator norm of a zero operator")
    AtA = A.normal_matrix if lam and A.n_valid_pixels else None
    zeros_w = np.zeros((n, 2))

    def normal(xi, w):
        gxi, gw = apply_D_adjoint(mesh, apply_D(mesh, xi, w))
        if AtA is not None:
            gxi = gxi + lam * lam * (AtA @ xi)
        return gxi, (zeros_w if freeze_w else gw)

    rng = np.random.default_rng(0)
    xi = rng.standard_normal(n)
    w = zeros_w if freeze_w else rng.standard_normal((n, 2))
    eig = 0.0
    for _ in range(POWER_ITERS):
        nrm = np.sqrt(xi @ xi + np.sum(w * w))
        xi, w = xi / nrm, w / nrm
        gxi, gw = normal(xi, w)
        new = float(xi @ gxi + np.sum(w * gw))
        xi, w = gxi, gw
        if eig > 0 and abs(new - eig) <= POWER_RTOL * eig:
            eig = new
            break
        eig = new
    if not eig > 0:
        raise SolverError("operator norm of a zero operator")
    return NORM_SAFETY * float(np.sqrt(eig))


def energy(mesh: Mesh2D, A: SparseInterpolator, b, lam: float, xi=None, w=None) -> Energy:
    """Objective value and its breakdown into smoothness, depth and tracking terms."""
    xi = mesh.xi if xi is None else np.asarray(xi, dtype=np.float64)
    w = mesh.w if w is None else np.asarray(w, dtype=np.float64)
    smooth = float(np.abs(apply_D(mesh, xi, w)).sum())
    depth = float(np.abs(A.matrix @ xi - b).sum()) if A.n_valid_pixels else 0.0
    has_z = mesh.has_z
    tracking = float(np.abs(xi[has_z] - mesh.z[has_z]).sum())
    return Energy(smooth + lam * (depth + tracking), smooth, depth, tracking)


def initial_inverse_depth(mesh: Mesh2D, A: SparseInterpolator, b) -> np.ndarray:
    """Warm start: landmark depth, else median of the pixels in the incident
    triangles, else the global median of ``b``."""
    b = np.asarray(b, dtype=np.float64)
    n = mesh.n_vertices
    has_z = mesh.has_z
    if len(b) == 0 and not has_z.all():
        raise SolverError("empty problem: no valid pixels and not every vertex has a landmark depth")
    xi = np.full(n, np.median(b) if len(b) else np.nan)
    if len(b):
        by_value = np.argsort(b, kind="stable")
        verts = A.vertices[by_value].ravel()
        vals = np.repeat(b[by_value], 3)
        # stable sort on the vertex id keeps values ordered within each vertex;
        # 16-bit keys let numpy use radix sort
        key = verts.astype(np.uint16) if n < 2**16 else verts
        order = np.argsort(key, kind="stable")
        verts, vals = verts[order], vals[order]
        counts = np.bincount(verts, minlength=n)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        seen = counts > 0
        lo = starts[seen] + (counts[seen] - 1) // 2
        hi = starts[seen] + counts[seen] // 2
        xi[seen] = 0.5 * (vals[lo] + vals[hi])
    xi[has_z] = mesh.z[has_z]
    return xi


def initial_slopes(mesh: Mesh2D, A: SparseInterpolator, b) -> np.ndarray:
    """Warm start for ``w``: per-vertex least-squares plane through the pixels
    of the incident triangles; zero where those pixels do not fix a plane."""
    b = np.asarray(b, dtype=np.float64)
    n = mesh.n_vertices
    w = np.zeros((n, 2))
    if len(b) == 0:
        return w
    verts = A.vertices.ravel()
    d = np.repeat(A.pixel_coords(), 3, axis=0) - mesh.uv[verts]
    X = np.column_stack([d, np.ones(len(verts))])
    vals = np.repeat(b, 3)
    M = np.zeros((n, 3, 3))
    r = np.zeros((n, 3))
    for a in range(3):
        r[:, a] = np.bincount(verts, X[:, a] * vals, minlength=n)
        for c in range(a, 3):
            M[:, a, c] = M[:, c, a] = np.bincount(verts, X[:, a] * X[:, c], minlength=n)
    # well-posed only with enough spread in both directions
    scale = np.maximum(np.einsum("kii->k", M), 1e-300)
    ok = np.abs(np.linalg.det(M)) > 1e-9 * scale**3
    if ok.any():
        w[ok] = np.linalg.solve(M[ok], r[ok][..., None])[:, :2, 0]
    return w


class PrimalDualSolver:
    """Holds the iteration state for one problem instance.

    Attributes ``xi``, ``w`` are the current primal iterate, ``xi_bar``,
    ``w_bar`` the extrapolated one and ``duals`` the dual iterate.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        A: SparseInterpolator,
        b,
        config: SolverConfig,
        duals: Optional[DualState] = None,
        xi=None,
        w=None,
    ):
        self.mesh = mesh
        self.A = A
        self.b = np.asarray(b, dtype=np.float64)
        if self.b.shape != (A.n_valid_pixels,):
            raise ValueError("b must hold one value per valid pixel")
        if A.n_vertices != mesh.n_vertices:
            raise ValueError("interpolator and mesh disagree on the vertex count")
        self.config = config
        if config.auto_steps:
            self.norm = estimate_operator_norm(mesh, A, config.lam, config.freeze_w)
            self.sigma = self.tau = 1.0 / self.norm
        else:
            self.norm = None
            self.sigma, self.tau = float(config.sigma), float(config.tau)
        self.xi = mesh.xi.copy() if xi is None else np.array(xi, dtype=np.float64)
        self.w = mesh.w.copy() if w is None else np.array(w, dtype=np.float64)
        self.xi_bar = self.xi.copy()
        self.w_bar = self.w.copy()
        self.duals = DualState.zeros(mesh, A) if duals is None else duals.copy()
        self.iteration = 0
        self._Am = A.matrix
        self._At = A.matrix_t
        self._sigma_lam_b = self.sigma * config.lam * self.b

    def step(self) -> None:
        """One dual ascent, primal descent and extrapolation cycle."""
        mesh, cfg = self.mesh, self.config
        sigma, tau, lam = self.sigma, self.tau, cfg.lam
        q, p = self.duals.q, self.duals.p

        # dual ascent; the q and p blocks only share the read of x_bar
        q = q + sigma * apply_D(mesh, self.xi_bar, self.w_bar)
        np.clip(q, -1.0, 1.0, out=q)
        p, pixel_term = self.pixel_dual_update(p)

        # primal descent
        g_xi, g_w = apply_D_adjoint(mesh, q)
        xi_tilde = self.xi - tau * g_xi
        if pixel_term is not None:
            xi_tilde -= (tau * lam) * pixel_term
        xi_new = resolvent_G(xi_tilde, mesh.z, tau, lam)
        w_new = self.w if cfg.freeze_w else self.w - tau * g_w

        self.iteration += 1
        if not (np.all(np.isfinite(xi_new)) and np.all(np.isfinite(w_new))):
            raise DivergenceError(self.iteration)

        theta = cfg.theta
        self.xi_bar = xi_new + theta * (xi_new - self.xi)
        self.w_bar = w_new + theta * (w_new - self.w)
        self.xi, self.w = xi_new, w_new
        self.duals = DualState(q, p)

    def pixel_dual_update(self, p):
        """Dual ascent over all valid pixels and their pull on the vertices.

        Returns:
            ``(p_new, A^T p_new)``; the second item is None when the depth
            term is inactive (no pixels or ``lam == 0``).
        """
        if not len(p):
            return p, None
        sigma_lam = self.sigma * self.config.lam
        p = p + sigma_lam * (self._Am @ self.xi_bar)
        p -= self._sigma_lam_b
        np.clip(p, -1.0, 1.0, out=p)
        if not self.config.lam:
            return p, None
        return p, self._At @ p

    def energy(self) -> Energy:
        return energy(self.mesh, self.A, self.b, self.config.lam, self.xi, self.w)


def iterate(
    mesh: Mesh2D,
    A: SparseInterpolator,
    b,
    duals: DualState,
    config: SolverConfig,
    shadow: Optional[tuple[np.ndarray, np.ndarray]] = None,
):
    """Run a single primal-dual cycle starting from ``mesh``'s state.

    ``shadow`` is the extrapolated state ``(xi_bar, w_bar)`` carried between
    calls; None means ``x_bar = x``.

    Returns:
        ``(mesh', duals', shadow')``.
    """
    solver = PrimalDualSolver(mesh, A, b, config, duals=duals)
    if shadow is not None:
        solver.xi_bar = np.array(shadow[0], dtype=np.float64)
        solver.w_bar = np.array(shadow[1], dtype=np.float64)
    solver.step()
    return mesh.with_state(solver.xi, solver.w), solver.duals, (solver.xi_bar, solver.w_bar)


def solve(
    mesh: Mesh2D,
    grid: DepthGrid,
    config: Optional[SolverConfig] = None,
    A: Optional[SparseInterpolator] = None,
    init: bool = True,
) -> SolveResult:
    """Fit the vertex inverse depths and slopes of ``mesh`` to ``grid``.

    Args:
        mesh: triangulated mesh; its ``xi``/``w`` are used as the start point
            when ``init`` is False.
        grid: observed inverse depths.
        config: solver parameters (defaults if None).
        A: prebuilt interpolator for ``mesh`` and ``grid``.
        init: warm-start ``xi`` and ``w`` from the data (``w = 0`` when
            ``freeze_w`` is set).

    Returns:
        The fitted mesh, final energy breakdown and run diagnostics. The
        wall time covers step-size estimation, initialization and iterations.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    if A is None:
        A = build_interpolator(mesh, grid)
    b = grid.valid_values()
    if len(b) == 0 and not mesh.has_z.all():
        raise SolverError("empty problem: no valid pixels and not every vertex has a landmark depth")
    if init:
        xi0 = initial_inverse_depth(mesh, A, b)
        w0 = np.zeros((mesh.n_vertices, 2)) if config.freeze_w else initial_slopes(mesh, A, b)
    else:
        xi0, w0 = mesh.xi, mesh.w
    solver = PrimalDualSolver(mesh, A, b, config, xi=xi0, w=w0)

    e = solver.energy()
    trajectory = [(0, e.total)]
    converged = False
    prev = e.total
    while solver.iteration < config.max_iters:
        solver.step()
        if solver.iteration % ENERGY_EVERY == 0:
            cur = solver.energy().total
            trajectory.append((solver.iteration, cur))
            if abs(cur - prev) < config.energy_rel_tol * max(abs(prev), np.finfo(float).tiny):
                converged = True
                break
            prev = cur
    e = solver.energy()
    if trajectory[-1][0] != solver.iteration:
        trajectory.append((solver.iteration, e.total))
    wall_ms = 1e3 * (time.perf_counter() - t0)
    logger.debug("solve: %d iterations, energy %.6g, %.1f ms", solver.iteration, e.total, wall_ms)
    return SolveResult(
        mesh=mesh.with_state(solver.xi, solver.w),
        energy=e,
        iterations=solver.iteration,
        converged=converged,
        wall_time_ms=wall_ms,
        sigma=solver.sigma,
        tau=solver.tau,
        trajectory=trajectory,
        duals=solver.duals,
    )


def _conjugate_gradient(matvec, rhs, rtol: float, max_iter: int) -> np.ndarray:
    x = np.zeros_like(rhs)
    r = rhs.copy()
    d = r.copy()
    rr = r @ r
    target = (rtol * np.linalg.norm(rhs)) ** 2
    for _ in range(max_iter):
        if rr <= target:
            return x
        Ad = matvec(d)
        alpha = rr / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
    if rr > target:
        raise SolverError(
            f"conjugate gradient did not reach relative residual {rtol} in {max_iter} iterations"
        )
    return x


def ls_fit(mesh: Mesh2D, A: SparseInterpolator, b, rtol: float = 1e-8) -> np.ndarray:
    """Least-squares vertex inverse depths, ``argmin ||A xi - b||_2``.

    Solves the normal equations ``A^T A xi = A^T b`` by conjugate gradient.
    Every vertex needs at least one pixel with a nonzero weight on it.
    """
    b = np.asarray(b, dtype=np.float64)
    Am, At = A.matrix, A.matrix_t
    support = At @ np.ones(A.n_valid_pixels)
    unsupported = np.flatnonzero(support <= 0)
    if len(unsupported):
        v = int(unsupported[0])
        raise SolverError(
            f"singular normal equations: vertex {v} at {tuple(mesh.uv[v].tolist())} has no supporting pixels"
        )
    rhs = At @ b
    if not np.any(rhs):
        return np.zeros(mesh.n_vertices)
    return _conjugate_gradient(lambda x: At @ (Am @ x), rhs, rtol, max_iter=20 * mesh.n_vertices + 100)


def duality_gap_check(xi, A, b) -> tuple[float, float]:
    """``(||A xi - b||_1, <A xi - b, sign(A xi - b)>)``; the two agree."""
    Am = A.matrix if isinstance(A, SparseInterpolator) else A
    r = Am @ np.asarray(xi, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.abs(r).sum()), float(r @ np.sign(r))
