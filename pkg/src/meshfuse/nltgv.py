"""Discrete second-order non-local TGV over the mesh edges.

For an edge ``e = (i, j)`` the operator is

    D_e(x_i, x_j) = [ alpha * (xi_i - xi_j - <w_i, u_i - u_j>),
                      beta  * (w1_i - w1_j),
                      beta  * (w2_i - w2_j) ]

which vanishes when both vertices sit on one plane of inverse depth
``xi(u) = <w, u> + c`` and share its gradient ``w``.
"""

from __future__ import annotations

import numpy as np

from .mesh2d import Edge, Mesh2D, VertexState


def apply_De(edge: Edge, vi: VertexState, vj: VertexState) -> np.ndarray:
    """Single-edge operator, returns the 3-vector ``D_e(x_i, x_j)``."""
    du = np.subtract(vi.u, vj.u)
    wi = np.asarray(vi.w, dtype=np.float64)
    wj = np.asarray(vj.w, dtype=np.float64)
    return np.array(
        [
            edge.alpha * (vi.xi - vj.xi - wi @ du),
            edge.beta * (wi[0] - wj[0]),
            edge.beta * (wi[1] - wj[1]),
        ]
    )


def apply_D(mesh: Mesh2D, xi=None, w=None) -> np.ndarray:
    """All edge operators at once.

    Returns:
        (E, 3) array whose row ``e`` is ``D_e`` applied to the state (``xi``,
        ``w`` default to the mesh's own). ``.ravel()`` gives the stacked vector.
    """
    xi = mesh.xi if xi is None else xi
    w = mesh.w if w is None else w
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    du = mesh.uv[i] - mesh.uv[j]
    wi = w[i]
    out = np.empty((mesh.n_edges, 3))
    out[:, 0] = mesh.alpha * (xi[i] - xi[j] - (wi[:, 0] * du[:, 0] + wi[:, 1] * du[:, 1]))
    out[:, 1:] = mesh.beta[:, None] * (wi - w[j])
    return out


def apply_D_adjoint(mesh: Mesh2D, q) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`apply_D`, split into the xi part and the w part.

    Each edge contributes the first three rows of ``D_e^T q_e`` to its source
    vertex and the last three to its sink vertex.

    Returns:
        ``(g_xi, g_w)`` with shapes (N,) and (N, 2).
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mesh.n_edges, 3):
        raise ValueError(f"expected duals of shape ({mesh.n_edges}, 3), got {q.shape}")
    n = mesh.n_vertices
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    aq = mesh.alpha * q[:, 0]
    bq = mesh.beta[:, None] * q[:, 1:]
    dji = mesh.uv[j] - mesh.uv[i]

    idx = np.concatenate([i, j])
    g_xi = np.bincount(idx, weights=np.concatenate([aq, -aq]), minlength=n)
    src_w = dji * aq[:, None] + bq
    g_w = np.column_stack(
        [
            np.bincount(idx, weights=np.concatenate([src_w[:, 0], -bq[:, 0]]), minlength=n),
            np.bincount(idx, weights=np.concatenate([src_w[:, 1], -bq[:, 1]]), minlength=n),
        ]
    )
    return g_xi, g_w


def nltgv_energy(mesh: Mesh2D, xi=None, w=None) -> float:
    """Smoothness energy ``sum_e ||D_e x||_1``."""
    return float(np.abs(apply_D(mesh, xi, w)).sum())
