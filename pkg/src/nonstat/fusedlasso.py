"""Graph fused lasso over a cell adjacency graph.

Minimizes ``sum_i (xi_i - beta_i)^2 + rho * sum_{(j,k) in E} |beta_j - beta_k|``
by ADMM on the splitting ``z = D beta``, where ``D`` is the signed edge
incidence matrix.  The penalty parameter adapts by residual balancing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, InvalidArgumentError

log = logging.getLogger(__name__)

MAX_ITER = 10_000
DEFAULT_TOL = 1e-8


@dataclass
class FusionProblem:
    values: np.ndarray
    edges: np.ndarray
    rho: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.edges = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        n = len(self.values)
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= n):
            raise InvalidArgumentError("edge references an invalid node")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise InvalidArgumentError("self-loop in edge list")
        if not self.rho >= 0:
            raise InvalidArgumentError("rho must be nonnegative")

    def objective(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        e = self.edges
        return float(np.sum((self.values - beta) ** 2) + self.rho * np.sum(np.abs(beta[e[:, 0]] - beta[e[:, 1]])))


@dataclass
class FusionSolution:
    beta: np.ndarray
    labels: np.ndarray
    objective: float
    rho: float
    dual: np.ndarray  # edge dual, |v_e| <= 1
    iterations: int
    primal_residual: float
    dual_residual: float
    n_components: int = field(init=False)

    def __post_init__(self):
        self.n_components = int(self.labels.max()) + 1 if len(self.labels) else 0


def incidence(edges: np.ndarray, n: int) -> sparse.csr_matrix:
    m = len(edges)
    rows = np.repeat(np.arange(m), 2)
    cols = edges.reshape(-1)
    vals = np.tile([1.0, -1.0], m)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))


def fused_components(beta, edges, fuse_tol: float) -> np.ndarray:
    """Connected components after contracting edges with ``|beta_j - beta_k| <= fuse_tol``."""
    n = len(beta)
    e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    keep = np.abs(beta[e[:, 0]] - beta[e[:, 1]]) <= fuse_tol
    e = e[keep]
    g = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return labels


def default_fuse_tol(values) -> float:
    values = np.asarray(values, dtype=float)
    spread = float(values.max() - values.min()) if len(values) else 0.0
    return 1e-6 * spread if spread > 0 else 1e-12


def solve_fused_lasso(
    p: FusionProblem,
    tol: float = DEFAULT_TOL,
    *,
    max_iter: int = MAX_ITER,
    warm: FusionSolution | None = None,
    fuse_tol: float | None = None,
) -> FusionSolution:
    """Solve one fused lasso problem to residual tolerance ``tol``.

    Raises :class:`ConvergenceError` (with the residuals) if the iteration
    cap is reached first.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    xi, edges, rho = p.values, p.edges, float(p.rho)
    n, m = len(xi), len(edges)
    ftol = default_fuse_tol(xi) if fuse_tol is None else fuse_tol
    if rho == 0 or m == 0:
        beta = xi.copy()
        return FusionSolution(beta, fused_components(beta, edges, ftol), p.objective(beta), rho, np.zeros(m), 0, 0.0, 0.0)

    d = incidence(edges, n)
    dt = d.T.tocsr()
    lap = (dt @ d).tocsc()
    eye = sparse.identity(n, format="csc")

    mu = 2.0
    if warm is not None and len(warm.beta) == n:
        beta = warm.beta.copy()
        z = d @ beta
        # keep the edge dual in units of rho across a change of rho
        u = rho * np.clip(warm.dual, -1, 1) / mu
    else:
        beta = xi.copy()
        z = d @ beta
        u = np.zeros(m)
    solve = splu(2.0 * eye + mu * lap).solve
    r_pri = r_dual = np.inf
    for it in range(1, max_iter + 1):
        beta = solve(2.0 * xi + mu * (dt @ (z - u)))
        db = d @ beta
        v = db + u
        thr = rho / mu
        z_old = z
        z = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        u = u + db - z
        r_pri = float(np.max(np.abs(db - z)))
        r_dual = float(mu * np.max(np.abs(dt @ (z - z_old))))
        if r_pri <= tol and r_dual <= tol:
            break
        if it % 10 == 0 and it <= max_iter // 2:
            if r_pri > 10.0 * r_dual:
                mu *= 2.0
                u /= 2.0
                solve = splu(2.0 * eye + mu * lap).solve
            elif r_dual > 10.0 * r_pri:
                mu /= 2.0
                u *= 2.0
                solve = splu(2.0 * eye + mu * lap).solve
    else:
        raise ConvergenceError(
            f"fused lasso did not converge in {max_iter} iterations (rho={rho:g})",
            {"primal_residual": r_pri, "dual_residual": r_dual, "beta": beta, "rho": rho},
        )
    dual = np.clip(mu * u / rho, -1.0, 1.0)
    labels = fused_components(beta, edges, ftol)
    return FusionSolution(beta, labels, p.objective(beta), rho, dual, it, r_pri, r_dual)


def kkt_residual(p: FusionProblem, sol: FusionSolution) -> float:
    """Sup-norm of ``2 (beta - xi) + rho D' v`` for the recovered dual ``v``."""
    if len(p.edges) == 0 or p.rho == 0:
        return float(np.max(np.abs(2.0 * (sol.beta - p.values)))) if len(p.values) else 0.0
    d = incidence(p.edges, len(p.values))
    return float(np.max(np.abs(2.0 * (sol.beta - p.values) + p.rho * (d.T @ sol.dual))))


def _n_graph_components(n: int, edges: np.ndarray) -> int:
    g = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)[0]


def full_fusion_rho(values, edges, tol: float = DEFAULT_TOL, rel: float = 1e-3) -> float:
    """Smallest penalty (to relative precision ``rel``) that fuses every graph component."""
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    target = _n_graph_components(len(values), edges)
    hi = float(np.sum(np.abs(values - values.mean())))
    if hi == 0 or len(edges) == 0:
        return 0.0
    lo = 0.0
    warm = None
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        sol = solve_fused_lasso(FusionProblem(values, edges, mid), tol, warm=warm)
        warm = sol
        if sol.n_components <= target:
            hi = mid
        else:
            lo = mid
    return hi


def default_rho_grid(values, edges, count: int = 12, tol: float = DEFAULT_TOL) -> np.ndarray:
    rho_max = full_fusion_rho(values, edges, tol)
    if rho_max == 0:
        return np.zeros(1)
    return np.geomspace(1e-3 * rho_max, rho_max, count)


def lambda_path(values, edges, grid=None, tol: float = DEFAULT_TOL) -> list[FusionSolution]:
    """Solutions along an ascending grid of penalties, warm-started in turn."""
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    grid = default_rho_grid(values, edges, tol=tol) if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise InvalidArgumentError("penalty grid must be sorted ascending")
    out = []
    warm = None
    for rho in grid:
        try:
            sol = solve_fused_lasso(FusionProblem(values, edges, float(rho)), tol, warm=warm)
        except ConvergenceError as exc:
            raise ConvergenceError(f"at rho={rho:g}: {exc}", exc.diagnostics) from None
        log.debug("rho=%g components=%d iterations=%d", rho, sol.n_components, sol.iterations)
        out.append(sol)
        warm = sol
    return out
