"""Cost matrices, Kantorovich duality, and exact small-scale OT solvers.

The transport cost is L_C(r, c) = min <C, X> over plans X with marginals
(r, c). Its dual in potentials (lambda, mu) with -C_ij - lambda_i - mu_j <= 0
is max -<lambda, r> - <mu, c>; eliminating lambda gives the row-wise map
lambda*_i(mu) = max_j(-C_ij - mu_j). Exact solves go through an LP and are
capped at small n: they serve evaluation and certification, not speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from barystream.measures import DiscreteMeasure, Grid1D

EXACT_SOLVER_CAP = 64
FEAS_TOL = 1e-9
OPT_TOL = 1e-8


class SolverError(RuntimeError):
    """An exact LP solve failed or was rejected (cap, infeasible marginals)."""


@dataclass(frozen=True)
class CostMatrix:
    """Non-negative n x n cost matrix with cached sup-norm."""

    entries: np.ndarray
    inf_norm: float

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise SolverError("cost matrix must be square")
        if np.any(e < 0):
            raise SolverError("cost matrix must be non-negative")

    @classmethod
    def from_entries(cls, entries) -> "CostMatrix":
        e = np.asarray(entries, dtype=float)
        return cls(e, float(np.abs(e).max()))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def scaled(self, factor: float) -> "CostMatrix":
        return CostMatrix.from_entries(self.entries * factor)


def squared_distance_cost(grid: Grid1D, p: float = 2.0) -> CostMatrix:
    """C_ij = |x_i - x_j|^p for grid locations x."""
    if p < 1:
        raise SolverError("cost exponent p must be >= 1")
    x = grid.points
    return CostMatrix.from_entries(np.abs(x[:, None] - x[None, :]) ** p)


def lambda_star(mu, C: CostMatrix) -> np.ndarray:
    """Row-wise partial maximization lambda*_i = max_j(-C_ij - mu_j)."""
    mu = np.asarray(mu, dtype=float)
    return np.max(-C.entries - mu[None, :], axis=1)


def lambda_star_argmax(mu, C: CostMatrix, row: int) -> int:
    """Smallest index attaining max_j(-C_{row,j} - mu_j)."""
    return int(np.argmax(-C.entries[row] - np.asarray(mu, dtype=float)))


def lambda_star_argmax_all(mu, C: CostMatrix) -> np.ndarray:
    """lambda_star_argmax for every row at once (first index on ties)."""
    return np.argmax(-C.entries - np.asarray(mu, dtype=float)[None, :], axis=1)


@dataclass(frozen=True)
class OtSolution:
    """Primal-dual certificate for an exact OT solve."""

    value: float
    plan: np.ndarray
    dual_lambda: np.ndarray
    dual_mu: np.ndarray
    gap: float


def exact_ot(r: DiscreteMeasure, c: DiscreteMeasure, C: CostMatrix,
             cap: int = EXACT_SOLVER_CAP) -> OtSolution:
    """Solve the n x n transportation LP with a primal-dual certificate.

    The dual is returned in the sign convention of the potentials above:
    feasibility reads -C_ij - lambda_i - mu_j <= 0 and the dual value is
    -<lambda, r> - <mu, c>.
    """
    n = C.n
    if r.n != n or c.n != n:
        raise SolverError("exact_ot: dimension mismatch")
    if n > cap:
        raise SolverError(
            f"exact_ot: n={n} exceeds the exact-solver cap {cap}; use sinkhorn")
    if abs(r.weights.sum() - c.weights.sum()) > FEAS_TOL:
        raise SolverError("exact_ot: marginal sums differ")

    # row-sum and column-sum equality constraints on the flattened plan
    a_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        a_eq[i, i * n:(i + 1) * n] = 1.0
        a_eq[n + i, i::n] = 1.0
    b_eq = np.concatenate([r.weights, c.weights])
    res = linprog(C.entries.ravel(), A_eq=a_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if not res.success:
        # presolve can misreport infeasibility when marginals carry entries
        # far below its feasibility tolerance; retry without it
        res = linprog(C.entries.ravel(), A_eq=a_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs",
                      options={"presolve": False})
    if not res.success:
        raise SolverError(f"exact_ot: LP failed: {res.message}")
    plan = res.x.reshape(n, n)
    # HiGHS equality marginals y satisfy y_i + y_{n+j} <= C_ij, value = y.b
    lam = -res.eqlin.marginals[:n]
    mu = -res.eqlin.marginals[n:]
    value = float(res.fun)
    dual_value = float(-(lam @ r.weights) - (mu @ c.weights))
    return OtSolution(value=value, plan=plan, dual_lambda=lam, dual_mu=mu,
                      gap=value - dual_value)


def wasserstein_1d(r: DiscreteMeasure, c: DiscreteMeasure, grid: Grid1D,
                   p: float = 2.0) -> float:
    """Exact 1-D p-Wasserstein distance via the quantile coupling.

    Both measures live on the same sorted grid, so the optimal coupling is
    monotone: integrate |F_r^{-1}(q) - F_c^{-1}(q)|^p over quantile levels q.
    """
    if p < 1:
        raise SolverError("wasserstein_1d: p must be >= 1")
    cdf_r = np.cumsum(r.weights)
    cdf_c = np.cumsum(c.weights)
    # all quantile breakpoints of either step CDF
    q = np.union1d(cdf_r, cdf_c)
    q = q[(q > 0) & (q <= 1 + 1e-15)]
    levels = np.concatenate([[0.0], q])
    widths = np.diff(levels)
    # quantile at level just above levels[k]: first index with cdf >= level
    mid = 0.5 * (levels[:-1] + levels[1:])
    # rounding can leave the last cumsum entry a hair below 1
    idx_r = np.minimum(np.searchsorted(cdf_r, mid, side="left"), cdf_r.size - 1)
    idx_c = np.minimum(np.searchsorted(cdf_c, mid, side="left"), cdf_c.size - 1)
    xi = grid.points[idx_r]
    xj = grid.points[idx_c]
    return float(np.sum(widths * np.abs(xi - xj) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class SinkhornSolution:
    """Converged (or last finite) state of the entropic scaling iteration."""

    u: np.ndarray
    v: np.ndarray
    plan: np.ndarray
    reg_value: float
    marginal_residual: float
    dual_values: np.ndarray
    n_iter: int
    unstable: bool


def sinkhorn(r: DiscreteMeasure, c: DiscreteMeasure, C: CostMatrix,
             gamma: float, max_iter: int = 1000, tol: float = 1e-9) -> SinkhornSolution:
    """Entropy-regularized OT by alternating scaling, fully in log domain.

    The plan is diag(e^u) e^{-C/gamma} diag(e^v); the dual objective of the
    regularized problem is tracked per iteration (block-coordinate ascent,
    so it is monotone non-decreasing). If a potential goes non-finite the
    last finite iterate is returned with the `unstable` flag set.
    """
    if gamma <= 0:
        raise SolverError("sinkhorn: gamma must be positive")
    if np.any(r.weights <= 0) or np.any(c.weights <= 0):
        raise SolverError("sinkhorn: marginals must be strictly positive")
    log_r = np.log(r.weights)
    log_c = np.log(c.weights)
    neg_cg = -C.entries / gamma
    u = np.zeros(C.n)
    v = np.zeros(C.n)
    dual_values = []
    unstable = False
    it = 0
    for it in range(1, max_iter + 1):
        u_new = log_r - logsumexp(neg_cg + v[None, :], axis=1)
        v_new = log_c - logsumexp(neg_cg + u_new[:, None], axis=0)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
            unstable = True
            break
        u, v = u_new, v_new
        log_plan = u[:, None] + neg_cg + v[None, :]
        plan = np.exp(log_plan)
        dual_values.append(gamma * (u @ r.weights + v @ c.weights - plan.sum()))
        residual = (np.abs(plan.sum(axis=1) - r.weights).sum()
                    + np.abs(plan.sum(axis=0) - c.weights).sum())
        if residual <= tol:
            break
    plan = np.exp(u[:, None] + neg_cg + v[None, :])
    residual = (np.abs(plan.sum(axis=1) - r.weights).sum()
                + np.abs(plan.sum(axis=0) - c.weights).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(plan > 0, plan * np.log(plan), 0.0)
    reg_value = float((C.entries * plan).sum() + gamma * ent.sum())
    return SinkhornSolution(u=u, v=v, plan=plan, reg_value=reg_value,
                            marginal_residual=float(residual),
                            dual_values=np.asarray(dual_values),
                            n_iter=it, unstable=unstable)


def boxed_dual_lp(r_weights: np.ndarray, c_weights: np.ndarray, C: CostMatrix,
                  box: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Maximize -<lambda, r> - <mu, c> s.t. -C_ij - lambda_i - mu_j <= 0
    and |mu_j| <= box. Returns (value, lambda, mu)."""
    n = C.n
    # variables x = (lambda, mu); minimize <lambda, r> + <mu, c>
    cost = np.concatenate([r_weights, c_weights])
    a_ub = np.zeros((n * n, 2 * n))
    rows = np.repeat(np.arange(n), n)
    cols = np.tile(np.arange(n), n)
    a_ub[np.arange(n * n), rows] = -1.0
    a_ub[np.arange(n * n), n + cols] = -1.0
    b_ub = C.entries.ravel()
    bounds = [(None, None)] * n + [(-box, box)] * n
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise SolverError(f"boxed dual LP failed: {res.message}")
    lam = res.x[:n]
    mu = res.x[n:]
    return float(-res.fun), lam, mu


def certify_dual_bound(r: DiscreteMeasure, c: DiscreteMeasure, C: CostMatrix,
                       tol: float = 1e-7) -> tuple[bool, np.ndarray]:
    """Check that boxing the dual variable at the cost sup-norm is lossless.

    Solves the dual LP with the extra constraint |mu|_inf <= |C|_inf and
    compares its optimum to the unrestricted exact value. The witness mu is
    shifted so that min_i mu_i = 0 (the shift moves into lambda and leaves
    the dual value unchanged).
    """
    if np.any(r.weights <= 0) or np.any(c.weights <= 0):
        raise SolverError("certify_dual_bound: marginals must be strictly positive")
    boxed_value, _lam, mu = boxed_dual_lp(r.weights, c.weights, C, C.inf_norm)
    exact = exact_ot(r, c, C)
    ok = abs(boxed_value - exact.value) <= tol * (1.0 + abs(exact.value))
    return ok, mu - mu.min()
