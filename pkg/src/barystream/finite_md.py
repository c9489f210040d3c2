"""Stochastic mirror descent on the finite-support saddle-point problem.

The dual function over a finite family {c_1..c_m} is an m x n matrix M
boxed at |M|_inf <= |C|_inf. One iteration samples a measure index t, a
uniform coordinate s and a coordinate q from the law r, applies the sparse
unbiased oracles, an entropic step on r and a boxed Euclidean step on row
M_(t), then updates the running averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from barystream.dual_core import (
    CostMatrix,
    EXACT_SOLVER_CAP,
    SolverError,
    boxed_dual_lp,
    lambda_star,
    lambda_star_argmax,
)
from barystream.measures import DiscreteMeasure


class NumericalAbort(RuntimeError):
    """A non-finite intermediate value appeared during a step."""


@dataclass(frozen=True)
class FiniteProblem:
    """A finite law over m measures plus the shared cost matrix."""

    measures: np.ndarray          # m x n, rows on the simplex
    weights: np.ndarray           # law of the measure index, on the m-simplex
    C: CostMatrix

    def __post_init__(self):
        meas = np.asarray(self.measures, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "measures", meas)
        object.__setattr__(self, "weights", w)
        if meas.ndim != 2 or meas.shape[1] != self.C.n:
            raise SolverError("FiniteProblem: measures must be m x n matching C")
        if w.shape != (meas.shape[0],) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise SolverError("FiniteProblem: weights must lie on the m-simplex")

    @classmethod
    def from_measures(cls, measures: list[DiscreteMeasure], C: CostMatrix,
                      weights=None) -> "FiniteProblem":
        m = len(measures)
        if weights is None:
            weights = np.full(m, 1.0 / m)
        return cls(np.stack([x.weights for x in measures]), np.asarray(weights), C)

    @property
    def m(self) -> int:
        return self.measures.shape[0]

    @property
    def n(self) -> int:
        return self.C.n

    @property
    def box_bound(self) -> float:
        return self.C.inf_norm


@dataclass
class FiniteSaddleState:
    """Iterate of the finite-support saddle-point mirror descent.

    r is kept in log-domain (exponential-weights updates only shift logs),
    read back through a softmax; M lives directly in the l_inf box. Running
    averages of both r and M are maintained for gap evaluation.
    """

    log_r: np.ndarray
    M: np.ndarray
    r_avg: np.ndarray
    M_avg: np.ndarray
    k: int
    eta: float
    alpha: float
    beta: float

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r - logsumexp(self.log_r))

    @classmethod
    def cold_start(cls, problem: FiniteProblem, N: int) -> "FiniteSaddleState":
        n, m = problem.n, problem.m
        c_inf = problem.C.inf_norm
        alpha = 2.0 * math.log(n)
        beta = 4.0 * m * n * c_inf
        eta = 2.0 / (c_inf * math.sqrt(8 * n * n * math.log(n) + 16 * m * n)
                     * math.sqrt(5.0 * N))
        return cls(log_r=np.zeros(n), M=np.zeros((m, n)),
                   r_avg=np.full(n, 1.0 / n), M_avg=np.zeros((m, n)),
                   k=0, eta=eta, alpha=alpha, beta=beta)


def oracle_g(M: np.ndarray, t: int, s: int, C: CostMatrix) -> tuple[int, float]:
    """Sparse primal oracle: coordinate s carries -n * max_j(-C_sj - M_tj)."""
    n = C.n
    return s, float(-n * np.max(-C.entries[s] - M[t]))


def oracle_h(M: np.ndarray, t: int, q: int, c_t: np.ndarray,
             C: CostMatrix) -> np.ndarray:
    """Dual oracle for row t: c_t minus the basis vector at the argmax index."""
    j = lambda_star_argmax(M[t], C, q)
    h = c_t.copy()
    h[j] -= 1.0
    return h


def md_step(state: FiniteSaddleState, problem: FiniteProblem,
            rng: np.random.Generator) -> FiniteSaddleState:
    """One sampled saddle-point mirror-descent iteration (in place on copies)."""
    n, m = problem.n, problem.m
    r = state.r
    t = int(rng.choice(m, p=problem.weights))
    s = int(rng.integers(n))
    q = int(rng.choice(n, p=r))

    _, g_s = oracle_g(state.M, t, s, problem.C)
    h = oracle_h(state.M, t, q, problem.measures[t], problem.C)

    log_r = state.log_r.copy()
    log_r[s] -= state.alpha * state.eta * g_s
    log_r -= log_r.max()  # keep the representation bounded; softmax unchanged
    M = state.M.copy()
    M[t] -= state.beta * state.eta * h
    np.clip(M, -problem.box_bound, problem.box_bound, out=M)
    if not (np.all(np.isfinite(log_r)) and np.all(np.isfinite(M))):
        raise NumericalAbort(f"non-finite iterate at k={state.k + 1}: "
                             f"log_r={log_r!r}")
    k = state.k + 1
    r_new = np.exp(log_r - logsumexp(log_r))
    r_avg = r_new / k + (k - 1) / k * state.r_avg
    M_avg = M / k + (k - 1) / k * state.M_avg
    return replace(state, log_r=log_r, M=M, r_avg=r_avg, M_avg=M_avg, k=k)


def run_finite(problem: FiniteProblem, N: int, seed: int,
               state: FiniteSaddleState | None = None,
               rng: np.random.Generator | None = None,
               gap_every: int = 0) -> tuple[np.ndarray, np.ndarray, list]:
    """Run N total iterations from a cold start (or resume a given state).

    Returns (r_avg, M_avg, trace) where trace holds (k, gap) pairs when
    gap_every > 0 and the problem is small enough for the exact evaluator.
    """
    if N < 1:
        raise SolverError("run_finite: N must be >= 1")
    if state is None:
        state = FiniteSaddleState.cold_start(problem, N)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    trace = []
    while state.k < N:
        state = md_step(state, problem, rng)
        if gap_every and state.k % gap_every == 0:
            trace.append((state.k, duality_gap_finite(state.r_avg, state.M_avg,
                                                      problem)))
    return state.r_avg, state.M_avg, trace


def duality_gap_finite(r: np.ndarray, M: np.ndarray,
                       problem: FiniteProblem) -> float:
    """Exact duality gap of (r, M) for the finite saddle objective.

    F(r, M) = sum_t w_t [ -<lambda*(M_t), r> - <M_t, c_t> ]. The max over
    boxed M' decomposes per row into an LP; the min over the simplex is the
    smallest coordinate of the averaged -lambda* vector.
    """
    n, m = problem.n, problem.m
    if n > EXACT_SOLVER_CAP or m > EXACT_SOLVER_CAP:
        raise SolverError("duality_gap_finite: problem exceeds exact-solver cap")
    w = problem.weights
    box = problem.box_bound
    max_part = 0.0
    for t in range(m):
        if w[t] == 0:
            continue
        value, _, _ = boxed_dual_lp(r, problem.measures[t], problem.C, box)
        max_part += w[t] * value
    neg_lam = np.zeros(n)
    cross = 0.0
    for t in range(m):
        neg_lam += w[t] * (-lambda_star(M[t], problem.C))
        cross += w[t] * float(M[t] @ problem.measures[t])
    min_part = float(neg_lam.min()) - cross
    return max_part - min_part
