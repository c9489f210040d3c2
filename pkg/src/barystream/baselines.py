"""Comparison methods: SGD with entropic (Sinkhorn) gradients, and mirror
descent with exact dual subgradients from the transportation LP.

Both return descent directions for r -> distance(r, c); dual potentials are
only defined up to an additive constant, so gradients are mean-centered
(the simplex constraint absorbs constants).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from barystream.dual_core import CostMatrix, SolverError, exact_ot, sinkhorn
from barystream.measures import (
    DiscreteMeasure,
    MeasureStream,
    normalize_clamped,
    sample_measure,
)


@dataclass(frozen=True)
class BaselineConfig:
    """Method and stepsize schedule for a baseline run."""

    method: str                     # "sinkhorn_sgd" | "lp_sgd"
    gamma: float = 1e-2             # entropic regularization (sinkhorn_sgd)
    inner_iters: int = 200
    inner_tol: float = 1e-9
    schedule: str = "inverse_sqrt"  # "constant" | "inverse_sqrt"
    stepsize: float = 1.0
    stepper: str = "mirror"         # "mirror" | "euclidean"

    def __post_init__(self):
        if self.method not in ("sinkhorn_sgd", "lp_sgd"):
            raise SolverError(f"unknown baseline method {self.method!r}")
        if self.method == "sinkhorn_sgd" and self.gamma <= 0:
            raise SolverError("sinkhorn_sgd requires gamma > 0")

    def eta(self, k: int) -> float:
        if self.schedule == "constant":
            return self.stepsize
        return self.stepsize / math.sqrt(k)


def sinkhorn_gradient(r: DiscreteMeasure, c: DiscreteMeasure, C: CostMatrix,
                      gamma: float, inner_iters: int = 200,
                      inner_tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Gradient in r of the entropy-regularized transport cost.

    The optimal row potential of the regularized dual is gamma * u up to an
    additive constant; mean-centering fixes the gauge. Returns the centered
    gradient and an instability flag (NaN stop inside the scaling loop).
    """
    sol = sinkhorn(r, c, C, gamma, max_iter=inner_iters, tol=inner_tol)
    grad = gamma * sol.u
    return grad - grad.mean(), sol.unstable


def lp_subgradient(r: DiscreteMeasure, c: DiscreteMeasure,
                   C: CostMatrix) -> np.ndarray:
    """Exact subgradient of r -> L_C(r, c) from the LP dual potentials.

    The dual value is -<lambda, r> - <mu, c>, so -lambda is a subgradient
    in r; it is mean-centered before being returned.
    """
    sol = exact_ot(r, c, C)
    grad = -sol.dual_lambda
    return grad - grad.mean()


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.max(np.where(u - css / idx > 0, idx, 0))
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


@dataclass
class BaselineState:
    """Mutable iterate for a baseline stochastic-approximation run."""

    log_r: np.ndarray
    r_euclid: np.ndarray
    avg_num: np.ndarray
    k: int

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r - logsumexp(self.log_r))

    @property
    def r_avg(self) -> np.ndarray:
        if self.k == 0:
            return self.r
        return self.avg_num / self.k

    @classmethod
    def cold_start(cls, n: int) -> "BaselineState":
        return cls(log_r=np.zeros(n), r_euclid=np.full(n, 1.0 / n),
                   avg_num=np.zeros(n), k=0)


def baseline_step(state: BaselineState, config: BaselineConfig,
                  c: DiscreteMeasure, C: CostMatrix) -> BaselineState:
    """Sampled gradient step on r for one incoming measure."""
    k = state.k + 1
    eta = config.eta(k)
    if config.stepper == "euclidean":
        r_cur = state.r_euclid
    else:
        r_cur = state.r
    r_meas = normalize_clamped(r_cur)
    if config.method == "sinkhorn_sgd":
        grad, _unstable = sinkhorn_gradient(r_meas, c, C, config.gamma,
                                            config.inner_iters, config.inner_tol)
    else:
        grad = lp_subgradient(r_meas, c, C)
    if config.stepper == "euclidean":
        log_r = state.log_r
        r_euclid = _project_simplex(state.r_euclid - eta * grad)
        r_new = r_euclid
    else:
        log_r = state.log_r - eta * grad
        log_r = log_r - log_r.max()
        r_euclid = state.r_euclid
        r_new = np.exp(log_r - logsumexp(log_r))
    return BaselineState(log_r=log_r, r_euclid=r_euclid,
                         avg_num=state.avg_num + r_new, k=k)


def run_baseline(stream: MeasureStream, C: CostMatrix, config: BaselineConfig,
                 N: int, state: BaselineState | None = None,
                 callback=None) -> tuple[np.ndarray, BaselineState]:
    """Stochastic-approximation loop over N stream samples."""
    if N < 1:
        raise SolverError("run_baseline: N must be >= 1")
    if state is None:
        state = BaselineState.cold_start(C.n)
    while state.k < N:
        c = sample_measure(stream)
        state = baseline_step(state, config, c, C)
        if callback is not None:
            callback(state)
    return state.r_avg, state
