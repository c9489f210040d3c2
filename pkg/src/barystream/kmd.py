"""Kernel Mirror Descent for streaming barycenter estimation.

The dual function is searched in the n-fold product of an RKHS; it is
represented by per-sample coefficient vectors beta^(k), so evaluating it
on a fresh measure costs O(k n) at step k. A linear kernel admits an
equivalent O(n^2)-memory representation as a single matrix applied to the
sample, implemented separately and kept iterate-for-iterate consistent
with the general path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from barystream.dual_core import CostMatrix, SolverError
from barystream.finite_md import NumericalAbort
from barystream.measures import MeasureStream, sample_measure


@dataclass(frozen=True)
class Kernel:
    """Kernel family descriptor with its constants.

    kappa_sq = sup_x k(x, x); r_sq is the squared radius of the dual
    function ball. r_sq must be configured for rbf/diffusion (it has no
    closed form); for the linear family it defaults to 2 n^2 |C|_inf^2
    once the cost matrix is known.
    """

    family: str                 # "rbf" | "diffusion" | "linear"
    param: float = 0.0
    r_sq: float | None = None
    kappa_sq: float = 1.0

    def __post_init__(self):
        if self.family not in ("rbf", "diffusion", "linear"):
            raise SolverError(f"unknown kernel family {self.family!r}")
        if self.family in ("rbf", "diffusion") and self.param <= 0:
            raise SolverError(f"{self.family} kernel parameter must be > 0")

    @classmethod
    def rbf(cls, s: float, r_sq: float) -> "Kernel":
        return cls(family="rbf", param=s, r_sq=r_sq)

    @classmethod
    def diffusion(cls, t: float, r_sq: float) -> "Kernel":
        return cls(family="diffusion", param=t, r_sq=r_sq)

    @classmethod
    def linear(cls, r_sq: float | None = None) -> "Kernel":
        return cls(family="linear", r_sq=r_sq)

    def resolved_r_sq(self, C: CostMatrix) -> float:
        if self.r_sq is not None:
            return self.r_sq
        if self.family == "linear":
            return 2.0 * C.n ** 2 * C.inf_norm ** 2
        raise SolverError(f"r_sq must be configured for the {self.family} kernel")


def kernel_eval(kernel: Kernel, x, y) -> float:
    """k(x, y) for two simplex points."""
    return float(kernel_vec(kernel, np.asarray(x, float),
                            np.asarray(y, float)[None, :])[0])


def kernel_vec(kernel: Kernel, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """k(x, ys[i]) for a stack of points, vectorized over i."""
    if kernel.family == "rbf":
        d = ys - x[None, :]
        return np.exp(-kernel.param * np.einsum("ij,ij->i", d, d))
    if kernel.family == "diffusion":
        inner = np.sqrt(ys) @ np.sqrt(x)
        # floating-point overshoot past 1 would leave arccos undefined
        ang = np.arccos(np.clip(inner, 0.0, 1.0))
        return np.exp(-ang * ang / kernel.param)
    return ys @ x  # linear


@dataclass(frozen=True)
class KmdConfig:
    """Fixed per-run quantities: kernel, prox weights and stepsize rule."""

    kernel: Kernel
    alpha: float                # primal prox weight, 2 log n
    beta_scale: float           # dual prox weight, 2 n R^2
    clip_bound: float
    mode: str                   # "constant" | "dynamic"
    eta: float                  # constant-mode stepsize (already scaled)
    L: float                    # gradient-scale constant for dynamic mode
    eta_scale: float = 1.0

    def stepsize(self, k: int) -> float:
        if self.mode == "constant":
            return self.eta
        return self.eta_scale * math.sqrt(3.0) / (self.L * math.sqrt(k))

    @classmethod
    def for_run(cls, kernel: Kernel, C: CostMatrix, N: int,
                mode: str = "constant", clip: str = "cost",
                eta_scale: float = 1.0) -> "KmdConfig":
        n = C.n
        r_sq = kernel.resolved_r_sq(C)
        L = math.sqrt(8.0 * math.log(n) * C.inf_norm ** 2
                      + 8.0 * n * n * kernel.kappa_sq * r_sq)
        eta = eta_scale * 2.0 / (L * math.sqrt(5.0 * N))
        clip_bound = 1.0 if clip == "unit" else C.inf_norm
        return cls(kernel=kernel, alpha=2.0 * math.log(n),
                   beta_scale=2.0 * n * r_sq, clip_bound=clip_bound,
                   mode=mode, eta=eta, L=L, eta_scale=eta_scale)


class _History:
    """Growing storage for beta coefficients and their samples."""

    def __init__(self, n: int, cap: int | None = None):
        self.n = n
        self.size = 0
        cap = cap or 16
        self._betas = np.zeros((cap, n))
        self._samples = np.zeros((cap, n))
        self.max_size = None

    def append(self, beta: np.ndarray, sample: np.ndarray) -> None:
        if self.max_size is not None and self.size >= self.max_size:
            raise SolverError("KMD history cap exceeded; no silent forgetting")
        if self.size == self._betas.shape[0]:
            self._betas = np.concatenate([self._betas, np.zeros_like(self._betas)])
            self._samples = np.concatenate(
                [self._samples, np.zeros_like(self._samples)])
        self._betas[self.size] = beta
        self._samples[self.size] = sample
        self.size += 1

    @property
    def betas(self) -> np.ndarray:
        return self._betas[:self.size]

    @property
    def samples(self) -> np.ndarray:
        return self._samples[:self.size]


@dataclass
class KmdState:
    """Iterate of Kernel Mirror Descent: primal point plus dual history."""

    log_r: np.ndarray
    history: _History
    avg_num: np.ndarray          # stepsize-weighted (or plain) sum of iterates
    avg_den: float
    k: int

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r - logsumexp(self.log_r))

    @property
    def r_avg(self) -> np.ndarray:
        if self.avg_den == 0:
            return self.r
        return self.avg_num / self.avg_den

    @classmethod
    def cold_start(cls, n: int, history_cap: int | None = None) -> "KmdState":
        hist = _History(n)
        hist.max_size = history_cap
        return cls(log_r=np.zeros(n), history=hist,
                   avg_num=np.zeros(n), avg_den=0.0, k=0)


def f_eval(state: KmdState, kernel: Kernel, c: np.ndarray,
           clip_bound: float) -> np.ndarray:
    """Dual function value at c: clipped sum of beta^(i) k(c, c^(i))."""
    if state.history.size == 0:
        return np.zeros(state.log_r.size)
    kvec = kernel_vec(kernel, np.asarray(c, float), state.history.samples)
    raw = kvec @ state.history.betas
    return np.clip(raw, -clip_bound, clip_bound)


def _saddle_update(log_r: np.ndarray, f: np.ndarray, C: CostMatrix,
                   eta_k: float, config: KmdConfig):
    """Shared per-step algebra: argmax indices, primal gradient, updates.

    Returns (new_log_r, r_pre, beta_k_over_kernel) where the beta vector is
    eta_k * beta_scale * (-c + sum_i r_i e_{J_i}) without the -c part; the
    caller folds in its sample.
    """
    scores = -C.entries - f[None, :]
    J = np.argmax(scores, axis=1)
    g = -np.max(scores, axis=1)
    r_pre = np.exp(log_r - logsumexp(log_r))
    pattern = np.bincount(J, weights=r_pre, minlength=C.n)
    new_log_r = log_r - eta_k * config.alpha * g
    new_log_r -= new_log_r.max()
    if not np.all(np.isfinite(new_log_r)):
        raise NumericalAbort("non-finite primal iterate in KMD step")
    return new_log_r, r_pre, pattern


def kmd_step(state: KmdState, config: KmdConfig, c_sample: np.ndarray,
             C: CostMatrix) -> KmdState:
    """One KMD iteration: evaluate the dual on the sample, step both sides."""
    k = state.k + 1
    eta_k = config.stepsize(k)
    c = np.asarray(c_sample, dtype=float)
    f = f_eval(state, config.kernel, c, config.clip_bound)
    new_log_r, _r_pre, pattern = _saddle_update(state.log_r, f, C, eta_k, config)
    beta_k = eta_k * config.beta_scale * (pattern - c)
    state.history.append(beta_k, c)
    r_new = np.exp(new_log_r - logsumexp(new_log_r))
    weight = eta_k if config.mode == "dynamic" else 1.0
    return replace(state, log_r=new_log_r,
                   avg_num=state.avg_num + weight * r_new,
                   avg_den=state.avg_den + weight, k=k)


def kmd_run(stream: MeasureStream, kernel: Kernel, C: CostMatrix, N: int,
            state: KmdState | None = None, config: KmdConfig | None = None,
            clip: str = "cost", eta_scale: float = 1.0,
            callback=None) -> tuple[np.ndarray, KmdState]:
    """Run N total constant-stepsize KMD iterations; returns (r_avg, state)."""
    if N < 1:
        raise SolverError("kmd_run: N must be >= 1")
    if config is None:
        config = KmdConfig.for_run(kernel, C, N, mode="constant", clip=clip,
                                   eta_scale=eta_scale)
    if state is None:
        state = KmdState.cold_start(C.n)
    while state.k < N:
        c = sample_measure(stream).weights
        state = kmd_step(state, config, c, C)
        if callback is not None:
            callback(state)
    return state.r_avg, state


def kmd_run_online(stream: MeasureStream, kernel: Kernel, C: CostMatrix, N: int,
                   state: KmdState | None = None,
                   config: KmdConfig | None = None, clip: str = "cost",
                   eta_scale: float = 1.0,
                   callback=None) -> tuple[np.ndarray, KmdState]:
    """Infinite-horizon variant: eta_k ~ 1/sqrt(k), stepsize-weighted average."""
    if N < 1:
        raise SolverError("kmd_run_online: N must be >= 1")
    if config is None:
        config = KmdConfig.for_run(kernel, C, N, mode="dynamic", clip=clip,
                                   eta_scale=eta_scale)
    if state is None:
        state = KmdState.cold_start(C.n)
    while state.k < N:
        c = sample_measure(stream).weights
        state = kmd_step(state, config, c, C)
        if callback is not None:
            callback(state)
    return state.r_avg, state


@dataclass
class LinearKmdState:
    """Linear-kernel iterate: the dual function is the matrix map c -> theta c."""

    log_r: np.ndarray
    theta: np.ndarray
    avg_num: np.ndarray
    avg_den: float
    k: int

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r - logsumexp(self.log_r))

    @property
    def r_avg(self) -> np.ndarray:
        if self.avg_den == 0:
            return self.r
        return self.avg_num / self.avg_den

    @classmethod
    def cold_start(cls, n: int) -> "LinearKmdState":
        return cls(log_r=np.zeros(n), theta=np.zeros((n, n)),
                   avg_num=np.zeros(n), avg_den=0.0, k=0)


def linear_kmd_step(state: LinearKmdState, config: KmdConfig,
                    c_sample: np.ndarray, C: CostMatrix) -> LinearKmdState:
    """kmd_step specialized to the linear kernel: O(n^2) time and memory.

    Appending beta^(k) with kernel <., c^(k)> is exactly the rank-one update
    theta += beta^(k) c^(k)^T, so the induced dual function matches the
    history-based representation.
    """
    k = state.k + 1
    eta_k = config.stepsize(k)
    c = np.asarray(c_sample, dtype=float)
    f = np.clip(state.theta @ c, -config.clip_bound, config.clip_bound)
    new_log_r, _r_pre, pattern = _saddle_update(state.log_r, f, C, eta_k, config)
    beta_k = eta_k * config.beta_scale * (pattern - c)
    theta = state.theta + np.outer(beta_k, c)
    r_new = np.exp(new_log_r - logsumexp(new_log_r))
    weight = eta_k if config.mode == "dynamic" else 1.0
    return replace(state, log_r=new_log_r, theta=theta,
                   avg_num=state.avg_num + weight * r_new,
                   avg_den=state.avg_den + weight, k=k)


def linear_kmd_run(stream: MeasureStream, C: CostMatrix, N: int,
                   state: LinearKmdState | None = None,
                   config: KmdConfig | None = None, clip: str = "cost",
                   eta_scale: float = 1.0, r_sq: float | None = None,
                   callback=None) -> tuple[np.ndarray, LinearKmdState]:
    """Constant-stepsize run of the matrix-form linear-kernel method."""
    if N < 1:
        raise SolverError("linear_kmd_run: N must be >= 1")
    if config is None:
        config = KmdConfig.for_run(Kernel.linear(r_sq), C, N, mode="constant",
                                   clip=clip, eta_scale=eta_scale)
    if state is None:
        state = LinearKmdState.cold_start(C.n)
    while state.k < N:
        c = sample_measure(stream).weights
        state = linear_kmd_step(state, config, c, C)
        if callback is not None:
            callback(state)
    return state.r_avg, state
