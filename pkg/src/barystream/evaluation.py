"""Ground truth and quality metrics for the Gaussian streaming experiment.

For a stream of Gaussian measures with mu ~ Normal(mu0, sigma0_sq) and
sigma ~ Exponential(rate), the population barycenter in the 1-D quadratic
setting is the Gaussian with mean E[mu] and standard deviation E[sigma],
discretized with the same rule as the data. Estimates are scored by their
2-Wasserstein distance to this truth; an exact finite-support duality-gap
surrogate on a holdout set scores all methods uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from barystream.dual_core import (
    CostMatrix,
    EXACT_SOLVER_CAP,
    SolverError,
    boxed_dual_lp,
    lambda_star,
    wasserstein_1d,
)
from barystream.measures import (
    DiscreteMeasure,
    GaussianParamLaw,
    Grid1D,
    discretize_gaussian,
    normalize,
)


def true_gaussian_barycenter(law: GaussianParamLaw, grid: Grid1D) -> DiscreteMeasure:
    """Discretized Gaussian with mean E[mu] and sd E[sigma] = 1/rate."""
    return discretize_gaussian(law.mu0, 1.0 / law.rate, grid)


def score(estimate: DiscreteMeasure, truth: DiscreteMeasure,
          grid: Grid1D) -> float:
    """2-Wasserstein distance of an estimate to the true barycenter."""
    return wasserstein_1d(estimate, truth, grid, p=2.0)


def uniform_baseline_score(truth: DiscreteMeasure, grid: Grid1D) -> float:
    """Score of the uninformative uniform estimate; regression baseline."""
    uniform = normalize(np.ones(grid.n), grid)
    return score(uniform, truth, grid)


def gap_surrogate(r, holdout, C: CostMatrix) -> float:
    """Primal suboptimality of r on the holdout empirical barycenter problem.

    For each holdout measure the boxed dual row maximizer at r is computed
    exactly, so the reported value is max_M F(r, M) - min_r' F(r', M*(r)):
    zero iff r minimizes the empirical objective on the holdout.
    """
    holdout = list(holdout)
    if not holdout:
        raise SolverError("gap_surrogate: holdout must be non-empty")
    n = C.n
    if n > EXACT_SOLVER_CAP:
        raise SolverError("gap_surrogate: n exceeds exact-solver cap")
    r = np.asarray(r, dtype=float)
    w = 1.0 / len(holdout)
    max_part = 0.0
    neg_lam = np.zeros(n)
    cross = 0.0
    for m in holdout:
        c = m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, float)
        value, _, mu = boxed_dual_lp(r, c, C, C.inf_norm)
        max_part += w * value
        neg_lam += w * (-lambda_star(mu, C))
        cross += w * float(mu @ c)
    min_part = float(neg_lam.min()) - cross
    return max_part - min_part


@dataclass
class ExperimentReport:
    """Per-checkpoint quality rows for one (method, seed) run."""

    method: str
    seed: int
    config_hash: str = ""
    rows: list[dict] = field(default_factory=list)

    def add(self, samples_processed: int, w2_to_truth: float,
            gap_surrogate_value: float, wall_ns: int) -> None:
        if self.rows and samples_processed < self.rows[-1]["samples_processed"]:
            raise SolverError("report rows must be sorted by samples_processed")
        for v in (w2_to_truth, gap_surrogate_value):
            if v is not None and not np.isfinite(v):
                raise SolverError("report metric is not finite")
        self.rows.append({
            "samples_processed": samples_processed,
            "w2_to_truth": w2_to_truth,
            "gap_surrogate": gap_surrogate_value,
            "wall_ns": wall_ns,
        })

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("samples_processed,w2_to_truth,gap_surrogate,wall_ns,"
                     "method,seed,config_hash\n")
            for row in self.rows:
                w2 = row["w2_to_truth"]
                gap = row["gap_surrogate"]
                fh.write(f"{row['samples_processed']},"
                         f"{'' if w2 is None else repr(w2)},"
                         f"{'' if gap is None else repr(gap)},{row['wall_ns']},"
                         f"{self.method},{self.seed},{self.config_hash}\n")
