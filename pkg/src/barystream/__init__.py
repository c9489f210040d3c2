"""Streaming estimation of population Wasserstein barycenters.

Discrete probability measures on a shared support arrive as a stream; the
barycenter is estimated by stochastic mirror descent on a convex-concave
saddle-point formulation, either with a finite-support dual matrix or with
a kernelized dual function (RBF, information-diffusion, or linear kernel).
Exact small-scale OT solvers are included for certification and scoring.
"""

from barystream.measures import (
    DiscreteMeasure,
    GaussianParamLaw,
    Grid1D,
    MeasureStream,
    discretize_gaussian,
    load_image_measure,
    normalize,
    sample_measure,
)
from barystream.dual_core import (
    CostMatrix,
    OtSolution,
    SinkhornSolution,
    certify_dual_bound,
    exact_ot,
    lambda_star,
    lambda_star_argmax,
    sinkhorn,
    squared_distance_cost,
    wasserstein_1d,
)
from barystream.finite_md import (
    FiniteProblem,
    FiniteSaddleState,
    duality_gap_finite,
    md_step,
    run_finite,
)
from barystream.kmd import (
    Kernel,
    KmdState,
    LinearKmdState,
    f_eval,
    kernel_eval,
    kmd_run,
    kmd_run_online,
    kmd_step,
    linear_kmd_run,
    linear_kmd_step,
)
from barystream.baselines import (
    BaselineConfig,
    lp_subgradient,
    run_baseline,
    sinkhorn_gradient,
)
from barystream.evaluation import (
    gap_surrogate,
    score,
    true_gaussian_barycenter,
    uniform_baseline_score,
)

__all__ = [
    "BaselineConfig",
    "CostMatrix",
    "DiscreteMeasure",
    "FiniteProblem",
    "FiniteSaddleState",
    "GaussianParamLaw",
    "Grid1D",
    "Kernel",
    "KmdState",
    "LinearKmdState",
    "MeasureStream",
    "OtSolution",
    "SinkhornSolution",
    "certify_dual_bound",
    "discretize_gaussian",
    "duality_gap_finite",
    "exact_ot",
    "f_eval",
    "gap_surrogate",
    "kernel_eval",
    "kmd_run",
    "kmd_run_online",
    "kmd_step",
    "lambda_star",
    "lambda_star_argmax",
    "linear_kmd_run",
    "linear_kmd_step",
    "load_image_measure",
    "lp_subgradient",
    "md_step",
    "normalize",
    "run_baseline",
    "run_finite",
    "sample_measure",
    "score",
    "sinkhorn",
    "sinkhorn_gradient",
    "squared_distance_cost",
    "true_gaussian_barycenter",
    "uniform_baseline_score",
    "wasserstein_1d",
]
