"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints a single PASS line with its measured quantities so a run
log doubles as an acceptance report. Experiment-style checks freeze their
seeds; every number asserted here is reproducible bit-for-bit.
"""

import math
import time

import numpy as np

from barystream.baselines import (
    BaselineConfig,
    BaselineState,
    baseline_step,
    lp_subgradient,
    sinkhorn_gradient,
)
from barystream.cli import main as cli_main
from barystream.dual_core import (
    CostMatrix,
    certify_dual_bound,
    exact_ot,
    sinkhorn,
    squared_distance_cost,
    wasserstein_1d,
)
from barystream.evaluation import (
    score,
    true_gaussian_barycenter,
    uniform_baseline_score,
)
from barystream.finite_md import (
    FiniteProblem,
    duality_gap_finite,
    oracle_g,
    oracle_h,
    run_finite,
)
from barystream.kmd import (
    Kernel,
    KmdConfig,
    KmdState,
    LinearKmdState,
    f_eval,
    kernel_eval,
    kernel_vec,
    kmd_step,
    linear_kmd_step,
)
from barystream.measures import (
    DiscreteMeasure,
    GaussianParamLaw,
    Grid1D,
    MeasureStream,
    normalize,
)
from barystream.dual_core import lambda_star, lambda_star_argmax

EXPERIMENT_GRID = Grid1D.uniform(-10.0, 10.0, 100)
EXPERIMENT_LAW = GaussianParamLaw(mu0=1.0, sigma0_sq=4.0, rate=0.5)


def rand_simplex(rng, n, floor=1e-12):
    return normalize(np.maximum(rng.random(n), floor))


def test_criterion_01_dual_bound_certificate():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    passed = 0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        grid = Grid1D.uniform(0.0, 1.0, n)
        C = squared_distance_cost(grid, 2.0)
        r = rand_simplex(rng, n)
        c = rand_simplex(rng, n)
        ok, mu = certify_dual_bound(r, c, C, tol=1e-7)
        assert ok
        assert np.abs(mu).max() <= C.inf_norm + 1e-9
        passed += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 10.0
    print(f"\ncriterion 1 PASS: {passed}/200 certified in {elapsed:.2f}s")


def test_criterion_02_strong_duality_1d_oracle():
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    grid = Grid1D.uniform(-2.0, 2.0, 20)
    C = squared_distance_cost(grid, 2.0)
    worst = 0.0
    for _ in range(100):
        r = rand_simplex(rng, 20)
        c = rand_simplex(rng, 20)
        lp = exact_ot(r, c, C).value
        w2 = wasserstein_1d(r, c, grid, p=2.0)
        rel = abs(lp - w2 * w2) / (1.0 + abs(lp))
        worst = max(worst, rel)
        assert rel <= 1e-8
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    print(f"\ncriterion 2 PASS: 100 pairs, worst rel err {worst:.2e} "
          f"in {elapsed:.2f}s")


def test_criterion_03_oracle_unbiasedness():
    rng = np.random.default_rng(2)
    # exhaustive enumeration at small n: both sampled oracles average to the
    # exact partial (sub)gradients of the saddle objective
    worst = 0.0
    for n in (2, 5, 10):
        C = CostMatrix.from_entries(rng.random((n, n)))
        M = rng.uniform(-1, 1, size=(2, n))
        c_t = rand_simplex(rng, n).weights
        r = rand_simplex(rng, n).weights
        for t in range(2):
            mean_g = np.zeros(n)
            for s in range(n):
                _, g = oracle_g(M, t, s, C)
                mean_g[s] += g / n
            err = np.abs(mean_g - (-lambda_star(M[t], C))).max()
            worst = max(worst, err)
            assert err <= 1e-12
            expected_h = c_t.copy()
            for i in range(n):
                expected_h[lambda_star_argmax(M[t], C, i)] -= r[i]
            mean_h = np.zeros(n)
            for q in range(n):
                mean_h += r[q] * oracle_h(M, t, q, c_t, C)
            err = np.abs(mean_h - expected_h).max()
            worst = max(worst, err)
            assert err <= 1e-12
    # Monte-Carlo 3-sigma check at n=50 over 1e5 draws
    n, draws = 50, 100_000
    C = CostMatrix.from_entries(rng.random((n, n)))
    M = rng.uniform(-1, 1, size=(1, n))
    c_t = rand_simplex(rng, n).weights
    r = rand_simplex(rng, n).weights
    J = np.array([lambda_star_argmax(M[0], C, i) for i in range(n)])
    expected = c_t - np.bincount(J, weights=r, minlength=n)
    qs = rng.choice(n, size=draws, p=r)
    mc_mean = c_t[None, :] - np.eye(n)[J[qs]]
    mc_err = np.abs(mc_mean.mean(axis=0) - expected).max()
    assert mc_err <= 3.0 / math.sqrt(draws)
    print(f"\ncriterion 3 PASS: enumeration err {worst:.2e}, "
          f"MC err {mc_err:.2e} <= 3 sigma {3.0 / math.sqrt(draws):.2e}")


def test_criterion_04_linear_kernel_equivalence():
    t0 = time.monotonic()
    n = 10
    grid = Grid1D.uniform(0.0, 1.0, n)
    C = squared_distance_cost(grid, 2.0)
    law = GaussianParamLaw(0.5, 0.04, 5.0)
    config = KmdConfig.for_run(Kernel.linear(), C, N=500)
    stream_a = MeasureStream.gaussian(law, grid, seed=3)
    stream_b = MeasureStream.gaussian(law, grid, seed=3)
    kernel_state = KmdState.cold_start(n)
    matrix_state = LinearKmdState.cold_start(n)
    worst = 0.0
    for _ in range(500):
        kernel_state = kmd_step(kernel_state, config,
                                stream_a.sample().weights, C)
        matrix_state = linear_kmd_step(matrix_state, config,
                                       stream_b.sample().weights, C)
        rel = np.abs(kernel_state.r - matrix_state.r).max() \
            / max(matrix_state.r.max(), 1e-300)
        worst = max(worst, rel)
        assert rel <= 1e-9
    elapsed = time.monotonic() - t0
    assert elapsed < 10.0
    print(f"\ncriterion 4 PASS: 500 steps, worst rel drift {worst:.2e} "
          f"in {elapsed:.2f}s")


def test_criterion_05_beta_recursion_induction():
    n = 5
    grid = Grid1D.uniform(0.0, 1.0, n)
    C = squared_distance_cost(grid, 2.0)
    kernel = Kernel.diffusion(5.0, 25.0)
    config = KmdConfig.for_run(kernel, C, N=200)
    stream = MeasureStream.gaussian(GaussianParamLaw(0.5, 0.04, 5.0),
                                    grid, seed=4)
    probe = rand_simplex(np.random.default_rng(5), n).weights
    state = KmdState.cold_start(n)
    incremental = np.zeros(n)
    worst = 0.0
    for _ in range(200):
        state = kmd_step(state, config, stream.sample().weights, C)
        incremental = incremental + state.history.betas[-1] \
            * kernel_eval(kernel, probe, state.history.samples[-1])
        full = kernel_vec(kernel, probe, state.history.samples) \
            @ state.history.betas
        err = np.abs(incremental - full).max()
        worst = max(worst, err)
        assert err <= 1e-12
    print(f"\ncriterion 5 PASS: 200 steps, worst drift {worst:.2e}")


def test_criterion_06_finite_md_convergence_trend():
    t0 = time.monotonic()
    grid = Grid1D.uniform(0.0, 1.0, 5)
    C = squared_distance_cost(grid, 2.0)
    gaps = {1000: [], 4000: [], 16000: []}
    for seed in range(500, 520):
        rng = np.random.default_rng(seed)
        measures = [normalize(rng.random(5) + 0.05, grid) for _ in range(5)]
        problem = FiniteProblem.from_measures(measures, C)
        for N in gaps:
            r_avg, M_avg, _ = run_finite(problem, N=N, seed=seed)
            gaps[N].append(duality_gap_finite(r_avg, M_avg, problem))
    med = {N: float(np.median(v)) for N, v in gaps.items()}
    elapsed = time.monotonic() - t0
    assert med[16000] <= 0.75 * med[4000]
    assert med[4000] <= 0.75 * med[1000]
    assert elapsed < 120.0
    print(f"\ncriterion 6 PASS: median gaps {med[1000]:.4f} -> {med[4000]:.4f}"
          f" -> {med[16000]:.4f} (ratios {med[4000] / med[1000]:.3f}, "
          f"{med[16000] / med[4000]:.3f}) in {elapsed:.0f}s")


def _experiment_cost():
    C = squared_distance_cost(EXPERIMENT_GRID, 2.0)
    return C.scaled(1.0 / C.inf_norm)


def _run_linear_kmd(N=1000, seed=0, eta_scale=2e5):
    C = _experiment_cost()
    config = KmdConfig.for_run(Kernel.linear(), C, N, eta_scale=eta_scale)
    stream = MeasureStream.gaussian(EXPERIMENT_LAW, EXPERIMENT_GRID, seed=seed)
    state = LinearKmdState.cold_start(C.n)
    for _ in range(N):
        state = linear_kmd_step(state, config, stream.sample().weights, C)
    return normalize(state.r_avg, EXPERIMENT_GRID)


def test_criterion_07_gaussian_experiment_desk_scale():
    t0 = time.monotonic()
    truth = true_gaussian_barycenter(EXPERIMENT_LAW, EXPERIMENT_GRID)
    baseline = uniform_baseline_score(truth, EXPERIMENT_GRID)
    C = _experiment_cost()
    N = 1000

    linear_score = score(_run_linear_kmd(N=N, seed=0), truth, EXPERIMENT_GRID)
    assert linear_score <= 0.2 * baseline

    kernel_scores = {}
    for name, kernel in (("diffusion", Kernel.diffusion(1e3, 25.0)),
                         ("rbf", Kernel.rbf(1e-3, 25.0))):
        config = KmdConfig.for_run(kernel, C, N, eta_scale=1e4)
        stream = MeasureStream.gaussian(EXPERIMENT_LAW, EXPERIMENT_GRID, seed=0)
        state = KmdState.cold_start(C.n)
        for _ in range(N):
            state = kmd_step(state, config, stream.sample().weights, C)
        kernel_scores[name] = score(normalize(state.r_avg, EXPERIMENT_GRID),
                                    truth, EXPERIMENT_GRID)
    spread = abs(kernel_scores["rbf"] - kernel_scores["diffusion"]) \
        / max(kernel_scores.values())
    assert spread <= 0.10
    elapsed = time.monotonic() - t0
    assert elapsed < 300.0
    print(f"\ncriterion 7 PASS: linear_kmd {linear_score:.3f} <= "
          f"0.2 x uniform {baseline:.3f}; diffusion {kernel_scores['diffusion']:.3f}"
          f" vs rbf {kernel_scores['rbf']:.3f} ({spread:.2%}) in {elapsed:.0f}s")


def _run_sinkhorn_curve(gamma, stepsize, N=1000, seed=0, every=50):
    C = _experiment_cost()
    truth = true_gaussian_barycenter(EXPERIMENT_LAW, EXPERIMENT_GRID)
    config = BaselineConfig(method="sinkhorn_sgd", gamma=gamma,
                            stepsize=stepsize, inner_iters=200)
    stream = MeasureStream.gaussian(EXPERIMENT_LAW, EXPERIMENT_GRID, seed=seed)
    state = BaselineState.cold_start(C.n)
    curve = []
    for k in range(1, N + 1):
        state = baseline_step(state, config, stream.sample(), C)
        if k % every == 0:
            curve.append(score(normalize(state.r_avg, EXPERIMENT_GRID),
                               truth, EXPERIMENT_GRID))
    return curve


def test_criterion_08_regularization_bias():
    truth = true_gaussian_barycenter(EXPERIMENT_LAW, EXPERIMENT_GRID)
    N = 1000
    linear_score = score(_run_linear_kmd(N=N, seed=0), truth, EXPERIMENT_GRID)

    biased = _run_sinkhorn_curve(gamma=1e-2, stepsize=1.0, N=N, seed=0)
    assert biased[-1] > linear_score

    tiny = _run_sinkhorn_curve(gamma=5e-5, stepsize=20.0, N=N, seed=0)
    at_three_quarters = tiny[len(tiny) * 3 // 4 - 1]
    improvement = (at_three_quarters - tiny[-1]) / at_three_quarters
    assert improvement < 0.05
    print(f"\ncriterion 8 PASS: gamma 1e-2 final {biased[-1]:.3f} > "
          f"linear_kmd {linear_score:.3f}; gamma 5e-5 last-quartile "
          f"improvement {improvement:.2%} < 5%")


def test_criterion_09_gradient_validation():
    rng = np.random.default_rng(6)
    n = 5
    grid = Grid1D.uniform(0.0, 1.0, n)
    C = squared_distance_cost(grid, 2.0)
    r = normalize(rng.random(n) + 0.05, grid)
    c = normalize(rng.random(n) + 0.05, grid)

    def reg_cost(measure, gamma):
        return sinkhorn(measure, c, C, gamma, max_iter=5000,
                        tol=1e-12).reg_value

    worst_fd = 0.0
    for gamma in (1.0, 0.1):
        grad, unstable = sinkhorn_gradient(r, c, C, gamma,
                                           inner_iters=5000, inner_tol=1e-12)
        assert not unstable
        h = 1e-5
        for i in range(n - 1):
            d = np.zeros(n)
            d[i], d[i + 1] = 1.0, -1.0
            plus = DiscreteMeasure(normalize(r.weights + h * d).weights, grid)
            minus = DiscreteMeasure(normalize(r.weights - h * d).weights, grid)
            fd = (reg_cost(plus, gamma) - reg_cost(minus, gamma)) / (2 * h)
            rel = abs(fd - grad @ d) / (1.0 + abs(grad @ d))
            worst_fd = max(worst_fd, rel)
            assert rel <= 1e-4

    sub = lp_subgradient(r, c, C)
    f_r = exact_ot(r, c, C).value
    for _ in range(50):
        probe = rand_simplex(rng, n)
        f_probe = exact_ot(probe, c, C).value
        assert f_probe >= f_r + sub @ (probe.weights - r.weights) - 1e-8
    print(f"\ncriterion 9 PASS: FD worst rel err {worst_fd:.2e}; "
          f"subgradient inequality held on 50 probes")


def test_criterion_10_determinism_and_resume(tmp_path):
    import json

    corpus = tmp_path / "corpus.csv"
    cli_main(["gen-data", "--set", "data.count=4", "--set", "data.grid.n=6",
              "--set", "seed=9", "--set", f"data.path={corpus}"])
    method_args = {
        "linear_kmd": ["--set", "method=linear_kmd"],
        "kmd": ["--set", "method=kmd", "--set",
                'kernel={"family": "rbf", "param": 0.001, "r_sq": 25.0}'],
        "sinkhorn_sgd": ["--set", "method=sinkhorn_sgd",
                         "--set", "baseline.inner_iters=30"],
        "lp_sgd": ["--set", "method=lp_sgd"],
        "finite_md": ["--set", "method=finite_md", "--set", "data.kind=finite",
                      "--set", f"data.path={corpus}"],
    }
    for method, extra in method_args.items():
        common = ["--set", "data.grid.n=8", "--set", "seed=2",
                  "--set", "checkpoint_every=25"] + extra
        full = tmp_path / f"{method}_full.json"
        assert cli_main(["run", "--set", "N=100",
                         "--set", f"output.checkpoint={full}"] + common) == 0
        half = tmp_path / f"{method}_half.json"
        assert cli_main(["run", "--set", "N=100", "--set", "halt_after=50",
                         "--set", f"output.checkpoint={half}"] + common) == 0
        assert cli_main(["resume", "--checkpoint", str(half),
                         "--set", f"output.checkpoint={half}"]) == 0
        a = json.loads(full.read_text())
        b = json.loads(half.read_text())
        assert a["k"] == b["k"] == 100
        assert a["state"] == b["state"], method
        if "rng" in a or "rng" in b:
            assert a.get("rng") == b.get("rng"), method
        if "stream" in a or "stream" in b:
            assert a.get("stream") == b.get("stream"), method
    print("\ncriterion 10 PASS: bit-for-bit resume for "
          f"{', '.join(method_args)}")
