"""Fixed-point solvers, the path driver, and stationarity diagnostics."""

import numpy as np
import pytest

from helpers import (dense_nuclear_norm, dense_of_factors, dense_of_observed,
                     dense_soft_threshold, dense_svd_values,
                     factors_with_values, fully_observed, planted_instance,
                     random_dense, random_observed)
from softimpute import (LambdaGrid, LowRankFactors, ObservedMatrix,
                        SolveOptions, default_grid, hard_impute, kkt_residual,
                        objective, soft_impute, solve_path,
                        sparse_only_operator, spectral_norm,
                        surrogate_objective, train_rmse)


def unit_scaled(x):
    return x.with_values(x.vals / np.linalg.norm(x.vals))


def sigma1(x):
    return spectral_norm(sparse_only_operator(x))


class TestOptionsAndGrid:
    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolveOptions(epsilon=0.0)
        with pytest.raises(ValueError):
            SolveOptions(max_iters=0)
        with pytest.raises(ValueError):
            SolveOptions(r_max=0)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            LambdaGrid([])
        with pytest.raises(ValueError):
            LambdaGrid([1.0, 0.0])
        with pytest.raises(ValueError):
            LambdaGrid([1.0, 2.0])
        with pytest.raises(ValueError):
            LambdaGrid([1.0, 1.0])
        g = LambdaGrid([2.0, 1.0])
        assert len(g) == 2 and list(g) == [2.0, 1.0] and g[0] == 2.0

    def test_default_grid_single_value(self):
        x = random_observed(10, 8, 30, seed=1)
        g = default_grid(x, 1)
        assert len(g) == 1
        assert g[0] == pytest.approx(dense_svd_values(dense_of_observed(x))[0],
                                     rel=1e-8)

    def test_default_grid_endpoints(self):
        x = random_observed(10, 8, 30, seed=2)
        g = default_grid(x, 2, 0.01)
        assert g[1] == pytest.approx(0.01 * g[0], rel=1e-12)
        g = default_grid(x, 7, 0.05)
        assert len(g) == 7
        assert g[6] == pytest.approx(0.05 * g[0], rel=1e-12)

    def test_default_grid_rejects_zero_data(self):
        x = ObservedMatrix(5, 5, [0, 1], [0, 1], [0.0, 0.0])
        with pytest.raises(ValueError, match="zero"):
            default_grid(x, 5)

    def test_first_grid_point_gives_null_model(self):
        x = random_observed(15, 12, 60, seed=3)
        g = default_grid(x, 3, 0.1)
        z, tr = soft_impute(x, g[0])
        assert z.rank == 0 and tr.converged


class TestObjective:
    def test_zero_factors(self):
        x = random_observed(8, 6, 20, seed=1)
        want = 0.5 * float(x.vals @ x.vals)
        assert objective(LowRankFactors.zeros(8, 6), x, 3.0) == \
            pytest.approx(want, rel=1e-14)

    def test_hand_example(self):
        # interpolates (0,0)=1, misses (1,1)=2, nuclear norm 1, lam 0.5
        x = ObservedMatrix(3, 3, [0, 1], [0, 1], [1.0, 2.0])
        e0 = np.zeros((3, 1))
        e0[0, 0] = 1.0
        z = LowRankFactors(e0, np.array([1.0]), e0.copy())
        assert objective(z, x, 0.5) == pytest.approx(2.5, abs=1e-15)

    def test_interpolant_at_lambda_zero(self):
        x = ObservedMatrix(3, 3, [0, 1], [0, 1], [1.0, 2.0])
        rng = np.random.default_rng(2)
        a = np.zeros((3, 3))
        a[0, 0], a[1, 1] = 1.0, 2.0
        u, d, vt = np.linalg.svd(a)
        z = LowRankFactors(u[:, :2], d[:2], vt[:2].T)
        assert objective(z, x, 0.0) == pytest.approx(0.0, abs=1e-28)

    def test_dimension_mismatch(self):
        x = random_observed(8, 6, 20, seed=3)
        with pytest.raises(ValueError):
            objective(LowRankFactors.zeros(6, 8), x, 1.0)

    def test_train_rmse_matches_dense(self):
        x = random_observed(8, 6, 20, seed=4)
        z = factors_with_values(8, 6, [2.0, 1.0], seed=5)
        resid = dense_of_factors(z)[x.rows, x.cols] - x.vals
        want = np.sqrt(np.mean(resid ** 2))
        assert train_rmse(z, x) == pytest.approx(want, rel=1e-12)


class TestSurrogate:
    def test_matches_dense_evaluation(self):
        # Q(z_new | z_old) against a fully materialized computation
        x = random_observed(12, 10, 40, seed=1)
        z_old = factors_with_values(12, 10, [2.0, 1.0], seed=2)
        z_new = factors_with_values(12, 10, [1.5, 1.0, 0.5], seed=3)
        lam = 0.7
        filled = dense_of_factors(z_old).copy()
        filled[x.rows, x.cols] = x.vals
        want = 0.5 * np.linalg.norm(filled - dense_of_factors(z_new)) ** 2 \
            + lam * dense_nuclear_norm(dense_of_factors(z_new))
        got = surrogate_objective(z_new, z_old, x, lam)
        assert got == pytest.approx(want, rel=1e-9)

    def test_self_surrogate_is_objective(self):
        x = random_observed(12, 10, 40, seed=4)
        z = factors_with_values(12, 10, [2.0, 1.0], seed=5)
        assert surrogate_objective(z, z, x, 0.3) == \
            pytest.approx(objective(z, x, 0.3), rel=1e-12)


class TestSoftImpute:
    def test_fully_observed_fixed_point(self):
        a = random_dense(15, 12, seed=1)
        x = fully_observed(a)
        lam = 0.4 * dense_svd_values(a)[0]
        z, tr = soft_impute(x, lam)
        assert tr.converged and tr.iterations <= 2
        assert np.allclose(dense_of_factors(z), dense_soft_threshold(a, lam),
                           atol=1e-8)

    def test_total_shrinkage_is_one_step(self):
        x = random_observed(15, 12, 60, seed=2)
        z, tr = soft_impute(x, 1.5 * sigma1(x))
        assert z.rank == 0 and tr.converged and tr.iterations == 1

    def test_matches_dense_reference_iteration(self):
        # run the same fill-and-threshold loop densely and compare ends
        x = random_observed(20, 15, 120, seed=3)
        lam = 0.3 * sigma1(x)
        opts = SolveOptions(epsilon=1e-9, max_iters=400)
        z, tr = soft_impute(x, lam, options=opts)

        dense = np.zeros(x.shape)
        for _ in range(tr.iterations):
            filled = dense.copy()
            filled[x.rows, x.cols] = x.vals
            dense = dense_soft_threshold(filled, lam)
        assert objective(z, x, lam) == pytest.approx(
            0.5 * np.linalg.norm(dense[x.rows, x.cols] - x.vals) ** 2
            + lam * dense_nuclear_norm(dense), rel=1e-7)
        assert np.allclose(dense_of_factors(z), dense,
                           atol=1e-6 * max(1.0, np.abs(dense).max()))

    def test_stationarity_at_spec_example(self):
        # 20x20, rank 2, half observed, lam = 0.1 sigma1
        x, _ = planted_instance(20, 20, 2, 200, 0.1, seed=4)
        x = unit_scaled(x)
        lam = 0.1 * sigma1(x)
        z, tr = soft_impute(x, lam,
                            options=SolveOptions(epsilon=1e-10,
                                                 max_iters=5000))
        assert tr.converged
        assert kkt_residual(z, x, lam).max_violation <= 1e-3

    def test_objective_trace_nonincreasing(self):
        x, _ = planted_instance(25, 20, 3, 250, 0.3, seed=5)
        lam = 0.2 * sigma1(x)
        _, tr = soft_impute(x, lam, options=SolveOptions(epsilon=1e-7))
        objs = [r.objective for r in tr.records]
        assert all(b <= a + 1e-10 for a, b in zip(objs, objs[1:]))

    def test_sandwich_along_trace(self):
        x, _ = planted_instance(25, 20, 3, 250, 0.3, seed=6)
        lam = 0.2 * sigma1(x)
        _, tr = soft_impute(x, lam, options=SolveOptions(epsilon=1e-7))
        prev = 0.5 * float(x.vals @ x.vals)  # objective at the zero start
        for rec in tr.records:
            assert rec.objective <= rec.surrogate + 1e-10
            assert rec.surrogate <= prev + 1e-10
            prev = rec.objective

    def test_warm_start_consistency(self):
        x, _ = planted_instance(30, 25, 3, 375, 0.3, seed=7)
        lam = 0.25 * sigma1(x)
        opts = SolveOptions(epsilon=1e-9, max_iters=2000)
        cold, _ = soft_impute(x, lam, options=opts)
        warm_from, _ = soft_impute(x, 2.0 * lam, options=opts)
        warm, _ = soft_impute(x, lam, warm=warm_from, options=opts)
        f_cold = objective(cold, x, lam)
        f_warm = objective(warm, x, lam)
        assert abs(f_cold - f_warm) <= 1e-6 * max(1.0, abs(f_cold))

    def test_iteration_cap_reports_unconverged(self):
        x, _ = planted_instance(25, 20, 3, 250, 0.3, seed=8)
        lam = 0.05 * sigma1(x)
        _, tr = soft_impute(x, lam, options=SolveOptions(max_iters=2))
        assert not tr.converged and tr.iterations == 2

    def test_trace_record_fields(self):
        x, _ = planted_instance(15, 15, 2, 110, 0.2, seed=9)
        z, tr = soft_impute(x, 0.3 * sigma1(x))
        assert [r.iteration for r in tr.records] == \
            list(range(1, tr.iterations + 1))
        assert tr.records[-1].rank == z.rank
        assert all(r.wall_ms >= 0 for r in tr.records)
        assert tr.final_objective == tr.records[-1].objective

    def test_input_validation(self):
        x = random_observed(10, 8, 30, seed=10)
        with pytest.raises(ValueError):
            soft_impute(x, -1.0)
        with pytest.raises(ValueError, match="warm start shape"):
            soft_impute(x, 1.0, warm=LowRankFactors.zeros(8, 10))


class TestHardImpute:
    def test_eckart_young_at_full_observation(self):
        a = random_dense(18, 15, seed=1)
        d = dense_svd_values(a)
        q = 3
        lam = 0.5 * d[q - 1] * d[q]  # strictly between the retention bounds
        z, tr = hard_impute(fully_observed(a), lam)
        assert tr.converged
        u, dd, vt = np.linalg.svd(a)
        best = (u[:, :q] * dd[:q]) @ vt[:q]
        assert np.allclose(dense_of_factors(z), best, atol=1e-8)

    def test_rank_mode_matches_lambda_mode(self):
        a = random_dense(18, 15, seed=2)
        d = dense_svd_values(a)
        z_rank, _ = hard_impute(fully_observed(a), rank=2)
        z_lam, _ = hard_impute(fully_observed(a), 0.5 * d[1] * d[2])
        assert np.allclose(dense_of_factors(z_rank), dense_of_factors(z_lam),
                           atol=1e-9)

    def test_exact_rank_one_recovery(self):
        x, truth = planted_instance(30, 30, 1, 450, 0.0, seed=3)
        soft, _ = soft_impute(x, 1e-3 * sigma1(x),
                              options=SolveOptions(epsilon=1e-9,
                                                   max_iters=2000))
        z, _ = hard_impute(x, rank=1, warm=soft,
                           options=SolveOptions(epsilon=1e-12,
                                                max_iters=2000))
        mask = np.ones((30, 30), dtype=bool)
        mask[x.rows, x.cols] = False
        diff = dense_of_factors(z) - truth
        err = np.linalg.norm(diff[mask]) ** 2 / np.linalg.norm(truth[mask]) ** 2
        assert err < 1e-6

    def test_warm_start_reaches_no_worse_objective(self):
        x, _ = planted_instance(40, 40, 4, 800, 0.5, seed=4)
        lam = (0.12 * sigma1(x)) ** 2 / 2.0
        opts = SolveOptions(epsilon=1e-8, max_iters=800)
        soft, _ = soft_impute(x, 0.12 * sigma1(x), options=opts)
        cold, _ = hard_impute(x, lam, options=opts)
        warm, _ = hard_impute(x, lam, warm=soft, options=opts)

        def hard_obj(z):
            resid = dense_of_factors(z)[x.rows, x.cols] - x.vals
            return 0.5 * float(resid @ resid) + lam * z.rank

        assert hard_obj(warm) <= hard_obj(cold) + 1e-8

    def test_exactly_one_of_lam_or_rank(self):
        x = random_observed(10, 8, 30, seed=5)
        with pytest.raises(ValueError, match="exactly one"):
            hard_impute(x)
        with pytest.raises(ValueError, match="exactly one"):
            hard_impute(x, 1.0, rank=2)
        with pytest.raises(ValueError):
            hard_impute(x, rank=-1)


class TestSolvePath:
    def test_single_point_equals_direct_solve(self):
        x, _ = planted_instance(20, 18, 2, 180, 0.2, seed=1)
        lam = 0.3 * sigma1(x)
        path = solve_path(x, LambdaGrid([lam]))
        direct, tr = soft_impute(x, lam)
        assert len(path) == 1
        assert path[0].trace.iterations == tr.iterations
        assert np.array_equal(path[0].factors.d, direct.d)

    def test_rank_zero_then_warm_equals_cold(self):
        x, _ = planted_instance(20, 18, 2, 180, 0.2, seed=2)
        lam1 = 1.05 * sigma1(x)
        grid = LambdaGrid([lam1, lam1 / 2])
        opts = SolveOptions(epsilon=1e-9, max_iters=2000)
        path = solve_path(x, grid, options=opts)
        assert path[0].factors.rank == 0
        cold, _ = soft_impute(x, lam1 / 2, options=opts)
        f_warm = objective(path[1].factors, x, lam1 / 2)
        f_cold = objective(cold, x, lam1 / 2)
        assert abs(f_warm - f_cold) <= 1e-6 * max(1.0, abs(f_cold))

    def test_entries_preserve_grid_order(self):
        x, _ = planted_instance(20, 18, 2, 180, 0.2, seed=3)
        grid = default_grid(x, 5, 0.1)
        path = solve_path(x, grid)
        assert np.array_equal(path.lambdas, grid.values)
        assert len(path) == 5

    def test_explicit_warm_start_override(self):
        x, _ = planted_instance(20, 18, 2, 180, 0.2, seed=4)
        lam = 0.2 * sigma1(x)
        seed_z, _ = soft_impute(x, lam, options=SolveOptions(epsilon=1e-9))
        path = solve_path(x, LambdaGrid([lam]), warm_starts=[seed_z])
        # already at the fixed point: one iteration to confirm
        assert path[0].trace.iterations <= 2
        with pytest.raises(ValueError, match="warm_starts length"):
            solve_path(x, LambdaGrid([lam]), warm_starts=[seed_z, None])

    def test_failures_recorded_not_raised(self):
        x = random_observed(20, 20, 160, seed=5)
        grid = default_grid(x, 4, 0.001)
        path = solve_path(x, grid, options=SolveOptions(r_max=2))
        assert not path.all_converged
        assert any(not e.ok and "r_max" in e.error for e in path)
        assert path[0].ok  # the null-model end is unaffected

    def test_unknown_kind(self):
        x = random_observed(10, 8, 30, seed=6)
        with pytest.raises(ValueError, match="kind"):
            solve_path(x, LambdaGrid([1.0]), kind="medium")

    def test_hard_path_warm_starts_from_soft(self):
        x, _ = planted_instance(25, 25, 2, 310, 0.1, seed=7)
        grid = default_grid(x, 4, 0.05)
        soft_path = solve_path(x, grid)
        warms = [e.factors for e in soft_path]
        hard_path = solve_path(x, grid, kind="hard", warm_starts=warms)
        assert len(hard_path) == 4
        assert all(e.ok for e in hard_path)


class TestKktResidual:
    def test_fully_observed_prox_is_stationary(self):
        a = random_dense(15, 12, seed=1)
        x = fully_observed(a)
        lam = 0.4 * dense_svd_values(a)[0]
        z, _ = soft_impute(x, lam)
        k = kkt_residual(z, x, lam)
        assert k.gap_core <= 1e-8
        assert k.gap_orth <= 1e-8
        assert k.spectral_excess <= 1e-8
        assert not k.lambda_zero

    def test_perturbed_solution_is_flagged(self):
        a = random_dense(15, 12, seed=2)
        x = fully_observed(a)
        lam = 0.4 * dense_svd_values(a)[0]
        z = factors_with_values(15, 12, [2.0, 1.0], seed=3)  # not optimal
        assert kkt_residual(z, x, lam).max_violation > 0.01

    @pytest.mark.parametrize("seed", range(5))
    def test_converged_solve_meets_threshold(self, seed):
        x, _ = planted_instance(30, 30, 2, 450, 0.05, seed=seed + 50)
        x = unit_scaled(x)
        lam = 0.7 * sigma1(x)
        z, tr = soft_impute(x, lam, options=SolveOptions(epsilon=1e-6,
                                                         max_iters=3000))
        assert tr.converged
        k = kkt_residual(z, x, lam)
        assert k.max_violation <= 1e-3

    def test_lambda_zero_mode(self):
        x = random_observed(12, 10, 40, seed=4)
        z, _ = soft_impute(x, 0.3 * sigma1(x))
        k = kkt_residual(z, x, 0.0)
        assert k.lambda_zero
        assert k.spectral_excess == 0.0

    def test_rank_zero_candidate(self):
        x = random_observed(12, 10, 40, seed=5)
        z = LowRankFactors.zeros(12, 10)
        s1 = sigma1(x)
        k = kkt_residual(z, x, 1.1 * s1)
        assert k.max_violation == 0.0  # zero is optimal above sigma1
        k = kkt_residual(z, x, 0.5 * s1)
        assert k.spectral_excess == pytest.approx(1.0, rel=0.01)

    def test_negative_lambda_rejected(self):
        x = random_observed(12, 10, 40, seed=6)
        with pytest.raises(ValueError):
            kkt_residual(LowRankFactors.zeros(12, 10), x, -1.0)
