"""Tests for the coupled-path Monte Carlo harness and order fitting."""

import math

import numpy as np
import pytest

from taming_sde import (
    MAX_STEPS,
    ErrorRow,
    ErrorTable,
    PathExplosionError,
    ReferenceBlowUpError,
    SchemeKind,
    SdeModel,
    ValidationError,
    coarsen,
    efficiency_benchmark,
    fit_order,
    gbm_exact_endpoint,
    get_model,
    moment_probe,
    reference_endpoint,
    sample_path,
    strong_error_table,
    strong_error_tables,
)
from taming_sde.harness import DEFAULT_REF_MULTIPLIER, TAMED_BLOWUP_FRACTION


def make_constant_model():
    # mu = 0, sigma = 0, xi = 1: the solution never moves.
    return SdeModel(
        name="const", state_dim=1, noise_dim=1,
        drift=lambda x: np.zeros(1),
        diffusion_columns=(lambda x: np.array([0.0]),),
        diffusion_jacobians=(lambda x: np.zeros((1, 1)),),
        initial_state=np.array([1.0]), horizon=1.0,
    )


def make_exploding_model(with_oracle):
    # Quadratic diffusion from a huge state: the first nonzero increment
    # overflows within two steps, under tamed schemes included.  The fake
    # oracle keeps the reference alive so path-level policy is observable.
    def drift(x):
        return np.zeros(1)

    def column(x):
        return np.array([x[0] * x[0]])

    def jacobian(x):
        return np.array([[2.0 * x[0]]])

    return SdeModel(
        name="exploding", state_dim=1, noise_dim=1, drift=drift,
        diffusion_columns=(column,), diffusion_jacobians=(jacobian,),
        initial_state=np.array([1e75]), horizon=1.0,
        exact_endpoint=(lambda grid: np.array([1e75])) if with_oracle else None,
    )


def power_law_table(constant, order, step_counts, zero_rows=0):
    rows = []
    for n in step_counts:
        h = 1.0 / n
        rmse = constant * h ** order
        rows.append(ErrorRow(steps=n, mesh_width=h, mse=rmse * rmse,
                             mse_stderr=0.0, rmse=rmse, runtime_ms=1.0,
                             paths=100, blown_paths=0))
    for k in range(zero_rows):
        n = step_counts[-1] * 2 ** (k + 1)
        rows.append(ErrorRow(steps=n, mesh_width=1.0 / n, mse=0.0,
                             mse_stderr=0.0, rmse=0.0, runtime_ms=1.0,
                             paths=100, blown_paths=0))
    return ErrorTable(scheme=SchemeKind.TAMED_MILSTEIN, model_name="synthetic",
                      reference="oracle", master_seed=0, rows=rows)


class TestStrongErrorTables:
    def test_constant_model_has_zero_error(self):
        table = strong_error_table(make_constant_model(),
                                   SchemeKind.TAMED_MILSTEIN, [4, 8], 10, 0,
                                   ref_multiplier=4)
        for row in table.rows:
            assert row.mse == 0.0
            assert row.rmse == 0.0
            assert row.blown_paths == 0

    def test_rows_sorted_by_increasing_steps(self):
        table = strong_error_table(get_model("gbm"), SchemeKind.TAMED_EULER,
                                   [8, 16, 32], 20, 1, ref_multiplier=4)
        assert [r.steps for r in table.rows] == [8, 16, 32]
        widths = [r.mesh_width for r in table.rows]
        assert widths == sorted(widths, reverse=True)
        assert table.reference == "oracle"

    def test_fine_grid_reference_label(self):
        table = strong_error_table(get_model("poly5"), SchemeKind.TAMED_EULER,
                                   [8, 16], 10, 0, ref_multiplier=4)
        assert table.reference == "tamed-milstein@64"

    def test_serial_runs_reproduce_bitwise(self):
        model = get_model("poly5")
        first = strong_error_tables(model, ["tamed-euler", "tamed-milstein"],
                                    [16, 32], 50, 7, ref_multiplier=4)
        second = strong_error_tables(model, ["tamed-euler", "tamed-milstein"],
                                     [16, 32], 50, 7, ref_multiplier=4)
        for a, b in zip(first, second):
            assert a.row_values() == b.row_values()

    def test_parallel_equals_serial(self):
        model = get_model("poly5")
        serial = strong_error_tables(model, ["tamed-euler", "tamed-milstein"],
                                     [16, 32], 64, 3, ref_multiplier=4,
                                     workers=1)
        parallel = strong_error_tables(model, ["tamed-euler", "tamed-milstein"],
                                       [16, 32], 64, 3, ref_multiplier=4,
                                       workers=4)
        for a, b in zip(serial, parallel):
            assert a.row_values() == b.row_values()

    def test_coupling_conserves_driving_noise(self):
        # Every tested resolution of path i is a coarsening of one fine
        # grid, so all of them share the terminal Brownian value bitwise.
        n_ref = 256
        for i in range(5):
            fine = sample_path(11, i, n_ref, 1, 1.0)
            total = fine.total_increment()
            for n in (16, 32, 64):
                assert np.array_equal(coarsen(fine, n_ref // n).total_increment(),
                                      total)

    def test_rmse_decreases_with_refinement_within_noise(self):
        tables = strong_error_tables(get_model("poly5"),
                                     ["tamed-euler", "tamed-milstein"],
                                     [16, 32, 64, 128], 400, 5,
                                     ref_multiplier=8, workers=4)
        for table in tables:
            rows = table.rows
            for a, b in zip(rows, rows[1:]):
                se_a = a.mse_stderr / (2.0 * a.rmse)
                se_b = b.mse_stderr / (2.0 * b.rmse)
                assert b.rmse <= a.rmse + 2.0 * (se_a + se_b), table.scheme

    def test_oracle_and_fine_grid_references_agree(self):
        # gbm has both reference routes; the fine-grid tamed Milstein
        # reference must sit within a small multiple of its own fitted
        # one-step error from the closed form.
        model = get_model("gbm")
        oracle_table = strong_error_table(model, SchemeKind.TAMED_MILSTEIN,
                                          [16, 32, 64, 128], 400, 9,
                                          workers=4)
        fit = fit_order(oracle_table)
        n_ref = 1024
        h_ref = 1.0 / n_ref
        gaps = []
        for i in range(200):
            fine = sample_path(9, i, n_ref, 1, 1.0)
            fine_ref = reference_endpoint(model, fine, prefer_oracle=False)
            exact = model.exact_endpoint(fine)
            gaps.append(float(np.sum((fine_ref - exact) ** 2)))
        rms_gap = math.sqrt(sum(gaps) / len(gaps))
        predicted = math.exp(fit.intercept) * h_ref ** fit.slope
        assert rms_gap <= 3.0 * predicted

    def test_validation(self):
        model = get_model("gbm")
        with pytest.raises(ValidationError):
            strong_error_tables(model, ["euler"], [16], 1, 0)
        with pytest.raises(ValidationError):
            strong_error_tables(model, ["euler"], [], 10, 0)
        with pytest.raises(ValidationError):
            strong_error_tables(model, ["euler"], [32, 16], 10, 0)
        with pytest.raises(ValidationError):
            strong_error_tables(model, ["euler"], [16], 10, 0, ref_multiplier=2)
        with pytest.raises(ValidationError):
            strong_error_tables(model, ["euler"], [MAX_STEPS], 10, 0,
                                ref_multiplier=16)
        with pytest.raises(ValidationError):
            strong_error_tables(model, [], [16], 10, 0)


class TestBlowUpPolicy:
    def test_reference_blow_up_raises(self):
        with pytest.raises(ReferenceBlowUpError):
            strong_error_tables(make_exploding_model(with_oracle=False),
                                ["tamed-milstein"], [4], 50, 0,
                                ref_multiplier=4)

    def test_reference_endpoint_reports_path(self):
        model = make_exploding_model(with_oracle=False)
        grid = sample_path(0, 0, 16, 1, 1.0)
        with pytest.raises(ReferenceBlowUpError, match="path_index=0"):
            reference_endpoint(model, grid)

    def test_tamed_explosions_fail_the_run(self):
        # More than 1% of paths exploding under a tamed scheme means the
        # run is unusable evidence and must fail loudly.
        with pytest.raises(PathExplosionError, match="tamed-milstein"):
            strong_error_tables(make_exploding_model(with_oracle=True),
                                ["tamed-milstein"], [4], 50, 0,
                                ref_multiplier=4)

    def test_euler_explosions_reported_as_inf(self):
        table = strong_error_tables(make_exploding_model(with_oracle=True),
                                    ["euler"], [4], 50, 0,
                                    ref_multiplier=4)[0]
        row = table.rows[0]
        assert row.blown_paths == 50
        assert math.isinf(row.rmse)
        assert math.isinf(row.mse)

    def test_blowup_fraction_threshold(self):
        assert TAMED_BLOWUP_FRACTION == 0.01


class TestFitOrder:
    def test_exact_power_law(self):
        table = power_law_table(3.0, 0.75, [16, 32, 64, 128])
        fit = fit_order(table)
        assert np.isclose(fit.slope, 0.75, rtol=1e-12)
        assert np.isclose(fit.intercept, math.log(3.0), rtol=1e-10)
        assert fit.r_squared >= 1.0 - 1e-12
        assert fit.points_used == 4

    def test_zero_rmse_rows_excluded(self):
        table = power_law_table(2.0, 1.0, [16, 32, 64], zero_rows=2)
        fit = fit_order(table)
        assert fit.points_used == 3
        assert np.isclose(fit.slope, 1.0, rtol=1e-12)

    def test_infinite_rows_excluded(self):
        table = power_law_table(2.0, 0.5, [16, 32, 64])
        table.rows.append(ErrorRow(steps=128, mesh_width=1.0 / 128,
                                   mse=math.inf, mse_stderr=math.inf,
                                   rmse=math.inf, runtime_ms=1.0, paths=100,
                                   blown_paths=100))
        fit = fit_order(table)
        assert fit.points_used == 3

    def test_fewer_than_two_points_rejected(self):
        table = power_law_table(2.0, 1.0, [16], zero_rows=3)
        with pytest.raises(ValidationError):
            fit_order(table)


class TestMomentProbe:
    def test_constant_model_moment_one(self):
        rows = moment_probe(make_constant_model(), "tamed-milstein", 4.0,
                            [4, 16], 10, 0)
        for row in rows:
            assert row.estimate == 1.0
            assert row.stderr == 0.0
            assert row.blown_paths == 0

    def test_euler_divergence_reported_not_masked(self):
        # Explicit Euler on the superlinear model at coarse meshes: the
        # second moment is astronomically large at N = 4 and infinite (via
        # flagged blow-ups) at N = 8.
        rows = moment_probe(get_model("poly5"), "euler", 2.0, [4, 8],
                            10_000, 0, workers=4)
        assert rows[0].estimate > 1e10
        assert math.isinf(rows[1].estimate)
        assert rows[1].blown_paths > 0

    def test_tamed_milstein_moments_stable(self):
        rows = moment_probe(get_model("poly5"), "tamed-milstein", 4.0,
                            [64, 256], 500, 1, workers=4)
        estimates = [r.estimate for r in rows]
        assert max(estimates) / min(estimates) <= 2.0
        assert all(r.blown_paths == 0 for r in rows)

    def test_validation(self):
        model = get_model("poly5")
        with pytest.raises(ValidationError):
            moment_probe(model, "euler", 0.5, [16], 10, 0)
        with pytest.raises(ValidationError):
            moment_probe(model, "euler", 2.0, [16], 1, 0)


class TestEfficiencyBenchmark:
    def test_infinite_target_met_at_coarsest(self):
        report = efficiency_benchmark(get_model("gbm"),
                                      ["tamed-euler", "tamed-milstein"],
                                      math.inf, [8, 16], 20, 0,
                                      ref_multiplier=4)
        for row in report.rows:
            assert row.met_steps == 8
        assert len(report.tables) == 2

    def test_unreachable_target_reported_unmet(self):
        report = efficiency_benchmark(get_model("gbm"), ["tamed-euler"],
                                      1e-12, [8, 16], 20, 0,
                                      ref_multiplier=4)
        assert report.rows[0].met_steps is None
        assert report.rows[0].rmse is None

    def test_first_meeting_step_recorded(self):
        report = efficiency_benchmark(get_model("gbm"),
                                      ["tamed-milstein"], 0.01,
                                      [16, 32, 64, 128], 200, 42,
                                      ref_multiplier=4, workers=4)
        row = report.rows[0]
        assert row.met_steps == 16
        assert row.rmse < 0.01
        assert row.runtime_ms >= 0.0

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValidationError):
            efficiency_benchmark(get_model("gbm"), ["euler"], 0.0, [8], 10, 0)


class TestDefaults:
    def test_reference_multiplier_default(self):
        assert DEFAULT_REF_MULTIPLIER == 16
