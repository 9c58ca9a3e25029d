"""Tests for model definitions, Milstein coefficients and diagnostics."""

import dataclasses
import math

import numpy as np
import pytest

from taming_sde import (
    SdeModel,
    ValidationError,
    builtin_models,
    check_commutativity,
    gbm_exact_endpoint,
    get_model,
    l_operator,
    probe_assumptions,
    sample_path,
)
from taming_sde.model import _fd_jacobian


def make_additive_model():
    # Constant diffusion: every Milstein coefficient vanishes.
    return SdeModel(
        name="additive",
        state_dim=2,
        noise_dim=2,
        drift=lambda x: -x,
        diffusion_columns=(
            lambda x: np.array([0.3, 0.0]),
            lambda x: np.array([0.0, 0.7]),
        ),
        diffusion_jacobians=(
            lambda x: np.zeros((2, 2)),
            lambda x: np.zeros((2, 2)),
        ),
        initial_state=np.array([1.0, 1.0]),
        horizon=1.0,
    )


class TestSdeModel:
    def test_builtin_catalog(self):
        catalog = builtin_models()
        assert set(catalog) == {"poly5", "gbm", "diag2", "noncomm2"}
        for name, model in catalog.items():
            assert model.name == name
            assert model.initial_state.shape == (model.state_dim,)
            assert len(model.diffusion_columns) == model.noise_dim

    def test_get_model_returns_fresh_instances(self):
        # Cached commutativity verdicts must not leak across lookups.
        assert get_model("poly5") is not get_model("poly5")

    def test_get_model_unknown_name(self):
        with pytest.raises(ValidationError, match="diag2.*gbm.*noncomm2.*poly5"):
            get_model("heston")

    def test_diffusion_matrix_shape(self):
        model = get_model("diag2")
        sig = model.diffusion_matrix(np.array([2.0, 3.0]))
        assert sig.shape == (2, 2)
        assert np.allclose(sig, np.diag([1.0, 1.5]))

    def test_validation_rejects_bad_construction(self):
        with pytest.raises(ValidationError):
            SdeModel(name="bad", state_dim=1, noise_dim=1, drift=lambda x: x,
                     diffusion_columns=(lambda x: x,), diffusion_jacobians=None,
                     initial_state=np.array([1.0, 2.0]), horizon=1.0)
        with pytest.raises(ValidationError):
            SdeModel(name="bad", state_dim=1, noise_dim=1, drift=lambda x: x,
                     diffusion_columns=(lambda x: x,), diffusion_jacobians=None,
                     initial_state=np.array([1.0]), horizon=0.0)
        with pytest.raises(ValidationError):
            SdeModel(name="bad", state_dim=1, noise_dim=2, drift=lambda x: x,
                     diffusion_columns=(lambda x: x,), diffusion_jacobians=None,
                     initial_state=np.array([1.0]), horizon=1.0)
        with pytest.raises(ValidationError):
            SdeModel(name="bad", state_dim=1, noise_dim=1, drift=lambda x: x,
                     diffusion_columns=(lambda x: x,), diffusion_jacobians=None,
                     initial_state=np.array([math.nan]), horizon=1.0)


class TestJacobians:
    def test_analytic_matches_finite_differences(self):
        # Tolerance scales with the column magnitude at the probe point.
        rng = np.random.Generator(np.random.PCG64(5))
        for name in ("poly5", "gbm", "diag2", "noncomm2"):
            model = get_model(name)
            for _ in range(25):
                x = rng.uniform(-2.0, 2.0, size=model.state_dim)
                for i in range(model.noise_dim):
                    analytic = model.diffusion_jacobian(i, x)
                    numeric = _fd_jacobian(model.diffusion_columns[i], x,
                                           model.state_dim)
                    col_norm = float(np.linalg.norm(model.diffusion_columns[i](x)))
                    tol = 1e-6 * (1.0 + col_norm)
                    assert np.max(np.abs(analytic - numeric)) <= tol, (name, i, x)

    def test_fd_fallback_used_when_jacobians_missing(self):
        model = get_model("gbm")
        stripped = dataclasses.replace(model, diffusion_jacobians=None)
        x = np.array([1.7])
        assert np.allclose(stripped.diffusion_jacobian(0, x),
                           model.diffusion_jacobian(0, x), atol=1e-7)


class TestLOperator:
    def test_gbm_hand_value(self):
        # sigma(x) = 0.5 x gives L sigma = 0.25 x; at x = 2 that is 0.5.
        model = get_model("gbm")
        coeffs = l_operator(model, np.array([2.0]))
        assert coeffs.shape == (1, 1, 1)
        assert np.isclose(coeffs[0, 0, 0], 0.5, rtol=1e-14)

    def test_poly5_hand_value(self):
        model = get_model("poly5")
        coeffs = l_operator(model, np.array([1.0]))
        assert np.isclose(coeffs[0, 0, 0], 1.0, rtol=1e-14)

    def test_additive_model_vanishes(self):
        coeffs = l_operator(make_additive_model(), np.array([0.4, -1.2]))
        assert np.array_equal(coeffs, np.zeros((2, 2, 2)))

    def test_noncomm2_hand_values(self):
        # sigma_1 = (x2, 0), sigma_2 = (0, x1): the two cross coefficients
        # disagree, (0, x2) against (x1, 0).
        model = get_model("noncomm2")
        coeffs = l_operator(model, np.array([1.0, 2.0]))
        assert np.allclose(coeffs[0, 1], np.array([0.0, 2.0]))
        assert np.allclose(coeffs[1, 0], np.array([1.0, 0.0]))

    def test_matches_finite_difference_route(self):
        rng = np.random.Generator(np.random.PCG64(17))
        for name in ("poly5", "gbm", "diag2", "noncomm2"):
            model = get_model(name)
            stripped = dataclasses.replace(model, diffusion_jacobians=None)
            for _ in range(100):
                x = rng.uniform(-2.0, 2.0, size=model.state_dim)
                gap = np.max(np.abs(l_operator(model, x) - l_operator(stripped, x)))
                assert gap <= 1e-6 * (1.0 + float(np.dot(x, x))), (name, x)

    def test_rejects_nonfinite_state(self):
        with pytest.raises(ValidationError):
            l_operator(get_model("poly5"), np.array([math.inf]))


class TestCommutativity:
    def test_single_noise_trivially_commutative(self):
        for name in ("poly5", "gbm"):
            verdict = check_commutativity(get_model(name))
            assert verdict.commutative
            assert verdict.max_violation == 0.0
            assert verdict.worst_point is None

    def test_diag2_commutative(self):
        verdict = check_commutativity(get_model("diag2"))
        assert verdict.commutative
        assert verdict.max_violation <= 1e-12

    def test_noncomm2_rejected_with_violation(self):
        verdict = check_commutativity(get_model("noncomm2"))
        assert not verdict.commutative
        assert verdict.max_violation >= 0.5

    def test_noncomm2_violation_at_pinned_probe(self):
        verdict = check_commutativity(get_model("noncomm2"),
                                      probes=[np.array([1.0, 2.0])])
        assert not verdict.commutative
        assert np.isclose(verdict.max_violation, 2.0, rtol=1e-14)
        assert np.array_equal(verdict.worst_point, np.array([1.0, 2.0]))

    def test_rejects_bad_arguments(self):
        model = get_model("diag2")
        with pytest.raises(ValidationError):
            check_commutativity(model, tol=0.0)
        with pytest.raises(ValidationError):
            check_commutativity(model, probes=[])


class TestProbeAssumptions:
    def test_linear_drift_one_sided_constant_exact(self):
        model = SdeModel(
            name="ou", state_dim=2, noise_dim=1,
            drift=lambda x: -x,
            diffusion_columns=(lambda x: np.array([0.1, 0.1]),),
            diffusion_jacobians=(lambda x: np.zeros((2, 2)),),
            initial_state=np.zeros(2), horizon=1.0,
        )
        report = probe_assumptions(model, sample_count=64, seed=3)
        # <x - y, -(x - y)> / ||x - y||^2 is -1 in exact arithmetic and the
        # quotient divides a number by itself, so equality is exact.
        assert report.one_sided_lipschitz_estimate == -1.0

    def test_identity_diffusion_lipschitz_one(self):
        model = SdeModel(
            name="lin", state_dim=1, noise_dim=1,
            drift=lambda x: -x,
            diffusion_columns=(lambda x: x,),
            diffusion_jacobians=(lambda x: np.ones((1, 1)),),
            initial_state=np.array([1.0]), horizon=1.0,
        )
        report = probe_assumptions(model, sample_count=64, seed=3)
        assert abs(report.diffusion_lipschitz_estimate - 1.0) <= 1e-9
        assert abs(report.l_coefficient_lipschitz_estimate - 1.0) <= 1e-9

    def test_poly5_dissipative(self):
        report = probe_assumptions(get_model("poly5"), sample_count=256,
                                   box_radius=2.0, seed=0)
        assert report.one_sided_lipschitz_estimate <= 0.0

    def test_estimates_finite_and_nonnegative(self):
        # The one-sided constant may be negative; the two Lipschitz ratios
        # cannot be.
        for name in ("poly5", "gbm", "diag2", "noncomm2"):
            report = probe_assumptions(get_model(name), sample_count=128, seed=1)
            assert math.isfinite(report.one_sided_lipschitz_estimate)
            assert math.isfinite(report.diffusion_lipschitz_estimate)
            assert math.isfinite(report.l_coefficient_lipschitz_estimate)
            assert report.diffusion_lipschitz_estimate >= 0.0
            assert report.l_coefficient_lipschitz_estimate >= 0.0
            assert report.probe_count == 128

    def test_lipschitz_estimates_monotone_in_box_radius(self):
        # Same seed means nested samples, so widening the box can only
        # raise the maxima of the Lipschitz quotients.
        model = get_model("diag2")
        previous_diffusion = 0.0
        previous_l = 0.0
        for radius in (1.0, 2.0, 4.0):
            report = probe_assumptions(model, sample_count=256,
                                       box_radius=radius, seed=11)
            assert report.diffusion_lipschitz_estimate >= previous_diffusion
            assert report.l_coefficient_lipschitz_estimate >= previous_l
            previous_diffusion = report.diffusion_lipschitz_estimate
            previous_l = report.l_coefficient_lipschitz_estimate

    def test_rejects_bad_arguments(self):
        model = get_model("poly5")
        with pytest.raises(ValidationError):
            probe_assumptions(model, sample_count=1)
        with pytest.raises(ValidationError):
            probe_assumptions(model, box_radius=0.0)


class TestGbmExactEndpoint:
    def test_drift_cancels_ito_correction(self):
        # a = b^2/2 and W_T = 0 leave the exponent exactly zero.
        assert gbm_exact_endpoint(0.125, 0.5, 2.0, 1.0, 0.0) == 2.0

    def test_zero_noise_reduces_to_exponential_growth(self):
        value = gbm_exact_endpoint(0.3, 0.0, 1.5, 2.0, 0.7)
        assert np.isclose(value, 1.5 * math.exp(0.6), rtol=1e-15)

    def test_pure_noise_value(self):
        value = gbm_exact_endpoint(0.0, 1.0, 1.0, 1.0, 1.0)
        assert np.isclose(value, math.exp(0.5), rtol=1e-15)

    def test_rejects_nonpositive_start(self):
        with pytest.raises(ValidationError):
            gbm_exact_endpoint(0.0, 1.0, 0.0, 1.0, 0.0)

    def test_builtin_oracle_consistent(self):
        model = get_model("gbm")
        grid = sample_path(0, 0, 64, 1, 1.0)
        w_t = float(grid.total_increment()[0])
        expected = gbm_exact_endpoint(-0.5, 0.5, 1.0, 1.0, w_t)
        assert np.isclose(model.exact_endpoint(grid)[0], expected, rtol=1e-15)
