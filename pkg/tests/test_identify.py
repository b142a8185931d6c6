import numpy as np
import pytest

from moe_congestion.core import GameParams, softmax
from moe_congestion.equilibrium import solve_single
from moe_congestion.errors import DegenerateQualityError, InvalidInputError
from moe_congestion.identify import (
    BoundaryFlag,
    FitResult,
    decompose,
    fit_gamma,
    rescale_to_spread,
    residual,
    synthetic_recovery,
)


class TestResidual:
    def test_zero_at_softmax_with_gamma_zero(self):
        q = np.array([1.0, -0.5, 0.3])
        mu = softmax(q)
        assert residual(0.0, mu, q) <= 1e-15

    def test_large_gamma_limit(self):
        # R(gamma) -> 2 (1 - mu_min) as gamma -> inf: mass piles onto the
        # observed argmin, so the limit approaches 2 unless the load
        # already concentrates there
        rng = np.random.default_rng(0)
        q = rescale_to_spread(rng.standard_normal(8), 2.0)
        mu = solve_single(q, GameParams(gamma=3.0, lam=1.0, m=8)).mu
        limit = 2.0 * (1.0 - mu.weights.min())
        assert residual(1e6, mu, q) == pytest.approx(limit, abs=1e-6)
        spiky = np.array([0.9989, 0.0001] + [0.001] * 10)
        q2 = rescale_to_spread(rng.standard_normal(12), 2.0)
        assert residual(1e9, spiky / spiky.sum(), q2) > 1.99

    def test_synthetic_equilibrium_residual_at_truth(self):
        rng = np.random.default_rng(1)
        q = rescale_to_spread(rng.standard_normal(16), 2.5)
        mu = solve_single(q, GameParams(gamma=10.0, lam=1.0, m=16), tol=1e-12).mu
        assert residual(10.0, mu, q) <= 1e-10

    def test_rejects_boundary_load(self):
        with pytest.raises(InvalidInputError):
            residual(1.0, [1.0, 0.0], [1.0, 0.0])


class TestFitGamma:
    def test_softmax_load_fits_zero(self):
        q = np.array([0.8, -0.3, 0.1, -0.6])
        fit = fit_gamma(softmax(q), q)
        assert fit.gamma_eff <= 1e-3
        assert fit.residual <= 1e-9
        assert fit.boundary_flag is BoundaryFlag.AT_ZERO

    def test_self_consistency_at_ten(self):
        rng = np.random.default_rng(2)
        q = rescale_to_spread(rng.standard_normal(32), 2.5)
        mu = solve_single(q, GameParams(gamma=10.0, lam=1.0, m=32)).mu
        fit = fit_gamma(mu, q)
        assert fit.gamma_eff == pytest.approx(10.0, rel=0.01)

    def test_noiseless_range_within_one_percent(self):
        rng = np.random.default_rng(3)
        for gamma in [0.5, 2.0, 17.0, 60.0, 100.0]:
            m = int(rng.choice([4, 8, 64]))
            q = rescale_to_spread(rng.standard_normal(m), 2.0)
            mu = solve_single(q, GameParams(gamma=gamma, lam=1.0, m=m)).mu
            fit = fit_gamma(mu, q)
            assert abs(fit.gamma_eff - gamma) / gamma <= 0.01

    def test_constant_quality_rejected(self):
        with pytest.raises(DegenerateQualityError):
            fit_gamma([0.25] * 4, [1.0] * 4)

    def test_at_max_flag(self):
        rng = np.random.default_rng(4)
        q = rescale_to_spread(rng.standard_normal(8), 2.0)
        mu = solve_single(q, GameParams(gamma=10.0, lam=1.0, m=8)).mu
        fit = fit_gamma(mu, q, gamma_max=2.0)
        assert fit.boundary_flag is BoundaryFlag.AT_MAX

    def test_unimodality_on_grid_for_equilibrium_loads(self):
        # unimodality holds on loads from the model class (equilibria);
        # arbitrary interior loads can carry ~1e-4-deep secondary minima,
        # which is why the fitter pre-scans before golden section
        rng = np.random.default_rng(5)
        for _ in range(8):
            m = int(rng.choice([4, 16]))
            q = rescale_to_spread(rng.standard_normal(m), 2.0)
            gamma_true = float(rng.uniform(0.5, 60.0))
            mu = solve_single(q, GameParams(gamma=gamma_true, lam=1.0, m=m)).mu
            grid = np.linspace(0.0, 100.0, 200)
            values = np.array([residual(g, mu, q) for g in grid])
            diffs = np.diff(values)
            signs = np.sign(diffs[np.abs(diffs) > 1e-9])
            # descending then ascending: signs never go +1 -> -1
            assert np.all(np.diff(signs) >= 0)

    def test_continuity_regression(self):
        rng = np.random.default_rng(6)
        q = rescale_to_spread(rng.standard_normal(8), 2.0)
        mu = solve_single(q, GameParams(gamma=5.0, lam=1.0, m=8)).mu.weights
        base = fit_gamma(mu, q).gamma_eff
        bump = np.zeros(8)
        bump[0], bump[1] = 5e-5, -5e-5
        shifted = fit_gamma(mu + bump, q).gamma_eff
        assert abs(shifted - base) < 0.5

    def test_decomposition_attached(self):
        rng = np.random.default_rng(7)
        q = rescale_to_spread(rng.standard_normal(64), 2.5)
        mu = solve_single(q, GameParams(gamma=8.0, lam=1.0, m=64)).mu
        fit = fit_gamma(mu, q, alpha=0.01)
        assert fit.gamma_explicit == pytest.approx(0.64)
        assert fit.gamma_explicit + fit.gamma_implicit == fit.gamma_eff

    def test_scope_property(self):
        fit = FitResult(gamma_eff=0.04, residual=0.1, gamma_explicit=0.0,
                        gamma_implicit=0.04)
        assert not fit.in_scope
        fit = FitResult(gamma_eff=0.06, residual=0.1, gamma_explicit=0.0,
                        gamma_implicit=0.06)
        assert fit.in_scope


class TestDecompose:
    def test_converged_olmoe_fixture(self):
        explicit, implicit = decompose(8.5, alpha=0.01, m=64)
        assert explicit == pytest.approx(0.64)
        assert implicit == pytest.approx(7.86)

    def test_alpha_zero(self):
        assert decompose(3.0, 0.0, 16) == (0.0, 3.0)

    def test_peak_ratio_fixture(self):
        explicit, implicit = decompose(36.0, alpha=0.01, m=64)
        assert explicit == pytest.approx(0.64)
        assert implicit == pytest.approx(35.36)
        assert 36.0 / explicit == pytest.approx(56.25, abs=0.01)

    def test_negative_implicit_reported(self):
        explicit, implicit = decompose(0.3, alpha=0.01, m=64)
        assert implicit < 0.0

    def test_invalid_alpha(self):
        with pytest.raises(InvalidInputError):
            decompose(1.0, -0.1, 8)


class TestRescaleToSpread:
    def test_exact_spread(self):
        q = rescale_to_spread(np.array([3.0, -1.0, 0.5]), 2.5)
        assert q.max() - q.min() == pytest.approx(2.5, abs=1e-12)

    def test_constant_rejected(self):
        with pytest.raises(InvalidInputError):
            rescale_to_spread(np.ones(4), 1.0)


class TestSyntheticRecovery:
    def test_noiseless_near_perfect(self):
        report = synthetic_recovery([5.0, 20.0], sigma_q=0.0, trials=3, m=16, seed=0)
        assert report.median_error < 0.01
        assert report.failures == 0

    def test_deterministic(self):
        a = synthetic_recovery([5.0], sigma_q=0.1, trials=4, m=8, seed=9)
        b = synthetic_recovery([5.0], sigma_q=0.1, trials=4, m=8, seed=9)
        assert [t.recovered_gamma for t in a.trials] == [t.recovered_gamma for t in b.trials]

    def test_sampled_load_mode(self):
        report = synthetic_recovery([10.0], sigma_q=0.0, trials=3, m=8, seed=1,
                                    load_tokens=400, load_k=4)
        # finite-sample load measurement alone produces visible error
        assert 0.0 < report.median_error < 0.5

    def test_table_serialization(self):
        report = synthetic_recovery([5.0], sigma_q=0.1, trials=2, m=8, seed=0)
        table = report.to_table()
        lines = table.strip().split("\n")
        assert lines[0] == "true_gamma\trecovered_gamma\trel_error"
        assert len(lines) == 3

    def test_rejects_bad_args(self):
        with pytest.raises(InvalidInputError):
            synthetic_recovery([5.0], sigma_q=0.1, trials=0, m=8)
        with pytest.raises(InvalidInputError):
            synthetic_recovery([0.0], sigma_q=0.1, trials=1, m=8)
