"""Shifted solves, energy-norm resolvent estimates, sweeps and growth fits"""

import math

import numpy as np
import pytest

from conftest import kv_generator
from modules.errors import FitError, ParameterError, SingularSystemError
from modules.geometry import Domain, build_grid, preset_config
from modules.operators import SystemState, apply_generator, assemble_generator, random_state
from modules.resolvent import (LambdaSchedule, ResolventSweep, ShiftedSystem, dense_resolvent_norm,
                               fit_growth_exponent, predicted_exponent, resolution_limit,
                               resolvent_norm, resolvent_solve, sweep, theorem_target)
from modules.spectral import dirichlet_modes, discrete_modes


def _synthetic_sweep(lambdas, norms, nyquist=math.inf):
    lambdas = np.asarray(lambdas, dtype=float)
    n = lambdas.size
    return ResolventSweep(lambdas, np.asarray(norms, dtype=float), np.zeros(n), lambdas > nyquist,
                          np.zeros(n), nyquist)


# ====================================================================
# Shifted solves
# ====================================================================


class TestResolventSolve:

    def test_residual(self, damped_2d, rng):
        gen = damped_2d
        F = random_state(gen, rng, complex_valued=True)
        lam = 7.3
        U = resolvent_solve(gen, lam, F)
        residual = 1j * lam * U.data - gen.matrix @ U.data - F.data
        assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(F.data)

    def test_zero_right_hand_side(self, damped_1d):
        U = resolvent_solve(damped_1d, 3.0, damped_1d.zero_state())
        assert np.all(U.data == 0)

    def test_zero_frequency_inverts_generator(self, damped_1d, rng):
        F = random_state(damped_1d, rng)
        U = resolvent_solve(damped_1d, 0.0, F)
        AU = apply_generator(damped_1d, SystemState(U.data.real, F.n_blocks))
        np.testing.assert_allclose(AU.data, -F.data, rtol=1e-9, atol=1e-9 * np.abs(F.data).max())
        assert np.abs(U.data.imag).max() <= 1e-10 * np.abs(U.data).max()

    def test_adjoint_solve(self, damped_2d, rng):
        system = ShiftedSystem(damped_2d, 4.0)
        f = rng.standard_normal(damped_2d.dimension) + 1j * rng.standard_normal(damped_2d.dimension)
        x = system.solve_adjoint(f)
        shifted = 1j * 4.0 * np.eye(damped_2d.dimension) - damped_2d.matrix.toarray()
        np.testing.assert_allclose(shifted.conj().T @ x, f, rtol=1e-9, atol=1e-9 * np.abs(f).max())

    def test_singular_at_grid_frequency(self, rng):
        gen = kv_generator(n=20, b=0.0, c=0.0)
        mu = discrete_modes(gen.grid).mus[2]
        with pytest.raises(SingularSystemError):
            resolvent_solve(gen, mu, random_state(gen, rng))

    def test_rejects_non_finite_frequency(self, damped_1d):
        with pytest.raises(ParameterError):
            resolvent_solve(damped_1d, math.inf, damped_1d.zero_state())


# ====================================================================
# Norm estimates
# ====================================================================


class TestResolventNorm:

    def test_normal_case_is_reciprocal_distance(self, conservative_1d):
        gen = conservative_1d
        mus = discrete_modes(gen.grid).mus
        lam = 0.3 * mus[3] + 0.7 * mus[4]
        estimate = resolvent_norm(gen, lam)
        expected = 1.0 / np.min(np.abs(lam - mus))
        assert estimate.converged
        assert estimate.norm == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("lam", [0.5, 6.0, 15.0])
    def test_matches_dense_oracle(self, damped_2d, lam):
        estimate = resolvent_norm(damped_2d, lam, tol=1e-10)
        oracle = dense_resolvent_norm(damped_2d, lam)
        assert estimate.norm == pytest.approx(oracle, rel=1e-6)
        assert estimate.solve_residual <= 1e-10

    def test_oracle_with_localized_coefficients(self):
        grid = build_grid(Domain.square(1.0), 6)
        b, c = preset_config('H4', grid, {'eps': [0.1, 0.3, 0.5, 0.7]})
        gen = assemble_generator(grid, 1.0, b, c)
        estimate = resolvent_norm(gen, 12.0, tol=1e-10)
        assert estimate.norm == pytest.approx(dense_resolvent_norm(gen, 12.0), rel=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_configurations_match_dense_oracle(self, seed):
        draw = np.random.default_rng(seed)
        square = bool(draw.integers(2))
        n = int(draw.integers(4, 9)) if square else int(draw.integers(8, 41))
        a, b, c = draw.uniform(0.5, 2.0), draw.uniform(0.2, 2.0), draw.uniform(0.5, 2.0)
        lam = draw.uniform(0.1, 20.0)
        gen = kv_generator(n=n, a=a, b=b, c=c, L=1.0, square=square)
        estimate = resolvent_norm(gen, lam, tol=1e-10)
        oracle = dense_resolvent_norm(gen, lam)
        assert estimate.norm == pytest.approx(oracle, rel=1e-5), \
            f"n={n} square={square} a={a:.3f} b={b:.3f} c={c:.3f} lam={lam:.3f}"

    def test_unconverged_estimate_is_flagged(self, damped_2d):
        estimate = resolvent_norm(damped_2d, 6.0, tol=1e-15, max_iter=2)
        assert not estimate.converged
        assert estimate.iterations == 2

    def test_dense_oracle_size_limit(self):
        gen = kv_generator(n=501, L=1.0)
        with pytest.raises(ParameterError):
            dense_resolvent_norm(gen, 1.0)


# ====================================================================
# Sweeps and fits
# ====================================================================


class TestSweep:

    def test_at_modes_uses_grid_frequencies(self, damped_1d):
        modes = dirichlet_modes(damped_1d.grid.domain, 8)
        on_grid = LambdaSchedule.at_modes(modes).lambdas(damped_1d)
        np.testing.assert_allclose(on_grid, discrete_modes(damped_1d.grid, 8).mus)
        continuous = LambdaSchedule.at_modes(modes, continuous=True).lambdas(damped_1d)
        np.testing.assert_allclose(continuous, np.arange(1, 9))

    def test_log_uniform(self):
        values = LambdaSchedule.log_uniform(1.0, 100.0, 5).lambdas()
        np.testing.assert_allclose(values, [1, 10 ** 0.5, 10, 10 ** 1.5, 100])
        with pytest.raises(ParameterError):
            LambdaSchedule.log_uniform(10.0, 1.0, 5)

    def test_sweep_flags_unresolved_frequencies(self, tmp_path):
        gen = kv_generator(n=10, L=1.0)
        limit = resolution_limit(gen)
        assert limit == pytest.approx(math.pi / (2 * gen.grid.h))
        result = sweep(gen, LambdaSchedule.log_uniform(1.0, 3 * limit, 6), workers=2)
        assert result.flagged.tolist() == (result.lambdas > limit).tolist()
        assert result.flagged[-1] and not result.flagged[0]
        assert np.all(np.isfinite(result.norms))
        assert result.worst_residual <= 1e-10

        path = tmp_path / 'sweep.csv'
        result.to_csv(str(path))
        with open(path) as f:
            assert f.readline().strip() == 'lambda,norm,residual,flagged'
        table = np.loadtxt(path, delimiter=',', skiprows=1)
        np.testing.assert_array_equal(table[:, 3], result.flagged.astype(int))

    def test_failed_point_does_not_stop_sweep(self):
        gen = kv_generator(n=10, b=0.0, c=0.0, L=1.0)
        modes = dirichlet_modes(gen.grid.domain, 3)
        result = sweep(gen, LambdaSchedule.at_modes(modes), workers=1)
        assert np.all(np.isinf(result.norms))
        assert set(result.errors) == {0, 1, 2}
        assert result.errors[0]['error'] == 'SingularSystemError'
        assert not result.trusted.any()

    def test_parallel_sweep_is_deterministic(self, damped_1d):
        schedule = LambdaSchedule.log_uniform(0.5, 10.0, 6)
        serial = sweep(damped_1d, schedule, workers=1)
        threaded = sweep(damped_1d, schedule, workers=3)
        np.testing.assert_array_equal(serial.norms, threaded.norms)


class TestGrowthFit:

    def test_recovers_quadratic_growth(self):
        lam = np.geomspace(5.0, 500.0, 20)
        fit = fit_growth_exponent(_synthetic_sweep(lam, 0.3 * lam ** 2))
        assert fit.exponent == pytest.approx(2.0, abs=1e-10)
        assert fit.constant == pytest.approx(0.3, rel=1e-10)
        assert fit.implied_decay == pytest.approx(1.0)
        assert fit.stability_class == 'polynomial'

    def test_bounded_resolvent_reads_exponential(self):
        lam = np.geomspace(1.0, 100.0, 12)
        fit = fit_growth_exponent(_synthetic_sweep(lam, np.full(12, 4.0)))
        assert abs(fit.exponent) < 1e-10
        assert fit.stability_class == 'exponential'
        assert fit.to_dict()['implied_decay'] is None

    def test_window_and_flagged_points(self):
        lam = np.geomspace(1.0, 1000.0, 30)
        norms = np.where(lam < 100.0, lam ** 1.5, 1e9)
        fit = fit_growth_exponent(_synthetic_sweep(lam, norms, nyquist=100.0))
        assert fit.exponent == pytest.approx(1.5, abs=1e-10)
        assert fit.window[1] < 100.0
        windowed = fit_growth_exponent(_synthetic_sweep(lam, norms), window=(1.0, 90.0))
        assert windowed.exponent == pytest.approx(1.5, abs=1e-10)

    def test_needs_eight_points(self):
        lam = np.geomspace(1.0, 10.0, 7)
        with pytest.raises(FitError):
            fit_growth_exponent(_synthetic_sweep(lam, lam))
        with pytest.raises(FitError):
            fit_growth_exponent(_synthetic_sweep(np.geomspace(1.0, 10.0, 20), np.ones(20)), window=(5.0, 2.0))


class TestTargets:

    def test_constant_and_localized_exponents(self):
        assert predicted_exponent('constant') == 2.0
        assert predicted_exponent('H4') == pytest.approx(10.0)
        assert predicted_exponent('H5') == pytest.approx(8.0)
        assert theorem_target('H4').decay == pytest.approx(0.2)
        assert theorem_target('H5').decay == pytest.approx(0.25)

    def test_single_wave_targets(self):
        assert predicted_exponent('H4', 'viscous_single') == 2.0
        assert theorem_target('H5', 'viscous_single').decay == pytest.approx(4.0 / 3.0)
        assert theorem_target('H2_sample', 'viscous_single').model == 'exponential'

    def test_no_rate_claims(self):
        assert theorem_target('OneD_bc').exponent is None
        assert theorem_target('custom') is None
        assert predicted_exponent('H4', 'viscous_coupled') is None

    @pytest.mark.parametrize("key", ['constant', 'H1_sample', 'H2_sample'])
    def test_coupled_viscous_targets_are_exponential(self, key):
        target = theorem_target(key, 'viscous_coupled')
        assert target.model == 'exponential'
        assert target.exponent == 0.0 and target.decay is None
        assert theorem_target('constant', 'viscous_single').model == 'exponential'


# ====================================================================
# Acceptance run
# ====================================================================


@pytest.mark.slow
def test_constant_coefficient_growth_is_quadratic():
    gen = kv_generator(n=2000, a=1.0, b=1.0, c=1.0, L=math.pi)
    modes = dirichlet_modes(gen.grid.domain, 60).window(10, 60)
    result = sweep(gen, LambdaSchedule.at_modes(modes))
    fit = fit_growth_exponent(result)
    assert 1.7 <= fit.exponent <= 2.3, f"resolvent exponent {fit.exponent:.3f}"
    assert fit.r_squared > 0.95
    assert 0.87 <= fit.implied_decay <= 1.18
