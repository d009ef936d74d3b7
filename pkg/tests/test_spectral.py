"""Characteristic quartic roots, branch asymptotics and dense generator spectra"""

import numpy as np
import pytest

from conftest import kv_generator
from modules.errors import BranchSelectionError, ParameterError, RootPolishError
from modules.geometry import Domain, build_grid
from modules.spectral import (asymptotic_branch, characteristic_coefficients, characteristic_roots,
                              dirichlet_modes, discrete_frequency, discrete_modes, generator_spectrum,
                              grid_consistent_modes, imaginary_axis_gap, quartic_spectrum, select_branch,
                              spectral_abscissa, spectrum_distance, symbol_residual, verify_asymptotics)


# ====================================================================
# Modes
# ====================================================================


class TestModes:

    def test_interval_modes(self):
        modes = dirichlet_modes(Domain.interval(np.pi), 5)
        np.testing.assert_allclose(modes.mus, [1, 2, 3, 4, 5])
        assert modes.labels[2] == (3,)
        assert [k for k, _, _ in modes.tail(4)] == [4, 5]

    def test_square_modes_with_multiplicity(self):
        modes = dirichlet_modes(Domain.square(np.pi), 6)
        assert modes.labels == ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1))
        np.testing.assert_allclose(modes.mus ** 2, [2, 5, 5, 8, 10, 10])

    def test_window(self):
        modes = dirichlet_modes(Domain.interval(np.pi), 10).window(3, 6)
        np.testing.assert_allclose(modes.mus, [3, 4, 5, 6])

    def test_discrete_frequencies_match_stiffness(self):
        gen = kv_generator(n=12, square=True, L=1.0)
        values = np.sort(np.linalg.eigvalsh(gen.K.toarray()))
        np.testing.assert_allclose(discrete_modes(gen.grid).mus ** 2, values, rtol=1e-10)

    def test_grid_consistent_modes_keep_labels(self):
        grid = build_grid(Domain.interval(np.pi), 50)
        modes = dirichlet_modes(grid.domain, 10)
        on_grid = grid_consistent_modes(grid, modes)
        assert on_grid.labels == modes.labels and on_grid.discrete
        assert np.all(on_grid.mus < modes.mus)
        np.testing.assert_allclose(on_grid.mus, modes.mus, rtol=2e-2)

    def test_unresolved_mode(self):
        grid = build_grid(Domain.interval(1.0), 4)
        with pytest.raises(ParameterError):
            discrete_frequency(grid, (5,))
        with pytest.raises(ParameterError):
            dirichlet_modes(grid.domain, 0)


# ====================================================================
# Characteristic quartic
# ====================================================================


class TestQuartic:

    def test_uncoupled_factorization(self):
        # c = 0: P = (lam^2 + b mu^2 lam + a mu^2)(lam^2 + mu^2)
        a, b, mu = 2.0, 0.5, 3.0
        roots = characteristic_roots(a, b, 0.0, mu).roots
        expected = np.concatenate([np.roots([1.0, b * mu ** 2, a * mu ** 2]), [1j * mu, -1j * mu]])
        assert spectrum_distance(roots, expected) < 1e-9 * mu

    def test_uncoupled_factorization_random(self, rng):
        for _ in range(50):
            a, b, mu = rng.uniform(0.5, 3.0), rng.uniform(0.1, 2.0), rng.uniform(0.5, 10.0)
            roots = characteristic_roots(a, b, 0.0, mu).roots
            expected = np.concatenate([np.roots([1.0, b * mu ** 2, a * mu ** 2]), [1j * mu, -1j * mu]])
            assert spectrum_distance(roots, expected) <= 1e-10, f"a={a:.3f} b={b:.3f} mu={mu:.3f}"

    def test_unit_coefficients_at_pi(self):
        # a = b = c = 1, mu = pi: P factors as (lam^2 + s lam + pi^2)(lam^2 + (pi^2 - s) lam + pi^2)
        P = np.pi ** 2
        np.testing.assert_allclose(characteristic_coefficients(1.0, 1.0, 1.0, np.pi),
                                   [1.0, P, 2.0 * P + 1.0, P ** 2, P ** 2], rtol=1e-15)
        s = (P - np.sqrt(P ** 2 - 4.0)) / 2.0
        u = P - s
        pair = complex(-s / 2.0, np.sqrt(P - s * s / 4.0))
        expected = np.array([pair, pair.conjugate(),
                             (-u + np.sqrt(u * u - 4.0 * P)) / 2.0, (-u - np.sqrt(u * u - 4.0 * P)) / 2.0])
        roots = characteristic_roots(1.0, 1.0, 1.0, np.pi).roots
        assert spectrum_distance(roots, expected) <= 1e-10 * P
        upper = roots[roots.imag > 0][0]
        assert abs(upper) == pytest.approx(np.pi, rel=1e-12)
        assert upper.real == pytest.approx(-0.05119163, abs=1e-6)
        assert upper.imag == pytest.approx(3.14117555, abs=1e-6)
        real_roots = np.sort(roots[np.abs(roots.imag) < 1e-12].real)
        np.testing.assert_allclose(real_roots, [-8.62260078, -1.14462036], atol=1e-6)

    def test_coupled_roots_stay_left_of_axis(self, rng):
        for _ in range(200):
            a, b, c = rng.uniform(0.2, 4.0), rng.uniform(0.05, 3.0), rng.uniform(0.05, 3.0)
            mu = 10.0 ** rng.uniform(-1.0, 2.5)
            roots = characteristic_roots(a, b, c, mu).roots
            assert roots.real.max() < 0, f"a={a:.3f} b={b:.3f} c={c:.3f} mu={mu:.3f}"

    def test_right_half_plane_root_is_rejected(self, monkeypatch):
        monkeypatch.setattr('modules.spectral._newton_polish',
                            lambda coefficients, r, steps: complex(abs(r.real), r.imag))
        monkeypatch.setattr('modules.spectral._residual_and_scale', lambda coefficients, r: (0.0, 1.0))
        with pytest.raises(RootPolishError, match="right half plane") as info:
            characteristic_roots(1.0, 1.0, 1.0, 2.0)
        assert info.value.context['max_re'] > 0

    @pytest.mark.parametrize("mu", [1.0, 7.5, 120.0, 5e3, 1e5])
    def test_residuals_and_vieta(self, mu):
        result = characteristic_roots(1.0, 1.0, 1.0, mu)
        assert result.max_relative_residual() <= 1e-9
        err_sum, err_prod = result.vieta_errors()
        assert err_sum < 1e-8 and err_prod < 1e-8
        assert result.rescaled == (mu > 1e3)
        for r in result.roots:
            scale = np.abs(characteristic_coefficients(1.0, 1.0, 1.0, mu)) * abs(r) ** np.arange(4, -1, -1)
            assert abs(symbol_residual(1.0, 1.0, 1.0, mu, r)) <= 1e-8 * scale.max()

    def test_roots_in_left_half_plane(self):
        roots = quartic_spectrum(1.0, 1.0, 1.0, np.arange(1.0, 40.0))
        assert roots.size == 4 * 39
        assert roots.real.max() < 0

    def test_parameter_preconditions(self):
        with pytest.raises(ParameterError):
            characteristic_roots(1.0, 0.0, 1.0, 2.0)
        with pytest.raises(ParameterError):
            characteristic_roots(-1.0, 1.0, 1.0, 2.0)
        with pytest.raises(ParameterError):
            characteristic_roots(1.0, 1.0, 1.0, 0.0)

    def test_branch_selection(self):
        mu = 50.0
        branch = select_branch(characteristic_roots(1.0, 1.0, 1.0, mu).roots, mu)
        asym, conj = asymptotic_branch(1.0, 1.0, 1.0, mu)
        assert conj == asym.conjugate()
        assert abs(branch - asym) / mu < 1e-3
        assert branch.real * mu ** 2 == pytest.approx(-0.5, rel=1e-2)

    def test_branch_selection_failures(self):
        with pytest.raises(BranchSelectionError):
            select_branch(np.array([-1.0 + 0j, -2.0 - 1j]), 1.0)
        with pytest.raises(BranchSelectionError):
            select_branch(np.array([0.1 + 1j, -0.1 + 1j]), 1.0)

    def test_rescaled_branch_keeps_small_real_part(self):
        mu = 1e4
        branch = select_branch(characteristic_roots(1.0, 1.0, 1.0, mu).roots, mu)
        assert branch.real * mu ** 2 == pytest.approx(-0.5, rel=1e-2)


# ====================================================================
# Asymptotic report
# ====================================================================


class TestAsymptotics:

    @pytest.fixture(scope='class')
    def report(self):
        modes = dirichlet_modes(Domain.interval(np.pi), 120)
        return verify_asymptotics(1.0, 1.0, 1.0, modes, k_min=20)

    def test_tail_gap_below_two_percent(self, report):
        assert report.target == pytest.approx(0.5)
        assert report.max_gap(100, 120) < 0.02
        assert report.gap_non_increasing()
        assert report.gap_non_increasing(1e-9)
        assert report.re_vanishing()

    def test_no_uniform_rate(self, report):
        windows = [report.window_max_abs_re(k, k + 20) for k in (20, 40, 80)]
        assert windows[0] > windows[1] > windows[2]
        # max |Re| over [k, k+20] scales like mu_k^-2
        ratio = windows[1] / windows[0]
        assert ratio == pytest.approx((20 / 40) ** 2, rel=0.2)

    def test_csv_and_summary(self, report, tmp_path):
        path = tmp_path / 'spectrum.csv'
        report.to_csv(str(path))
        table = np.loadtxt(path, delimiter=',', skiprows=1)
        assert table.shape == (101, 8)
        np.testing.assert_array_equal(table[:, 0], np.arange(20, 121))
        summary = report.summary()
        assert summary['k_min'] == 20 and summary['k_max'] == 120
        assert summary['tail_window'] == [100, 120]

    def test_parallel_matches_serial(self):
        modes = dirichlet_modes(Domain.interval(np.pi), 40)
        serial = verify_asymptotics(2.0, 0.5, 1.5, modes, k_min=5)
        threaded = verify_asymptotics(2.0, 0.5, 1.5, modes, k_min=5, workers=4)
        assert [r.exact for r in serial.records] == [r.exact for r in threaded.records]

    def test_empty_tail(self):
        with pytest.raises(ParameterError):
            verify_asymptotics(1.0, 1.0, 1.0, dirichlet_modes(Domain.interval(1.0), 10), k_min=11)


# ====================================================================
# Generator spectra
# ====================================================================


class TestGeneratorSpectrum:

    def test_dense_matches_per_mode_quartics(self):
        gen = kv_generator(n=20, a=2.0, b=0.5, c=1.5, L=1.0)
        dense = generator_spectrum(gen)
        per_mode = quartic_spectrum(2.0, 0.5, 1.5, discrete_modes(gen.grid).mus)
        relative = spectrum_distance(dense, per_mode) / np.abs(dense).max()
        assert relative < 1e-8, f"dense and per-mode spectra differ by {relative:.2e}"

    def test_square_cross_validation(self):
        gen = kv_generator(n=5, a=1.0, b=1.0, c=1.0, L=1.0, square=True)
        dense = generator_spectrum(gen)
        per_mode = quartic_spectrum(1.0, 1.0, 1.0, discrete_modes(gen.grid).mus)
        assert spectrum_distance(dense, per_mode) / np.abs(dense).max() < 1e-8

    def test_conservative_spectrum_on_axis(self, conservative_1d):
        values = generator_spectrum(conservative_1d)
        assert np.abs(values.real).max() < 1e-8 * np.abs(values).max()
        assert imaginary_axis_gap(conservative_1d) < 1e-8 * np.abs(values).max()

    @pytest.mark.parametrize("a", [1.0, 2.0])
    def test_conservative_frequencies(self, a):
        gen = kv_generator(n=20, a=a, b=0.0, c=0.0, L=1.0)
        mus = discrete_modes(gen.grid).mus
        expected = np.sort(np.concatenate([np.sqrt(a) * mus, -np.sqrt(a) * mus, mus, -mus]))
        values = generator_spectrum(gen)
        np.testing.assert_allclose(np.sort(values.imag), expected, rtol=0, atol=1e-9 * expected.max())

    def test_damped_abscissa_negative(self, damped_1d):
        s = spectral_abscissa(damped_1d)
        assert s < 0
        assert imaginary_axis_gap(damped_1d) == pytest.approx(-s)

    def test_dense_limit(self, damped_1d):
        with pytest.raises(ParameterError):
            generator_spectrum(damped_1d, max_block=10)

    def test_distance_needs_equal_sizes(self):
        with pytest.raises(ParameterError):
            spectrum_distance(np.zeros(3), np.zeros(4))
