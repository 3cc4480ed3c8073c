import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import GridIncompatibilityError, PSDViolationError
from lab.services.lrd_model import (
    CovarianceTable,
    IsotropicFactor,
    LatticeDims,
    LongRangeParams,
    SlowVarying,
    SmoothFactor,
    SpectralDensityModel,
)
from lab.services.quadrature import CellGrid
from lab.services.spectral_measure import (
    HOMOGENEITY_SCALES,
    Bump,
    LimitSpectralModel,
    MatrixSpectralMeasureOnGrid,
    covariance_from_measure,
    density_measure,
    homogeneity_residual,
    limit_cell_mass,
    limit_grid_measure,
    mu_N_fourier,
    mu_N_tail_mass,
    mu_N_total,
    phi_N_lattice,
    quadratic_form_measures,
    rescale_measure,
    test_function_integral as integrate_against,
)
from lab.services.wiener_ito import KernelSpec


def scalar_model(alpha=0.4, k=2, nu=1):
    return SpectralDensityModel(LatticeDims(nu, 1), LongRangeParams(alpha, k), IsotropicFactor(np.eye(1)),
                                SmoothFactor(kind="bump"))


class GridMeasureTests(SimpleTestCase):
    def test_negative_mass_rejected(self):
        grid = CellGrid.uniform(1.0, 2)
        with self.assertRaises(PSDViolationError):
            MatrixSpectralMeasureOnGrid(grid, np.array([[[1.0]], [[-1.0]]], dtype=complex)).validate()

    def test_uneven_measure_rejected(self):
        grid = CellGrid.uniform(1.0, 2)
        with self.assertRaises(PSDViolationError):
            MatrixSpectralMeasureOnGrid(grid, np.array([[[1.0]], [[2.0]]], dtype=complex)).validate()

    def test_cross_entries_need_cauchy_schwarz(self):
        grid = CellGrid.uniform(1.0, 2)
        mass = np.array([[[1.0, 1.5], [1.5, 1.0]]] * 2, dtype=complex)
        with self.assertRaises(PSDViolationError):
            MatrixSpectralMeasureOnGrid(grid, mass).validate()

    def test_mass_of_partial_cells(self):
        grid = CellGrid.uniform(2.0, 4)
        G = MatrixSpectralMeasureOnGrid(grid, np.ones((4, 1, 1), dtype=complex))
        self.assertAlmostEqual(G.mass_of([-0.5], [1.0])[0, 0].real, 1.5)

    def test_flat_measure_gives_white_noise(self):
        grid = CellGrid.torus(32)
        G = MatrixSpectralMeasureOnGrid.from_density(grid, lambda x: np.full((x.shape[0], 1, 1), 1.0 / (2 * np.pi)))
        table = covariance_from_measure(G.validate(), 3)
        np.testing.assert_allclose(table.r[0, 0], [0, 0, 0, 1, 0, 0, 0], atol=1e-12)


class RescalingTests(SimpleTestCase):
    def test_total_mass_scales_with_n_alpha(self):
        alpha = 0.4
        G = density_measure(scalar_model(alpha), CellGrid.torus(64))
        G_N = rescale_measure(G, 16, SlowVarying(), alpha)
        np.testing.assert_allclose(G_N.total(), 16 ** alpha * G.total())
        np.testing.assert_allclose(G_N.grid.half_widths, [16 * np.pi])

    def test_log_factor_divides(self):
        alpha = 0.4
        G = density_measure(scalar_model(alpha), CellGrid.torus(16))
        plain = rescale_measure(G, 100, SlowVarying(), alpha).total()
        logged = rescale_measure(G, 100, SlowVarying("log"), alpha).total()
        np.testing.assert_allclose(logged * np.log(100.0), plain)

    def test_aggregation_onto_coarser_grid(self):
        alpha = 0.4
        G = density_measure(scalar_model(alpha), CellGrid.torus(8))
        target = CellGrid.uniform(2 * np.pi, 4)
        coarse = rescale_measure(G, 2, SlowVarying(), alpha, target=target)
        fine = rescale_measure(G, 2, SlowVarying(), alpha)
        np.testing.assert_allclose(coarse.mass[:, 0, 0], fine.mass[:, 0, 0].reshape(4, 2).sum(axis=1))

    def test_misaligned_target_rejected(self):
        G = density_measure(scalar_model(), CellGrid.torus(8))
        with self.assertRaises(GridIncompatibilityError):
            rescale_measure(G, 2, SlowVarying(), 0.4, target=CellGrid.uniform(1.0, 4))


class LimitMeasureTests(SimpleTestCase):
    def test_homogeneity_line(self):
        limit = LimitSpectralModel.from_density_model(scalar_model())
        self.assertIn(10.0, HOMOGENEITY_SCALES)
        for t in HOMOGENEITY_SCALES:
            for lo, hi in (([0.5], [1.5]), ([-2.0], [-0.25]), ([-1.0], [0.5])):
                self.assertLess(homogeneity_residual(limit, lo, hi, t), 1e-12)

    def test_homogeneity_plane(self):
        limit = LimitSpectralModel.from_density_model(scalar_model(alpha=0.6, nu=2))
        for t in (2.0, 10.0):
            self.assertLess(homogeneity_residual(limit, [0.5, 0.25], [1.5, 1.0], t), 1e-8)

    def test_quadratic_forms_of_psd_limit(self):
        b = IsotropicFactor(np.array([[1.0, 0.3], [0.3, 1.0]]))
        model = SpectralDensityModel(LatticeDims(2, 2), LongRangeParams(0.5, 1), b, SmoothFactor())
        G = limit_grid_measure(LimitSpectralModel.from_density_model(model), CellGrid.uniform(2.0, 4, nu=2))
        R, S = quadratic_form_measures(G, 0, 1)
        self.assertTrue(np.all(R >= 0.0))
        self.assertTrue(np.all(S >= 0.0))

    def test_quadratic_forms_detect_indefinite_cells(self):
        grid = CellGrid.uniform(1.0, 2)
        mass = np.array([[[1.0, -2.0], [-2.0, 1.0]]] * 2, dtype=complex)
        with self.assertRaises(PSDViolationError):
            quadratic_form_measures(MatrixSpectralMeasureOnGrid(grid, mass), 0, 1)

    def test_vague_convergence_on_a_bump(self):
        alpha = 0.4
        model = scalar_model(alpha)
        limit = LimitSpectralModel.from_density_model(model)
        grid = CellGrid.uniform(4.0, 1024)
        bump = Bump(center=np.array([1.0]), width=0.75)
        target = integrate_against(limit_grid_measure(limit, grid), bump)[0, 0].real
        gaps = [abs(integrate_against(density_measure(model, grid, scale=N), bump)[0, 0].real - target)
                for N in (16, 64, 256)]
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])


class DiagnosticMeasureTests(SimpleTestCase):
    def setUp(self):
        self.alpha = 0.4
        self.torus = density_measure(scalar_model(self.alpha), CellGrid.torus(64))

    def test_lattice_fourier_transform_matches_quadrature(self):
        N, k, shift = 8, 2, 3
        cov = covariance_from_measure(self.torus, N + k * shift)
        G_N = rescale_measure(self.torus, N, SlowVarying(), self.alpha)
        kernel = KernelSpec("hN", k, 1, N=N)
        points = np.array([[[0], [0]], [[1], [-2]], [[3], [3]]])
        quadrature = mu_N_fourier(kernel, G_N, (0, 0), points / N)
        for p, q in zip(points, quadrature):
            lattice = phi_N_lattice(cov, (0, 0), p, N, self.alpha)
            self.assertAlmostEqual(abs(lattice - q) / abs(lattice), 0.0, places=9)

    def test_tail_masses_shrink(self):
        G_N = rescale_measure(self.torus, 16, SlowVarying(), self.alpha)
        kernel = KernelSpec("hN", 2, 1, N=16)
        total = mu_N_total(kernel, G_N, (0, 0))
        masses = [mu_N_tail_mass(kernel, G_N, (0, 0), T) for T in (0.0, 2.0, 8.0, 32.0)]
        self.assertAlmostEqual(masses[0], total)
        self.assertTrue(all(a >= b for a, b in zip(masses, masses[1:])))
        self.assertLess(masses[-1], masses[0])


class TrivialMeasureTests(SimpleTestCase):
    def test_two_term_fourier_series(self):
        G = MatrixSpectralMeasureOnGrid.from_density(
            CellGrid.torus(64), lambda x: ((1.0 + np.cos(x[:, 0])) / (2 * np.pi))[:, None, None])
        table = covariance_from_measure(G.validate(), 3)
        np.testing.assert_allclose(table.r[0, 0], [0, 0, 0.5, 1.0, 0.5, 0, 0], atol=1e-12)

    def test_rescaled_flat_measure(self):
        G = MatrixSpectralMeasureOnGrid.from_density(CellGrid.torus(8), lambda x: np.full((x.shape[0], 1, 1), 1 / (2 * np.pi)))
        G_4 = rescale_measure(G.validate(), 4, SlowVarying(), 0.5)
        self.assertAlmostEqual(G_4.mass_of([0.0], [1.0])[0, 0].real, 1.0 / (4.0 * np.pi))
        self.assertEqual(G_4.mass_of([20.0], [30.0])[0, 0], 0.0)

    def test_power_law_cell_independent_of_n(self):
        alpha = 0.4
        limit = LimitSpectralModel.from_density_model(scalar_model(alpha))
        grid = CellGrid.uniform(1.0, 2)
        self.assertAlmostEqual(limit_grid_measure(limit, grid).mass[1, 0, 0].real, 1.0 / alpha)
        self.assertAlmostEqual(limit_cell_mass(limit, [1.0], [2.0])[0, 0].real, (2 ** alpha - 1) / alpha)

    def test_quadratic_forms_by_hand(self):
        grid = CellGrid.uniform(1.0, 2)
        G = MatrixSpectralMeasureOnGrid(grid, np.array([[[2.0, 0.0], [0.0, 3.0]]] * 2, dtype=complex))
        R, S = quadratic_form_measures(G, 0, 1)
        np.testing.assert_allclose(R, [5.0, 5.0])
        np.testing.assert_allclose(S, [5.0, 5.0])
        c = 0.4
        G = MatrixSpectralMeasureOnGrid(grid, np.array([[[1.0, 1j * c], [-1j * c, 1.0]]] * 2))
        R, S = quadratic_form_measures(G, 0, 1)
        np.testing.assert_allclose(R, [2.0, 2.0])
        np.testing.assert_allclose(S, [2.0 + 2 * c, 2.0 + 2 * c])

    def test_phi_white_noise_and_symmetry(self):
        r = np.zeros((1, 1, 41))
        r[0, 0, 20] = 1.0
        white = CovarianceTable(LatticeDims(1, 1), 20, r)
        self.assertAlmostEqual(phi_N_lattice(white, (0,), [[0]], 16, 0.4).real, 16 ** -0.6)
        cov = covariance_from_measure(density_measure(scalar_model(), CellGrid.torus(64)), 20)
        plus = phi_N_lattice(cov, (0, 0), [[1], [-3]], 8, 0.4)
        minus = phi_N_lattice(cov, (0, 0), [[-1], [3]], 8, 0.4)
        self.assertAlmostEqual(plus, np.conj(minus))
