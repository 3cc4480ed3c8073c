import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import DimensionalityError
from lab.services.quadrature import (
    CellGrid,
    cell_power_law_integral,
    fourier_coefficients,
    lag_box,
    power_law_weights,
)


def unit_angular(theta):
    return np.ones((np.asarray(theta).shape[0], 1, 1), dtype=complex)


class CellGridTests(SimpleTestCase):
    def test_uniform_grid_is_symmetric(self):
        grid = CellGrid.uniform(2.0, 8)
        centers = grid.centers[:, 0]
        np.testing.assert_allclose(centers[grid.mirror_index()], -centers)
        self.assertAlmostEqual(grid.volumes.sum(), 4.0)

    def test_origin_cells(self):
        grid = CellGrid.uniform(1.0, 4)
        self.assertEqual(int(grid.touches_origin().sum()), 2)
        self.assertEqual(grid.origin_cell(), 2)

    def test_odd_cell_count_rejected(self):
        with self.assertRaises(ValueError):
            CellGrid.uniform(1.0, 5)

    def test_asymmetric_edges_rejected(self):
        with self.assertRaises(ValueError):
            CellGrid(edges=(np.array([-1.0, 0.0, 2.0]),))

    def test_torus(self):
        grid = CellGrid.torus(16, nu=2)
        self.assertTrue(grid.is_torus)
        self.assertEqual(grid.shape, (16, 16))
        self.assertEqual(grid.size, 256)


class PowerLawIntegralTests(SimpleTestCase):
    def test_line_closed_form(self):
        alpha = 0.4
        value = cell_power_law_integral(alpha, 1, unit_angular, [-1.0], [1.0])
        self.assertAlmostEqual(value[0, 0].real, 2.0 / alpha, places=12)
        half = cell_power_law_integral(alpha, 1, unit_angular, [0.0], [1.0])
        self.assertAlmostEqual(half[0, 0].real, 1.0 / alpha, places=12)

    def test_line_weights_sum_to_total_mass(self):
        alpha, T = 0.3, 3.0
        weights = power_law_weights(CellGrid.uniform(T, 64), alpha, unit_angular)
        self.assertAlmostEqual(weights.sum().real, 2.0 * T ** alpha / alpha, places=10)

    def test_plane_homogeneity(self):
        alpha = 0.6
        small = cell_power_law_integral(alpha, 2, unit_angular, [-1.0, -1.0], [1.0, 1.0])
        large = cell_power_law_integral(alpha, 2, unit_angular, [-2.0, -2.0], [2.0, 2.0])
        self.assertAlmostEqual(large[0, 0].real / small[0, 0].real, 2.0 ** alpha, places=7)

    def test_plane_gauss_nodes_match_adaptive(self):
        alpha = 0.6
        grid = CellGrid.uniform(2.0, 4, nu=2)
        weights = power_law_weights(grid, alpha, unit_angular, order=8)
        corner = 0
        exact = cell_power_law_integral(alpha, 2, unit_angular, grid.lower[corner], grid.upper[corner])
        self.assertAlmostEqual(weights[corner, 0, 0].real, exact[0, 0].real, delta=1e-5 * abs(exact[0, 0]))

    def test_three_dimensional_lattice_rejected(self):
        with self.assertRaises(DimensionalityError):
            power_law_weights(CellGrid.uniform(1.0, 2, nu=3), 0.5, unit_angular)


class FourierCoefficientTests(SimpleTestCase):
    def test_white_noise_pair(self):
        # g = 1/(2 pi) on the torus
        grid = CellGrid.torus(64)
        masses = (grid.volumes / (2.0 * np.pi))[:, None, None]
        coeffs = fourier_coefficients(grid, masses, 5)[0, 0]
        expected = np.zeros(11)
        expected[5] = 1.0
        np.testing.assert_allclose(coeffs, expected, atol=1e-12)

    def test_torus_fft_matches_direct_sum(self):
        grid = CellGrid.torus(32)
        rng = np.random.default_rng(0)
        masses = rng.random(grid.size)
        masses = (masses + masses[::-1])[:, None, None]
        fast = fourier_coefficients(grid, masses, 6)[0, 0]
        lags = lag_box(6, 1)[:, 0]
        direct = np.array([np.sum(np.exp(1j * p * grid.centers[:, 0]) * masses[:, 0, 0]) for p in lags])
        np.testing.assert_allclose(fast, direct, atol=1e-10)
