import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from lab.exceptions import (
    AssumptionError,
    DegreeCapError,
    DimensionMismatchError,
    MalformedSequenceError,
    ModelValidationError,
    NonDiagonalModelError,
)
from lab.services.hermite import (
    HermiteExpansion,
    HermiteSeries,
    TailExpansion,
    basis_convert,
    bivariate_hermite_moment,
    build_expansion,
    combined,
    cross_moment_bound,
    cross_moment_diagonal,
    eval_expansion,
    hermite_poly,
    hermite_rank,
    index_maps,
    multi_indices,
    psi,
    require_diagonal,
    second_moment,
    tail_condition_value,
    transform_functional,
)


class HermitePolynomialTests(SimpleTestCase):
    def test_low_orders(self):
        self.assertEqual(hermite_poly(0, 3.7), 1.0)
        self.assertEqual(hermite_poly(2, 2.0), 3.0)
        self.assertEqual(hermite_poly(3, 1.0), -2.0)

    def test_vectorized(self):
        x = np.linspace(-2.0, 2.0, 9)
        np.testing.assert_allclose(hermite_poly(4, x), x ** 4 - 6 * x ** 2 + 3)

    def test_negative_degree(self):
        with self.assertRaises(ValueError):
            hermite_poly(-1, 0.0)

    def test_orthogonality_by_quadrature(self):
        for r in (-0.6, 0.0, 0.5):
            self.assertAlmostEqual(bivariate_hermite_moment(2, 2, r), 2.0 * r * r, places=10)
            self.assertAlmostEqual(bivariate_hermite_moment(3, 3, r), 6.0 * r ** 3, places=10)
            self.assertAlmostEqual(bivariate_hermite_moment(2, 3, r), 0.0, places=10)


class ExpansionTests(SimpleTestCase):
    def test_evaluate_single_terms(self):
        self.assertEqual(eval_expansion(HermiteExpansion(d=2, k=2, coefficients={(2, 0): 1.0}), [2.0, 0.0]), 3.0)
        H = HermiteExpansion(d=2, k=2, coefficients={(1, 1): 1.0})
        self.assertAlmostEqual(H.evaluate([1.5, -0.4]), -0.6)

    def test_order_enforced(self):
        with self.assertRaises(ModelValidationError):
            HermiteExpansion(d=2, k=2, coefficients={(2, 1): 1.0})
        with self.assertRaises(ModelValidationError):
            TailExpansion(d=1, k=2, coefficients={(2,): 1.0})

    def test_wrong_arity(self):
        with self.assertRaises(DimensionMismatchError):
            HermiteExpansion(d=2, k=2, coefficients={(2,): 1.0})
        H = HermiteExpansion(d=2, k=2, coefficients={(2, 0): 1.0})
        with self.assertRaises(DimensionMismatchError):
            eval_expansion(H, [1.0, 2.0, 3.0])

    def test_zero_coefficients_allowed(self):
        H = HermiteExpansion(d=2, k=2, coefficients={(2, 0): 0.0, (1, 1): 1.0})
        self.assertEqual(hermite_rank(H), 2)
        self.assertEqual(H.orders, {2})

    def test_json_round_trip_keeps_order(self):
        H = TailExpansion(d=2, k=1, coefficients={(2, 0): 0.5, (1, 2): -1.0})
        again = TailExpansion.from_json(H.to_json())
        self.assertEqual(again.k, 1)
        self.assertEqual(again.coefficients, H.coefficients)

    def test_moments(self):
        self.assertAlmostEqual(tail_condition_value(TailExpansion(d=1, k=2, coefficients={(3,): 1.0})), 1.0 / 6.0)
        self.assertAlmostEqual(tail_condition_value(TailExpansion(d=2, k=2, coefficients={(2, 1): 2.0})), 2.0)
        H = HermiteExpansion(d=2, k=2, coefficients={(2, 0): 1.0, (1, 1): 1.0})
        self.assertEqual(second_moment(H), 3.0)

    def test_second_moment_by_monte_carlo(self):
        H = combined(HermiteExpansion(d=2, k=1, coefficients={(1, 0): 0.7}),
                     TailExpansion(d=2, k=1, coefficients={(1, 1): 0.5, (0, 3): 0.2}))
        rng = np.random.default_rng(17)
        values = eval_expansion(H, rng.standard_normal((200_000, 2))) ** 2
        stderr = values.std(ddof=1) / math.sqrt(values.size)
        self.assertLess(abs(values.mean() - second_moment(H)), 3.0 * stderr)

    def test_build_from_sum_block(self):
        block = {"terms": [{"index": [2, 0], "c": 1.0}, {"index": [1, 1], "c": 1.0}],
                 "tail_terms": [{"index": [3, 0], "c": 0.1}]}
        H0, H1 = build_expansion(block, 2, 2)
        self.assertEqual(H0.coefficients, {(2, 0): 1.0, (1, 1): 1.0})
        self.assertEqual(H1.coefficients, {(3, 0): 0.1})
        self.assertIsNone(build_expansion({"terms": block["terms"]}, 2, 2)[1])


class CrossMomentTests(SimpleTestCase):
    def test_diagonal_cross_moment(self):
        H = HermiteExpansion(d=1, k=2, coefficients={(2,): 1.0})
        self.assertAlmostEqual(cross_moment_diagonal(H, [0.5]), 0.5)
        self.assertEqual(cross_moment_diagonal(H, [0.0]), 0.0)
        G = HermiteExpansion(d=2, k=2, coefficients={(2, 0): 1.0, (1, 1): -2.0})
        self.assertAlmostEqual(cross_moment_diagonal(G, [1.0, 1.0]), second_moment(G))

    def test_psi(self):
        self.assertAlmostEqual(psi([[0.2, -0.3], [0.1, 0.1]]), 0.5)

    def test_bound_with_equality(self):
        report = cross_moment_bound(TailExpansion(d=1, k=1, coefficients={(2,): 1.0}), [[0.5]])
        self.assertTrue(report.exact)
        self.assertAlmostEqual(report.lhs, 0.5)
        self.assertAlmostEqual(report.bound, 0.5)
        self.assertTrue(report.holds)

    def test_bound_two_coordinates(self):
        report = cross_moment_bound(TailExpansion(d=2, k=2, coefficients={(2, 1): 1.0}), np.diag([0.3, 0.3]))
        self.assertAlmostEqual(report.lhs, 0.054)
        self.assertAlmostEqual(report.bound, 0.3 ** 3 * 2.0)
        self.assertTrue(report.holds)

    def test_zero_correlation(self):
        report = cross_moment_bound(TailExpansion(d=1, k=1, coefficients={(3,): 1.0}), [[0.0]])
        self.assertEqual(report.lhs, 0.0)

    def test_off_diagonal_uses_monte_carlo(self):
        r = np.array([[0.2, 0.1], [0.1, 0.2]])
        report = cross_moment_bound(TailExpansion(d=2, k=1, coefficients={(2, 0): 1.0, (1, 1): 0.5}), r,
                                 samples=50_000, seed=3)
        self.assertFalse(report.exact)
        self.assertTrue(report.holds)

    def test_off_diagonal_estimate_is_reproducible(self):
        H1 = TailExpansion(d=2, k=2, coefficients={(2, 1): 1.0})
        r = [[0.3, 0.1], [0.1, 0.3]]
        first = cross_moment_bound(H1, r, samples=2000, seed=5)
        self.assertEqual(first, cross_moment_bound(H1, r, samples=2000, seed=5))
        self.assertGreater(first.stderr, 0.0)
        self.assertNotEqual(first.lhs, cross_moment_bound(H1, r, samples=2000, seed=6).lhs)

    @override_settings(LAB_SEED=17)
    def test_off_diagonal_default_seed_from_settings(self):
        H1 = TailExpansion(d=2, k=2, coefficients={(2, 1): 1.0})
        r = [[0.3, 0.1], [0.1, 0.3]]
        self.assertEqual(cross_moment_bound(H1, r, samples=2000), cross_moment_bound(H1, r, samples=2000, seed=17))

    def test_psi_above_one(self):
        with self.assertRaises(AssumptionError):
            cross_moment_bound(TailExpansion(d=2, k=1, coefficients={(2, 0): 1.0}), [[0.8, 0.4], [0.0, 0.1]])

    def test_require_diagonal(self):
        with self.assertRaises(NonDiagonalModelError):
            require_diagonal(False, "exact variance")


class IndexMapTests(SimpleTestCase):
    def test_sequence_and_back(self):
        maps = index_maps(3, 2)
        self.assertEqual(maps.sequence((2, 1)), (0, 0, 1))
        self.assertEqual(maps.multi_index((0, 0, 1)), (2, 1))

    def test_bijection(self):
        maps = index_maps(4, 3)
        indices = maps.all()
        self.assertEqual(len(indices), math.comb(6, 2))
        self.assertEqual(sorted(maps.multi_index(maps.sequence(i)) for i in indices), sorted(indices))

    def test_malformed(self):
        maps = index_maps(3, 2)
        for bad in ((1, 0, 0), (0, 1), (0, 0, 2)):
            with self.assertRaises(MalformedSequenceError):
                maps.multi_index(bad)
        with self.assertRaises(MalformedSequenceError):
            maps.sequence((1, 1))

    def test_multi_indices(self):
        self.assertEqual(multi_indices(2, 2), [(2, 0), (1, 1), (0, 2)])


class BasisConversionTests(SimpleTestCase):
    def test_known_pairs(self):
        np.testing.assert_allclose(basis_convert(HermiteSeries(d=1, coefficients={(2,): 1.0})), [-1.0, 0.0, 1.0])
        cubic = basis_convert(np.array([0.0, 0.0, 0.0, 1.0]))
        self.assertEqual(set(cubic.coefficients), {(1,), (3,)})
        self.assertAlmostEqual(cubic.coefficients[(1,)], 3.0)
        self.assertAlmostEqual(cubic.coefficients[(3,)], 1.0)

    def test_random_round_trip(self):
        rng = np.random.default_rng(11)
        poly = rng.standard_normal(7)
        back = basis_convert(basis_convert(poly))
        np.testing.assert_allclose(back, poly, atol=1e-10)

    def test_pointwise_agreement(self):
        rng = np.random.default_rng(5)
        H = HermiteSeries(d=2, coefficients={(2, 1): 0.3, (0, 3): -1.2, (1, 0): 0.7, (4, 0): 0.1})
        P = basis_convert(H)
        x = rng.standard_normal((100, 2))
        monomial = sum(P[m1, m2] * x[:, 0] ** m1 * x[:, 1] ** m2 for m1 in range(P.shape[0]) for m2 in range(P.shape[1]))
        np.testing.assert_allclose(monomial, eval_expansion(H, x), atol=1e-10)

    def test_degree_cap(self):
        with self.assertRaises(DegreeCapError):
            basis_convert(HermiteSeries(d=1, coefficients={(5,): 1.0}), cap=4)


class ChangeOfVariablesTests(SimpleTestCase):
    def test_identity(self):
        H = HermiteExpansion(d=2, k=2, coefficients={(2, 0): 1.0, (1, 1): 0.5})
        H2 = transform_functional(H, np.eye(2))
        self.assertIsInstance(H2, HermiteExpansion)
        self.assertEqual(set(H2.coefficients), set(H.coefficients))
        for index, c in H.coefficients.items():
            self.assertAlmostEqual(H2.coefficients[index], c)

    def test_permutation(self):
        H = HermiteExpansion(d=2, k=3, coefficients={(2, 1): 1.0})
        H2 = transform_functional(H, np.array([[0.0, 1.0], [1.0, 0.0]]))
        self.assertEqual(list(H2.coefficients), [(1, 2)])
        self.assertAlmostEqual(H2.coefficients[(1, 2)], 1.0)

    def test_rotation_of_linear_term(self):
        theta = 0.3
        D = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]])
        H2 = transform_functional(HermiteExpansion(d=2, k=1, coefficients={(1, 0): 1.0}), D)
        self.assertAlmostEqual(H2.coefficients[(1, 0)], math.cos(theta))
        self.assertAlmostEqual(H2.coefficients[(0, 1)], math.sin(theta))

    def test_non_orthonormal_map_mixes_orders(self):
        H = HermiteExpansion(d=1, k=2, coefficients={(2,): 1.0})
        H2 = transform_functional(H, np.array([[2.0]]))
        self.assertNotIsInstance(H2, HermiteExpansion)
        self.assertAlmostEqual(H2.coefficients[(2,)], 4.0)
        self.assertAlmostEqual(H2.coefficients[(0,)], 3.0)
