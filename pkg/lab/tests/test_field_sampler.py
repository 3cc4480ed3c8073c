import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import InsufficientReplicatesError, TableRangeError
from lab.services.field_sampler import (
    FieldSample,
    FieldSampler,
    SamplerConfig,
    empirical_covariance,
    sample_field,
    sampler_covariance,
)
from lab.services.lrd_model import LatticeDims, fgn_covariance_table, white_noise_table


class SamplerConfigTests(SimpleTestCase):
    def test_rejects_unknown_method(self):
        with self.assertRaises(ValueError):
            SamplerConfig(method="cholesky")

    def test_rejects_small_embedding(self):
        with self.assertRaises(ValueError):
            SamplerConfig(embedding_factor=1)


class WhiteNoiseTests(SimpleTestCase):
    def setUp(self):
        self.cov = white_noise_table(LatticeDims(1, 2), 16)

    def test_direct_draws_are_independent_standard_normals(self):
        sampler = FieldSampler(self.cov, 8, SamplerConfig(method="direct-factorization", seed=4))
        block = sampler.draw(range(2000))
        self.assertEqual(block.shape, (2000, 2, 8))
        values = block.reshape(2000, 2, -1)
        self.assertLess(abs(values.mean()), 0.03)
        self.assertAlmostEqual(values.var(), 1.0, delta=0.05)
        cross = np.mean(values[:, 0] * values[:, 1])
        self.assertLess(abs(cross), 0.05)
        self.assertLess(sampler.factor_residual(), 1e-10)

    def test_circulant_realizes_white_noise(self):
        sampler = FieldSampler(self.cov, 8, SamplerConfig(seed=1))
        self.assertEqual(sampler.clipped, 0.0)
        induced = sampler.induced_covariance(3)
        np.testing.assert_allclose(induced.r, self.cov.restricted(3).r, atol=1e-12)


class ReproducibilityTests(SimpleTestCase):
    def setUp(self):
        self.cov = fgn_covariance_table(0.4, 1, 64)

    def test_same_replicate_is_bit_identical(self):
        cfg = SamplerConfig(seed=9)
        first = sample_field(self.cov, 16, cfg, 3)
        again = FieldSampler(self.cov, 16, cfg).sample(3)
        self.assertTrue(np.array_equal(first.values, again.values))

    def test_drawing_order_does_not_matter(self):
        sampler = FieldSampler(self.cov, 16, SamplerConfig(seed=9))
        forward = sampler.draw([1, 2, 3])
        backward = sampler.draw([3, 2, 1])
        np.testing.assert_allclose(forward, backward[::-1], atol=1e-12)

    def test_seed_and_replicate_change_the_draw(self):
        a = sample_field(self.cov, 16, SamplerConfig(seed=9), 0).values
        b = sample_field(self.cov, 16, SamplerConfig(seed=9), 1).values
        c = sample_field(self.cov, 16, SamplerConfig(seed=10), 0).values
        self.assertFalse(np.allclose(a, b))
        self.assertFalse(np.allclose(a, c))


class FractionalNoiseTests(SimpleTestCase):
    def setUp(self):
        self.cov = fgn_covariance_table(0.4, 1, 64)

    def test_circulant_embedding_is_exact(self):
        sampler = FieldSampler(self.cov, 32, SamplerConfig())
        self.assertLess(sampler.clipped, 1e-12)
        np.testing.assert_allclose(sampler.induced_covariance(8).r, self.cov.restricted(8).r, atol=1e-10)

    def test_methods_agree_with_the_table(self):
        for method in ("direct-factorization", "circulant-embedding"):
            sampler = FieldSampler(self.cov, 32, SamplerConfig(method=method, seed=2))
            estimate = sampler_covariance(sampler, 4000, 4, chunk=1000)
            self.assertEqual(estimate.replicates, 4000)
            self.assertGreaterEqual(estimate.coverage(self.cov), 0.85, method)

    def test_tapered_grid_damps_far_lags_only(self):
        sampler = FieldSampler(self.cov, 16, SamplerConfig(method="spectral-grid"))
        induced = sampler.induced_covariance(4).r[0, 0]
        target = self.cov.restricted(4).r[0, 0]
        lags = np.abs(np.arange(-4, 5))
        np.testing.assert_allclose(induced, target * (1.0 - lags / 32.0), atol=1e-10)

    def test_short_table_rejected(self):
        with self.assertRaises(TableRangeError):
            FieldSampler(fgn_covariance_table(0.4, 1, 8), 32, SamplerConfig())

    def test_direct_window_cap(self):
        with self.assertRaises(ValueError):
            FieldSampler(white_noise_table(LatticeDims(2, 1), 100), 80, SamplerConfig(method="direct-factorization"))


class FieldSampleTests(SimpleTestCase):
    def test_shape_checked(self):
        with self.assertRaises(ValueError):
            FieldSample(LatticeDims(2, 1), 4, np.zeros((1, 4, 3)))

    def test_binary_round_trip(self):
        sample = sample_field(white_noise_table(LatticeDims(2, 2), 8), 4, SamplerConfig(seed=5), 7)
        with tempfile.TemporaryDirectory() as tmp:
            path = sample.to_binary(Path(tmp) / "field.bin")
            self.assertEqual(path.stat().st_size, 40 + 8 * sample.values.size)
            again = FieldSample.from_binary(path)
        self.assertEqual((again.seed, again.replicate, again.N), (5, 7, 4))
        self.assertTrue(np.array_equal(again.values, sample.values))

    def test_csv_rows(self):
        sample = FieldSample(LatticeDims(1, 2), 3, np.arange(6, dtype=float).reshape(2, 3), replicate=1)
        rows = list(sample.csv_rows())
        self.assertEqual(len(rows), 6)
        self.assertEqual(rows[1], (1, 0, 1, 3.0))


class EmpiricalCovarianceTests(SimpleTestCase):
    def test_zero_samples_estimate_zero(self):
        estimate = empirical_covariance(np.zeros((3, 1, 8)), 2)
        np.testing.assert_array_equal(estimate.table.r, np.zeros((1, 1, 5)))
        np.testing.assert_array_equal(estimate.stderr, np.zeros((1, 1, 5)))

    def test_constant_field(self):
        estimate = empirical_covariance(np.full((4, 1, 6), 2.0), 3)
        np.testing.assert_allclose(estimate.table.r[0, 0], np.full(7, 4.0))

    def test_needs_two_samples(self):
        with self.assertRaises(InsufficientReplicatesError):
            empirical_covariance(np.zeros((1, 1, 8)), 2)
        with self.assertRaises(InsufficientReplicatesError):
            empirical_covariance([], 2)

    def test_lag_range_below_window(self):
        with self.assertRaises(TableRangeError):
            empirical_covariance(np.zeros((3, 1, 4)), 4)
