import math
import os
import sys
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from floc_errors import ValidationError
from ray_model import (BinSpec, RayProbDist, bin_centers, cosine, encode_depth,
                       encode_depths, expected_depths, floc_loss)


class TestBins(unittest.TestCase):

    def setUp(self):
        self.linear = BinSpec(d_min=0.1, d_max=10.0, n_bins=10, gamma=1.0)

    def test_last_center_is_dmax(self):
        """Last bin center is d_max"""
        self.assertEqual(bin_centers(self.linear)[-1], 10.0)

    def test_linear_fifth_center(self):
        """Linear bins are evenly spaced"""
        self.assertAlmostEqual(bin_centers(self.linear)[4], 5.05, places=12)

    def test_gamma_two(self):
        """Gamma 2 bends the centers"""
        c = bin_centers(BinSpec(d_min=1.0, d_max=3.0, n_bins=2, gamma=2.0))
        self.assertAlmostEqual(c[0], math.sqrt(5.0), places=12)
        self.assertEqual(c[1], 3.0)

    def test_strictly_increasing(self):
        """Centers increase for any gamma"""
        for gamma in (0.3, 1.0, 2.5):
            c = bin_centers(BinSpec(d_min=0.1, d_max=10.0, n_bins=64, gamma=gamma))
            self.assertTrue(np.all(np.diff(c) > 0))

    def test_linear_ramp(self):
        """Gamma 1 steps are constant"""
        steps = np.diff(bin_centers(self.linear))
        self.assertLess(np.ptp(steps), 1e-12)

    def test_invalid_spec(self):
        """Inverted ranges and bad counts are rejected"""
        with self.assertRaises(ValidationError):
            BinSpec(d_min=2.0, d_max=1.0)
        with self.assertRaises(ValidationError):
            BinSpec(gamma=0.0)

    def test_dict_form(self):
        """Config dicts override defaults"""
        spec = BinSpec.from_dict({"d_min_m": 0.5, "n_bins": 8})
        self.assertEqual(spec.d_min, 0.5)
        self.assertEqual(spec.n_bins, 8)
        self.assertEqual(BinSpec.from_dict(spec.to_dict()), spec)


class TestExpectedDepths(unittest.TestCase):

    def setUp(self):
        self.spec = BinSpec(d_min=0.1, d_max=10.0, n_bins=10, gamma=1.0)
        self.centers = bin_centers(self.spec)

    def test_one_hot(self):
        """One-hot rows give the bin center"""
        probs = np.eye(10)[[2]]
        self.assertEqual(expected_depths(RayProbDist(probs), self.spec)[0], self.centers[2])

    def test_uniform_row(self):
        """Uniform rows give the mean center"""
        probs = np.full((1, 10), 0.1)
        self.assertAlmostEqual(expected_depths(RayProbDist(probs), self.spec)[0], 5.545, places=9)

    def test_bad_row_sum(self):
        """Rows must sum to one"""
        probs = np.full((1, 10), 0.05)
        with self.assertRaises(ValidationError):
            expected_depths(RayProbDist(probs), self.spec)

    def test_column_mismatch(self):
        """Columns must match the bins"""
        with self.assertRaises(ValidationError):
            expected_depths(RayProbDist(np.full((1, 4), 0.25)), self.spec)


class TestEncodeDepth(unittest.TestCase):

    def setUp(self):
        self.spec = BinSpec(d_min=0.1, d_max=10.0, n_bins=10, gamma=1.0)
        self.centers = bin_centers(self.spec)

    def test_center_hit(self):
        """A center depth encodes one-hot"""
        row = encode_depth(self.centers[2], self.spec)
        self.assertEqual(row[2], 1.0)
        self.assertEqual(row.sum(), 1.0)

    def test_midway(self):
        """Midway depth splits between neighbours"""
        row = encode_depth((self.centers[2] + self.centers[3]) / 2, self.spec)
        self.assertAlmostEqual(row[2], 0.5, places=9)
        self.assertAlmostEqual(row[3], 0.5, places=9)

    def test_clamp_high(self):
        """Depths past d_max clamp to the last bin"""
        row = encode_depth(15.0, self.spec)
        self.assertEqual(row[-1], 1.0)

    def test_round_trip(self):
        """Encoded depths decode back"""
        spec = BinSpec(d_min=0.1, d_max=10.0, n_bins=64, gamma=0.5)
        depths = np.linspace(bin_centers(spec)[0], 10.0, 37)
        back = expected_depths(encode_depths(depths, spec), spec)
        np.testing.assert_allclose(back, depths, atol=1e-9)


class TestFlocLoss(unittest.TestCase):

    def test_perfect_match(self):
        """Identical fans score 0 or 1 by mode"""
        d = [1.0, 2.0, 3.5]
        self.assertAlmostEqual(floc_loss(d, d, mode="shape-penalty"), 0.0, places=12)
        self.assertAlmostEqual(floc_loss(d, d, mode="as-printed"), 1.0, places=12)

    def test_orthogonal(self):
        """Orthogonal fans pay the full cosine term"""
        self.assertAlmostEqual(floc_loss([1.0, 0.0], [0.0, 1.0], mode="shape-penalty"), 3.0, places=12)

    def test_shape_penalty_non_negative(self):
        """Shape-penalty loss is never negative"""
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.uniform(0.1, 10, 40), rng.uniform(0.1, 10, 40)
            self.assertGreaterEqual(floc_loss(a, b), 0.0)

    def test_cosine_scale_invariant(self):
        """Cosine ignores scale"""
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0.1, 10, 40), rng.uniform(0.1, 10, 40)
        self.assertAlmostEqual(cosine(3.7 * a, b), cosine(a, b), places=9)

    def test_length_mismatch(self):
        """Fans must have equal length"""
        with self.assertRaises(ValidationError):
            floc_loss([1.0, 2.0], [1.0])

    def test_unknown_mode(self):
        """Unknown loss modes are rejected"""
        with self.assertRaises(ValidationError):
            floc_loss([1.0], [1.0], mode="other")


if __name__ == "__main__":
    unittest.main(verbosity=2)
