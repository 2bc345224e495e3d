"""
Wasserstein DRCC App - Tests
Test cases for ambiguity data, sample distances and chance-constraint feasibility.
"""

import math

import numpy as np
from django.test import SimpleTestCase

from drcc_gnep.exceptions import DimensionError, ProblemFormatError, ProblemValidationError
from drcc_gnep.testing import make_drcc, random_drcc

from .ambiguity import SampleSet
from .distances import (
    certificate_from_values, distance_mass, drcc_feasible, dual_certificate, dual_norm,
    point_distance, radius_hint, sample_distances, smallest_mass,
)
from .loaders import format_samples, parse_samples


class DualNormTestCase(SimpleTestCase):
    """Test cases for dual norms."""

    def test_pairings(self):
        """Test primal and dual norm pairings"""
        self.assertAlmostEqual(dual_norm([3.0, 4.0], 2), 5.0)
        self.assertAlmostEqual(dual_norm([1.0, -2.0], 1), 2.0)
        self.assertAlmostEqual(dual_norm([1.0, -2.0], 'inf'), 3.0)
        self.assertAlmostEqual(dual_norm([1.0, -2.0], np.inf), 3.0)
        self.assertAlmostEqual(dual_norm([1.0, -2.0], '∞'), 3.0)
        self.assertAlmostEqual(dual_norm([3.0, 4.0], '2'), 5.0)
        with self.assertRaises(ProblemValidationError):
            dual_norm([1.0], 3)

    def test_zero_vector(self):
        """Test zero vector"""
        self.assertEqual(dual_norm([0.0, 0.0], 2), 0.0)


class SpecValidationTestCase(SimpleTestCase):
    """Test cases for chance-constraint data validation."""

    def test_zero_beta_row(self):
        """Test zero beta row"""
        with self.assertRaises(ProblemValidationError):
            make_drcc(A=[[1.0], [1.0]], beta=[[1.0], [0.0]], b=[1.0, 1.0], samples=[[0.0]])

    def test_epsilon_range(self):
        """Test epsilon range"""
        with self.assertRaises(ProblemValidationError):
            make_drcc(A=[[1.0]], beta=[[1.0]], b=[1.0], samples=[[0.0]], epsilon=1.0)

    def test_theta_positive(self):
        """Test theta positive"""
        with self.assertRaises(ProblemValidationError):
            make_drcc(A=[[1.0]], beta=[[1.0]], b=[1.0], samples=[[0.0]], theta=0.0)

    def test_sample_dimension(self):
        """Test sample dimension"""
        with self.assertRaises(DimensionError):
            make_drcc(A=[[1.0]], beta=[[1.0, 1.0]], b=[1.0], samples=[[0.0]])


class DistanceTestCase(SimpleTestCase):
    """Test cases for sample distances."""

    def setUp(self):
        self.spec = make_drcc(A=[[1.0, 1.0, 1.0]], beta=[[1.0]], b=[10.0], samples=[[2.0], [-1.0]])
        self.x = [3.0, 3.0, 4.0]

    def test_distance_to_unsafe_set(self):
        """Test distance to unsafe set"""
        self.assertAlmostEqual(point_distance(self.x, 0, self.spec), 2.0)

    def test_sample_inside_unsafe_set(self):
        """Test sample inside unsafe set"""
        self.assertEqual(point_distance(self.x, 1, self.spec), 0.0)

    def test_rows_divided_by_their_norms(self):
        """Test rows divided by their norms"""
        spec = make_drcc(A=[[1.0], [2.0]], beta=[[1.0], [2.0]], b=[3.0, 2.0], samples=[[1.0]])
        # slacks 1+3-0.5 = 3.5 and 2+2-1 = 3, scaled 3.5 and 1.5
        self.assertAlmostEqual(point_distance([0.5], 0, spec), 1.5)

    def test_index_out_of_range(self):
        """Test index out of range"""
        with self.assertRaises(DimensionError):
            point_distance(self.x, 5, self.spec)

    def test_distances_nonnegative_and_zero_inside(self):
        """Test distances nonnegative and zero inside"""
        rng = np.random.default_rng(3)
        for _ in range(50):
            spec = random_drcc(rng, n=3)
            x = rng.normal(scale=3.0, size=3)
            distances = sample_distances(x, spec)
            self.assertTrue(np.all(distances >= 0.0))
            inside = np.any(spec.samples.samples @ spec.beta.T + spec.b - spec.A @ x <= 0.0, axis=1)
            np.testing.assert_array_equal(distances == 0.0, inside)

    def test_monotone_in_constraint_activity(self):
        """Test monotone in constraint activity"""
        rng = np.random.default_rng(11)
        for _ in range(50):
            spec = random_drcc(rng, n=2, m=1)
            x = rng.normal(size=2)
            direction = spec.A[0] / np.dot(spec.A[0], spec.A[0])
            before = sample_distances(x, spec)
            after = sample_distances(x + 0.3 * direction, spec)
            self.assertTrue(np.all(after <= before + 1e-12))
            self.assertLessEqual(distance_mass(x + 0.3 * direction, spec), distance_mass(x, spec) + 1e-12)


class MassTestCase(SimpleTestCase):
    """Test cases for the transported mass."""

    def test_integer_budget(self):
        """Test integer budget"""
        self.assertAlmostEqual(smallest_mass([3.0, 1.0, 2.0], 1.0 / 3.0), 1.0)

    def test_fractional_budget(self):
        """Test fractional budget"""
        self.assertAlmostEqual(smallest_mass([1.0, 2.0, 3.0], 0.5), 2.0)

    def test_all_zero(self):
        """Test all zero"""
        self.assertEqual(smallest_mass([0.0, 0.0, 0.0], 0.5), 0.0)

    def test_feasibility_threshold(self):
        """Test feasibility threshold"""
        # distances 1, 2, 3 with eps = 1/3 give mass 1.0
        samples = [[1.0], [2.0], [3.0]]
        feasible = make_drcc(A=[[1.0]], beta=[[1.0]], b=[0.0], samples=samples, epsilon=1.0 / 3.0, theta=0.3)
        infeasible = feasible.replace(theta=0.4)
        self.assertAlmostEqual(distance_mass([0.0], feasible), 1.0)
        self.assertTrue(drcc_feasible([0.0], feasible))
        self.assertFalse(drcc_feasible([0.0], infeasible))

    def test_piecewise_linear_between_kinks(self):
        """Test piecewise linear between kinks"""
        spec = make_drcc(A=[[1.0]], beta=[[1.0]], b=[0.0], samples=[[4.0], [5.0], [6.0]], epsilon=0.5)
        values = [distance_mass([t], spec) for t in (0.0, 0.5, 1.0)]
        self.assertAlmostEqual(values[1], 0.5 * (values[0] + values[2]))


class DualCertificateTestCase(SimpleTestCase):
    """Test cases for dual certificates."""

    def test_integer_case(self):
        """Test integer case"""
        certificate = certificate_from_values([1.0, 2.0, 3.0], 1.0 / 3.0)
        self.assertEqual(certificate.tau, 2.0)
        np.testing.assert_array_equal(certificate.s, [1.0, 0.0, 0.0])
        self.assertAlmostEqual(certificate.objective(1.0 / 3.0), 1.0)

    def test_fractional_case(self):
        """Test fractional case"""
        certificate = certificate_from_values([1.0, 2.0, 3.0], 0.5)
        self.assertEqual(certificate.tau, 2.0)
        self.assertAlmostEqual(certificate.objective(0.5), 2.0)

    def test_equal_distances(self):
        """Test equal distances"""
        certificate = certificate_from_values([1.5, 1.5, 1.5, 1.5], 0.5)
        self.assertEqual(certificate.tau, 1.5)
        np.testing.assert_array_equal(certificate.s, np.zeros(4))

    def test_objective_equals_mass_on_random_instances(self):
        """Test objective equals mass on random instances"""
        rng = np.random.default_rng(2024)
        for _ in range(500):
            spec = random_drcc(rng, n=3)
            x = rng.normal(size=3)
            certificate = dual_certificate(x, spec)
            distances = sample_distances(x, spec)
            self.assertLessEqual(abs(certificate.objective(spec.epsilon) - distance_mass(x, spec)), 1e-12 * max(
                1.0, abs(distance_mass(x, spec))))
            self.assertTrue(certificate.is_dual_feasible(distances))


class RadiusHintTestCase(SimpleTestCase):
    """Test cases for the radius from the concentration bound."""

    def test_one_dimensional(self):
        """Test one dimensional"""
        self.assertAlmostEqual(radius_hint(math.exp(-1), 100, 1.0, 1), 0.1)

    def test_four_dimensional(self):
        """Test four dimensional"""
        self.assertAlmostEqual(radius_hint(math.exp(-1), 16, 1.0, 4), 0.5)

    def test_shrinks_with_samples(self):
        """Test shrinks with samples"""
        self.assertLess(radius_hint(0.05, 10 ** 8, 1.0, 1), 1e-3)

    def test_epsilon_range(self):
        """Test epsilon range"""
        with self.assertRaises(ProblemValidationError):
            radius_hint(1.5, 10, 1.0, 1)


class SampleFileTestCase(SimpleTestCase):
    """Test cases for sample files."""

    def test_comments_and_blank_lines(self):
        """Test comments and blank lines"""
        samples = parse_samples('# header\n1 2\n\n3 4  # trailing\n')
        np.testing.assert_array_equal(samples.samples, [[1.0, 2.0], [3.0, 4.0]])

    def test_ragged_rows_report_line(self):
        """Test ragged rows report line"""
        with self.assertRaises(ProblemFormatError) as context:
            parse_samples('1 2\n3\n', path='xi.txt')
        self.assertEqual(context.exception.line, 2)

    def test_bad_number(self):
        """Test bad number"""
        with self.assertRaises(ProblemFormatError):
            parse_samples('1.0\nabc\n')

    def test_formatted_samples_parse_back(self):
        """Test formatted samples parse back"""
        samples = SampleSet(np.random.default_rng(5).normal(size=(4, 2)))
        np.testing.assert_array_equal(parse_samples(format_samples(samples)).samples, samples.samples)
