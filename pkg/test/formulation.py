"""
Tests for per-pair quantities of the local planarity formulation.

Copyright 2024-2025 nint developers

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

import math
import unittest
import numpy
from numpy.random import Generator, PCG64
from nint.formulation import Beta_Params, DegenerateRay, Gamma_Mode, \
    Lambda_Mode, NonPositiveLogArgument, Pair_Coefficients, SingularSystem, \
    beta_activation, coefficient_arrays, gamma_factor, interp_tau_m, \
    local_plane_oracle, log_rhs, log_rhs_arrays, pair_coefficients, sigmoid

FRONT = (0.0, 0.0, -1.0)

class SigmoidTest(unittest.TestCase):
    """
    Tests for the clamped logistic function.
    """

    def test_sigmoid(self) -> None:
        """
        Test evaluating the logistic function with a sharpness.
        """

        self.assertEqual(sigmoid(0.0), 0.5)
        self.assertAlmostEqual(float(sigmoid(0.3, 2.0)), 1 / (1 + math.exp(-0.6)))
        self.assertEqual(float(sigmoid(1e6)), 1.0)
        self.assertLess(float(sigmoid(-1e6)), 1e-200)
        numpy.testing.assert_allclose(sigmoid(numpy.array([-1.0, 1.0]), 3.0),
                                      [0.04742587, 0.95257413], rtol=1e-7)

class LambdaModeTest(unittest.TestCase):
    """
    Tests for choices of the intermediate ray.
    """

    def test_parse(self) -> None:
        """
        Test parsing textual lambda modes.
        """

        mode = Lambda_Mode.parse('const:0.5')
        self.assertEqual(mode.NAME, 'const')
        self.assertEqual(mode.value, 0.5)
        self.assertEqual(str(mode), 'const:0.5')
        self.assertEqual(Lambda_Mode.parse('ntau:2'), Lambda_Mode.parse('ntau:2.0'))
        self.assertNotEqual(Lambda_Mode.parse('nz:2'), Lambda_Mode.parse('prod:2'))
        self.assertEqual(repr(Lambda_Mode.parse('prod:3')),
                         "Lambda_Mode.parse('prod:3')")

        with self.assertRaises(ValueError):
            Lambda_Mode.parse('middle:0.5')
        with self.assertRaises(ValueError):
            Lambda_Mode.parse('const')
        with self.assertRaises(ValueError):
            Lambda_Mode.parse('const:1.5')
        with self.assertRaises(ValueError):
            Lambda_Mode.parse('nz:0')

    def test_interp_tau_m(self) -> None:
        """
        Test computing the intermediate ray.
        """

        tau_a = (0.0, 0.0, 1.0)
        tau_b = (0.1, 0.0, 1.0)
        tau_m = interp_tau_m(tau_a, tau_b, FRONT, FRONT,
                             Lambda_Mode.parse('const:0.5'))
        numpy.testing.assert_allclose(tau_m, [0.05, 0.0, 1.0])
        self.assertEqual(tau_m[2], 1.0)

        # Squared z components differ by 0.3, so lambda is sigmoid(0.6).
        n_b = (math.sqrt(0.3), 0.0, -math.sqrt(0.7))
        tau_m = interp_tau_m(tau_a, tau_b, FRONT, n_b, Lambda_Mode.parse('nz:2'))
        self.assertAlmostEqual(tau_m[0], 0.1 * 0.6456563062, places=9)

    def test_symmetry(self) -> None:
        """
        Test that adaptive modes share the intermediate ray between both
        directions of a pair.
        """

        rng = Generator(PCG64(7))
        tau_a = numpy.concatenate([rng.uniform(-0.5, 0.5, (50, 2)),
                                   numpy.ones((50, 1))], axis=1)
        tau_b = tau_a + numpy.array([0.01, 0.0, 0.0])
        n_a = rng.normal(size=(50, 3)) + numpy.array([0.0, 0.0, -3.0])
        n_b = rng.normal(size=(50, 3)) + numpy.array([0.0, 0.0, -3.0])
        n_a /= numpy.linalg.norm(n_a, axis=1, keepdims=True)
        n_b /= numpy.linalg.norm(n_b, axis=1, keepdims=True)

        for text in ('ntau:2', 'nz:1', 'prod:3', 'const:0.5'):
            with self.subTest(mode=text):
                mode = Lambda_Mode.parse(text)
                forward = mode.interpolation(n_a, tau_a, n_b, tau_b)
                backward = mode.interpolation(n_b, tau_b, n_a, tau_a)
                numpy.testing.assert_allclose(forward + backward, 1.0, atol=1e-12)
                numpy.testing.assert_allclose(interp_tau_m(tau_a, tau_b, n_a, n_b, mode),
                                              interp_tau_m(tau_b, tau_a, n_b, n_a, mode),
                                              atol=1e-12)

class GammaModeTest(unittest.TestCase):
    """
    Tests for decompositions of the equation scale factor.
    """

    def test_parse(self) -> None:
        """
        Test parsing textual gamma modes.
        """

        self.assertEqual(Gamma_Mode.parse('full'), Gamma_Mode('full'))
        mode = Gamma_Mode.parse('const_f:2000')
        self.assertEqual(mode.name, 'const_f')
        self.assertEqual(str(mode), 'const_f:2000')

        with self.assertRaises(ValueError):
            Gamma_Mode.parse('half')
        with self.assertRaises(ValueError):
            Gamma_Mode.parse('const_f')
        with self.assertRaises(ValueError):
            Gamma_Mode.parse('const_f:-1')
        with self.assertRaises(ValueError):
            Gamma_Mode.parse('no_f:2')

    def test_sides(self) -> None:
        """
        Test the cost and weight sides of each mode.
        """

        expected = {
            'full': (-60.0, -60.0),
            'no_f': (-0.5, -60.0),
            'const_f:10': (-5.0, -5.0),
            'no_ndott': (120.0, -60.0)
        }
        for text, (cost, weight) in expected.items():
            with self.subTest(mode=text):
                mode = Gamma_Mode.parse(text)
                self.assertAlmostEqual(float(mode.cost(120.0, -0.5)), cost)
                self.assertAlmostEqual(float(mode.weight(120.0, -0.5)), weight)

    def test_gamma_factor(self) -> None:
        """
        Test computing gamma for a pixel and its neighbor.
        """

        tau_a = (0.0, 0.0, 1.0)
        tau_b = (1 / 600, 0.0, 1.0)
        self.assertAlmostEqual(gamma_factor(FRONT, tau_a, (320, 240), (321, 240), tau_b),
                               -600.0, places=6)
        self.assertAlmostEqual(gamma_factor(FRONT, tau_a, (320, 240), (321, 240), tau_b,
                                            Gamma_Mode('no_f')), -1.0)
        self.assertAlmostEqual(gamma_factor((0.6, 0.0, -0.8), tau_a, (320, 240),
                                            (321, 240), tau_b,
                                            Gamma_Mode.parse('const_f:2000')),
                               -1600.0)
        self.assertAlmostEqual(gamma_factor(FRONT, tau_a, (320, 240), (321, 240), tau_b,
                                            Gamma_Mode('no_ndott')), 600.0, places=6)

        with self.assertRaises(DegenerateRay):
            gamma_factor(FRONT, tau_a, (0, 0), (1, 0), tau_a)
        with self.assertRaises(ValueError):
            gamma_factor(FRONT, tau_a, (0, 0), (0, 0), tau_b)

class BetaActivationTest(unittest.TestCase):
    """
    Tests for the discontinuity activation.
    """

    def test_params(self) -> None:
        """
        Test validating the activation parameters.
        """

        self.assertEqual(Beta_Params(), Beta_Params(50, 0.25))
        self.assertEqual(repr(Beta_Params(10, 0.5)), 'Beta_Params(q=10, rho=0.5)')
        with self.assertRaises(ValueError):
            Beta_Params(0, 0.25)
        with self.assertRaises(ValueError):
            Beta_Params(50, 1.0)

    def test_beta_activation(self) -> None:
        """
        Test activating discontinuities from previous bilateral weights.
        """

        self.assertAlmostEqual(float(beta_activation(0.0)), 0.9999962733, places=9)
        self.assertAlmostEqual(float(beta_activation(0.5)), 3.7266e-6, delta=1e-9)
        self.assertEqual(float(beta_activation(0.25)), 0.5)
        numpy.testing.assert_allclose(beta_activation(numpy.array([0.5, 0.0]),
                                                      Beta_Params(10, 0.5)),
                                      [0.5, 1 / (1 + math.exp(-5))])

class PairCoefficientsTest(unittest.TestCase):
    """
    Tests for the coefficients of the depth relation.
    """

    def test_fronto_parallel(self) -> None:
        """
        Test the coefficients of two pixels on a fronto-parallel plane.
        """

        coeffs = pair_coefficients(FRONT, FRONT, (0.0, 0.0, 1.0), (0.1, 0.0, 1.0),
                                   (0.05, 0.0, 1.0))
        self.assertEqual(coeffs.omega_eps, 1.0)
        self.assertEqual(coeffs.omega, 1.0)
        self.assertAlmostEqual(coeffs.gamma, -10.0)
        self.assertTrue(coeffs.valid)
        self.assertEqual(coeffs.n_dot_tau_a, -1.0)

    def test_slanted(self) -> None:
        """
        Test that the relation reproduces depth on a slanted plane.
        """

        normal = numpy.array([0.3, -0.2, -1.0])
        normal /= numpy.linalg.norm(normal)
        tau_a = numpy.array([0.1, 0.2, 1.0])
        tau_b = numpy.array([0.12, 0.2, 1.0])
        offset = float(numpy.dot(normal, [0.0, 0.0, 2.0]))
        z_a = offset / float(numpy.dot(normal, tau_a))
        z_b = offset / float(numpy.dot(normal, tau_b))

        tau_m = interp_tau_m(tau_a, tau_b, normal, normal,
                             Lambda_Mode.parse('ntau:2'))
        coeffs = pair_coefficients(normal, normal, tau_a, tau_b, tau_m)
        self.assertAlmostEqual(coeffs.omega * z_b, z_a, places=12)

    def test_degenerate(self) -> None:
        """
        Test detecting pairs with vanishing denominators.
        """

        with self.assertRaises(DegenerateRay):
            pair_coefficients((1.0, 0.0, 0.0), FRONT, (0.0, 0.0, 1.0),
                              (0.1, 0.0, 1.0), (0.05, 0.0, 1.0))

        arrays = coefficient_arrays(numpy.array([[1.0, 0.0, 0.0], FRONT]),
                                    numpy.array([FRONT, FRONT]),
                                    numpy.array([[0.0, 0.0, 1.0]] * 2),
                                    numpy.array([[0.1, 0.0, 1.0]] * 2),
                                    numpy.array([[0.05, 0.0, 1.0]] * 2))
        numpy.testing.assert_array_equal(arrays.degenerate, [True, False])
        numpy.testing.assert_array_equal(arrays.valid, [False, True])
        self.assertEqual(arrays.omega[0], 0.0)
        self.assertEqual(arrays.omega_eps[0], 0.0)

    def test_back_facing(self) -> None:
        """
        Test that pairs facing away from the camera are not valid.
        """

        coeffs = pair_coefficients((0.0, 0.0, 1.0), (0.0, 0.0, 1.0),
                                   (0.0, 0.0, 1.0), (0.1, 0.0, 1.0),
                                   (0.05, 0.0, 1.0))
        self.assertFalse(coeffs.valid)

    def test_delta(self) -> None:
        """
        Test the right-hand side of the perspective BiNI relation.
        """

        normal = (0.6, 0.0, -0.8)
        arrays = coefficient_arrays(numpy.array([normal]), numpy.array([normal]),
                                    numpy.array([[0.0, 0.0, 1.0]]),
                                    numpy.array([[0.1, 0.0, 1.0]]),
                                    numpy.array([[0.05, 0.0, 1.0]]))
        self.assertAlmostEqual(float(arrays.scale[0]), 10.0)
        self.assertAlmostEqual(float(arrays.delta[0]), 0.6)

class LocalPlaneOracleTest(unittest.TestCase):
    """
    Tests for the dense local plane system.
    """

    def test_fronto_parallel(self) -> None:
        """
        Test a jump in front of a fronto-parallel plane.
        """

        depth = local_plane_oracle(FRONT, FRONT, (0.0, 0.0, 1.0), (0.1, 0.0, 1.0),
                                   (0.05, 0.0, 1.0), 2.0, 0.5)
        self.assertAlmostEqual(depth, 2.5, places=12)

    def test_errors(self) -> None:
        """
        Test rejecting singular systems and invalid depths.
        """

        with self.assertRaises(SingularSystem):
            local_plane_oracle(FRONT, (1.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                               (0.1, 0.0, 1.0), (0.0, 0.0, 1.0), 2.0, 0.0)
        with self.assertRaises(ValueError):
            local_plane_oracle(FRONT, FRONT, (0.0, 0.0, 1.0), (0.1, 0.0, 1.0),
                               (0.05, 0.0, 1.0), 0.0, 0.0)

    def test_closed_form(self) -> None:
        """
        Test that the closed-form relation agrees with the dense system on
        random neighboring pixel rays with midpoint intermediate rays.
        """

        rng = Generator(PCG64(20240229))
        offsets = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)]
        checked = 0
        while checked < 10000:
            focal = rng.uniform(300.0, 1000.0)
            du, dv = offsets[rng.integers(len(offsets))]
            tau_a = numpy.array([*rng.uniform(-0.6, 0.6, 2), 1.0])
            tau_b = tau_a + numpy.array([du / focal, dv / focal, 0.0])
            tau_m = 0.5 * (tau_a + tau_b)
            n_a = rng.normal(size=3)
            n_b = rng.normal(size=3)
            n_a /= numpy.linalg.norm(n_a)
            n_b /= numpy.linalg.norm(n_b)
            if not numpy.dot(n_a, tau_a) < 0 or not numpy.dot(n_b, tau_b) < 0:
                continue

            z_b = rng.uniform(0.5, 5.0)
            epsilon = rng.uniform(-1.0, 1.0)
            try:
                coeffs = pair_coefficients(n_a, n_b, tau_a, tau_b, tau_m)
            except DegenerateRay:
                continue
            if not coeffs.valid:
                continue

            expected = local_plane_oracle(n_a, n_b, tau_a, tau_b, tau_m, z_b, epsilon)
            if not expected > 0:
                continue

            actual = coeffs.omega_eps * epsilon + coeffs.omega * z_b
            self.assertLessEqual(abs(actual - expected), 1e-9 * abs(expected))
            checked += 1

class LogRhsTest(unittest.TestCase):
    """
    Tests for the log-depth right-hand side.
    """

    @staticmethod
    def _coefficients(omega: float, omega_eps: float,
                      valid: bool = True) -> Pair_Coefficients:
        return Pair_Coefficients(omega_eps, omega, -1.0,
                                 numpy.array([0.0, 0.0, 1.0]), -1.0, -1.0,
                                 -1.0, -1.0, valid)

    def test_log_rhs(self) -> None:
        """
        Test computing the right-hand side for a discontinuity.
        """

        self.assertAlmostEqual(log_rhs(self._coefficients(0.98, -1.2), 0.1, 0.5),
                               math.log(0.92), places=12)
        self.assertAlmostEqual(log_rhs(self._coefficients(1.0, 1.0), 1.0, 1.0),
                               math.log(2.0), places=12)
        self.assertEqual(log_rhs(self._coefficients(1.0, 1.0), 0.0, 1.0), 0.0)

        with self.assertRaises(ValueError):
            log_rhs(self._coefficients(1.0, 1.0, valid=False), 0.0, 1.0)
        with self.assertRaises(NonPositiveLogArgument):
            log_rhs(self._coefficients(0.5, 1.0), -1.0, 1.0)

    def test_log_rhs_arrays(self) -> None:
        """
        Test computing right-hand sides for arrays of pairs.
        """

        values = log_rhs_arrays(numpy.array([1.0, 2.0]), numpy.array([1.0, 1.0]),
                                numpy.array([0.0, 1.0]), numpy.array([1.0, 0.0]))
        numpy.testing.assert_allclose(values, [0.0, math.log(2.0)])

        with self.assertRaises(NonPositiveLogArgument) as context:
            log_rhs_arrays(numpy.array([1.0, 0.5, 0.5]), numpy.ones(3),
                           numpy.array([0.0, 0.0, -1.0]), numpy.ones(3))
        self.assertEqual(context.exception.index, 2)
