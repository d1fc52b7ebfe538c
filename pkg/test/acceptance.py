"""
Acceptance-scale tests of integration quality on rendered scenes.

These tests render scenes of up to 128x128 pixels and run up to 1200 outer
iterations. They only run when the NINT_ACCEPTANCE environment variable is
set, for example through `python tests.py --acceptance`.

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

import os
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import Callable, List
import unittest
from unittest.mock import patch
import numpy
from nint.camera import Brown_Conrady_Pinhole, Camera_Model, Ideal_Pinhole
from nint.files import write_depth_map
from nint.formulation import Gamma_Mode
from nint.graph import Pair_Graph, build_graph
from nint.metrics import formulation_residuals, made, relative_errors
from nint.noise import Noise_Spec, corrupt, mitigation_filter
from nint.solver import Integration_Result, Method, Solver_Config, \
    Solver_State, bilateral_weights, integrate
from nint.synth import Plane, Rendering, Sphere_Cap, Step_Planes, \
    ground_truth_alpha, render

ACCEPTANCE = bool(os.getenv('NINT_ACCEPTANCE'))
SKIP_REASON = 'Set NINT_ACCEPTANCE to run acceptance-scale tests'

def relative_made(result: Integration_Result, rendering: Rendering) -> float:
    """
    Compute the mean absolute depth error after median alignment in log
    depth, relative to the mean ground truth depth.
    """

    error = made(result.depth, rendering.depth, rendering.mask, 'median', 'log')
    return error / float(numpy.mean(rendering.depth[rendering.mask]))

@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class PlanarExactnessTest(unittest.TestCase):
    """
    Tests for exact pair equations and recovery on slanted planes.
    """

    def setUp(self) -> None:
        self.camera = Ideal_Pinhole(60, 60, 31.5, 31.5)
        self.rng = numpy.random.default_rng(2024)

    def test_residuals(self) -> None:
        """
        Test that pair equations hold at ground truth on random planes,
        unlike the orthographic-style equations without discontinuities.
        """

        for scene_index in range(20):
            normal = self.rng.normal(size=3)
            normal[2] = -abs(normal[2]) - 1.0
            point = (0.0, 0.0, self.rng.uniform(1.0, 5.0))
            rendering = render(Plane(point, normal), self.camera, 64, 64)
            with self.subTest(scene=scene_index):
                ours = formulation_residuals(rendering.normals, rendering.depth,
                                             self.camera)
                bini = formulation_residuals(rendering.normals, rendering.depth,
                                             self.camera, method=Method.BINI)
                self.assertLess(ours.mean, 1e-10)
                self.assertGreater(bini.mean, 1e-6)
                self.assertLess(ours.mean, bini.mean)

    def test_plane(self) -> None:
        """
        Test recovering a slanted plane with the full method.
        """

        camera = Ideal_Pinhole(120, 120, 63.5, 63.5)
        rendering = render(Plane((0.0, 0.0, 3.0), (0.3, -0.2, -1.0)), camera,
                           128, 128)
        config = Solver_Config(max_outer_iters=200, cg_tol=1e-12,
                               cg_max_iters=20000)
        result = integrate(rendering.normals, rendering.mask, camera, config)
        self.assertLess(relative_made(result, rendering), 1e-6)

@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class StepPlanesTest(unittest.TestCase):
    """
    Tests for integrating across a depth discontinuity between two slanted
    planes.
    """

    @classmethod
    def setUpClass(cls) -> None:
        cls.camera = Ideal_Pinhole(60, 60, 31.5, 31.5)
        cls.scene = Step_Planes(2.0, 3.0, (1.0, 0.0, -31.5),
                                near_normal=(0.3, 0.2, -1.0),
                                far_normal=(-0.2, 0.3, -1.0))
        cls.rendering = render(cls.scene, cls.camera, 64, 64)
        cls.full = integrate(cls.rendering.normals, cls.rendering.mask,
                             cls.camera, Solver_Config(max_outer_iters=1200))

    def test_known_discontinuities(self) -> None:
        """
        Test near-perfect recovery when the discontinuities are given.
        """

        config = Solver_Config(max_outer_iters=300, alpha_enabled=False,
                               beta_override=1.0)
        graph = build_graph(self.rendering.mask, self.rendering.normals,
                            self.camera.build_ray_map(64, 64),
                            config.lambda_mode, config.gamma_mode,
                            config.connectivity)
        alpha = ground_truth_alpha(self.rendering.depth, graph)

        result = integrate(self.rendering.normals, self.rendering.mask,
                           self.camera, config, alpha_init=graph.pair_maps(alpha))
        self.assertLess(relative_made(result, self.rendering), 1e-4)

    def test_localization(self) -> None:
        """
        Test that low bilateral weights mark the pairs crossing the step.
        """

        graph = self.full.graph
        v, u = numpy.divmod(graph.pixels, 64)
        side = self.scene.side(u, v)
        crossing = side[graph.a] != side[graph.b]
        self.assertEqual(int(numpy.count_nonzero(crossing)), 2 * 64)

        detected = self.full.weights < 0.5
        true_positives = int(numpy.count_nonzero(detected & crossing))
        precision = true_positives / max(int(numpy.count_nonzero(detected)), 1)
        recall = true_positives / int(numpy.count_nonzero(crossing))
        self.assertGreaterEqual(precision, 0.8)
        self.assertGreaterEqual(recall, 0.8)

        a, b, c = self.scene.split
        distance = numpy.abs(a * u + b * v + c) / numpy.hypot(a, b)
        near = (distance[graph.a] <= 1.5) & (distance[graph.b] <= 1.5)
        close = int(numpy.count_nonzero(detected & near))
        self.assertGreaterEqual(close / max(int(numpy.count_nonzero(detected)), 1),
                                0.9)

    def test_iterations(self) -> None:
        """
        Test that more outer iterations do not increase the depth error.
        """

        short = integrate(self.rendering.normals, self.rendering.mask,
                          self.camera, Solver_Config(max_outer_iters=150))
        self.assertLessEqual(relative_made(self.full, self.rendering),
                             relative_made(short, self.rendering))

def record_complementarity(deviations: List[float]) -> Callable[..., numpy.ndarray]:
    """
    Wrap the bilateral weights so that each call records the largest
    deviation from 1 of the weight sums of opposite pairs.
    """

    def record(state: Solver_State, graph: Pair_Graph,
               k: float = 2.0) -> numpy.ndarray:
        weights = bilateral_weights(state, graph, k)
        has_opposite = graph.opposite >= 0
        total = weights[has_opposite] + weights[graph.opposite[has_opposite]]
        deviations.append(float(numpy.max(numpy.abs(total - 1.0), initial=0.0)))
        return weights

    return record

@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class SphereCapTest(unittest.TestCase):
    """
    Tests for integrating a smooth curved surface.
    """

    @classmethod
    def setUpClass(cls) -> None:
        cls.camera = Ideal_Pinhole(120, 120, 63.5, 63.5)
        cls.scene = Sphere_Cap((0.0, 0.0, 5.0), 1.5)
        cls.rendering = render(cls.scene, cls.camera, 128, 128)
        cls.config = Solver_Config(max_outer_iters=1200)
        cls.deviations: List[float] = []
        with patch('nint.solver.bilateral_weights',
                   side_effect=record_complementarity(cls.deviations)):
            cls.full = integrate(cls.rendering.normals, cls.rendering.mask,
                                 cls.camera, cls.config)

    def integrate(self, normals: numpy.ndarray, camera: Camera_Model,
                  config: Solver_Config) -> Integration_Result:
        """
        Integrate normals of the sphere cap with the rendered mask.
        """

        return integrate(normals, self.rendering.mask, camera, config)

    def test_full_method(self) -> None:
        """
        Test recovering the sphere cap with the default configuration.
        """

        self.assertLess(relative_made(self.full, self.rendering), 5e-3)

        iterations = self.full.diagnostics.iterations
        self.assertEqual(len(self.deviations), iterations)
        for index in sorted({0, iterations // 2, iterations - 1}):
            with self.subTest(iteration=index + 1):
                self.assertLessEqual(self.deviations[index], 1e-12)

        self.assertLessEqual(max(self.deviations), 1e-12)

    def test_deterministic(self) -> None:
        """
        Test that repeating the default configuration writes an identical
        depth map.
        """

        repeat = self.integrate(self.rendering.normals, self.camera, self.config)
        with TemporaryDirectory() as directory:
            contents = []
            for run, result in enumerate((self.full, repeat)):
                path = Path(directory, f'depth{run}.pfm')
                write_depth_map(path, result.depth, result.mask)
                contents.append(path.read_bytes())

        self.assertEqual(contents[0], contents[1])

    def test_gamma_ablation(self) -> None:
        """
        Test that leaving the visibility weight out of the equation scale
        at least doubles the depth error.
        """

        config = Solver_Config(max_outer_iters=300, alpha_enabled=False)
        full = self.integrate(self.rendering.normals, self.camera, config)
        reduced = self.integrate(self.rendering.normals, self.camera,
                                 config.replace(gamma_mode=Gamma_Mode.parse('no_ndott')))
        self.assertGreaterEqual(relative_made(reduced, self.rendering),
                                2 * relative_made(full, self.rendering))

    def test_outliers(self) -> None:
        """
        Test integrating a sphere cap with filtered outlier normals.
        """

        mask = self.rendering.mask
        noisy = corrupt(self.rendering.normals, mask,
                        Noise_Spec.parse('outliers:0.05', seed=11))
        rays = self.camera.build_ray_map(128, 128)
        filtered = mitigation_filter(noisy, rays, mask)
        facing = numpy.einsum('...i,...i->...', filtered, rays)
        self.assertEqual(int(numpy.count_nonzero(facing[mask] > 0)), 0)

        config = Solver_Config(max_outer_iters=600)
        clean = self.integrate(self.rendering.normals, self.camera, config)
        result = self.integrate(filtered, self.camera, config)
        self.assertLessEqual(relative_made(result, self.rendering),
                             3 * relative_made(clean, self.rendering))

@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class DistortedCameraTest(unittest.TestCase):
    """
    Tests for integrating normals seen through a distorted lens.
    """

    def test_brown_conrady(self) -> None:
        """
        Test that the distortion model matters for the recovered depth.
        """

        camera = Brown_Conrady_Pinhole(120, 120, 63.5, 63.5, k1=-0.2)
        rendering = render(Sphere_Cap((0.0, 0.0, 5.0), 1.5), camera, 128, 128)
        config = Solver_Config(max_outer_iters=600)

        result = integrate(rendering.normals, rendering.mask, camera, config)
        _, average = relative_errors(result.depth, rendering.depth, rendering.mask,
                                     'median', 'log')
        self.assertLessEqual(average, 1.0)

        ideal = Ideal_Pinhole(120, 120, 63.5, 63.5)
        wrong = integrate(rendering.normals, rendering.mask, ideal, config)
        _, wrong_average = relative_errors(wrong.depth, rendering.depth,
                                           rendering.mask, 'median', 'log')
        self.assertGreaterEqual(wrong_average, 2 * average)
