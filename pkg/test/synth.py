"""
Tests for synthetic scene rendering.

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

from pathlib import Path
from tempfile import TemporaryDirectory
import unittest
import numpy
from nint.camera import Ideal_Pinhole, load_camera
from nint.config import ConfigurationError
from nint.graph import build_graph
from nint.synth import Plane, Scene, SceneError, Sphere_Cap, Step_Planes, \
    Wave, ground_truth_alpha, load_scene, render, render_depth, \
    render_normals

class PlaneTest(unittest.TestCase):
    """
    Tests for planar scenes.
    """

    def test_init(self) -> None:
        """
        Test orienting the plane normal toward the camera.
        """

        plane = Plane((0.0, 0.0, 2.0), (0.0, 0.0, 4.0))
        numpy.testing.assert_array_equal(plane.normal, [0.0, 0.0, -1.0])
        self.assertEqual(plane.offset, -2.0)

        with self.assertRaises(SceneError):
            Plane((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        with self.assertRaises(SceneError):
            Plane((0.0, 0.0, 2.0), (0.0, 0.0, 0.0))

    def test_render(self) -> None:
        """
        Test rendering a slanted plane.
        """

        camera = Ideal_Pinhole(60, 60, 32, 32)
        scene = load_scene('test/sample/plane.cfg')
        self.assertIsInstance(scene, Plane)
        rendering = render(scene, camera, 64, 48)
        self.assertTrue(numpy.all(rendering.mask))
        self.assertAlmostEqual(rendering.depth[32, 32], 2.0, places=12)

        rays = camera.build_ray_map(64, 48)
        points = rendering.depth[..., numpy.newaxis] * rays
        normal = numpy.array([0.3, -0.2, -1.0]) / numpy.linalg.norm([0.3, -0.2, -1.0])
        numpy.testing.assert_allclose(points @ normal, points[32, 32] @ normal,
                                      rtol=1e-12)
        numpy.testing.assert_allclose(rendering.normals,
                                      numpy.broadcast_to(normal, (48, 64, 3)))

        depth, mask = render_depth(scene, camera, 64, 48)
        numpy.testing.assert_array_equal(depth, rendering.depth)
        numpy.testing.assert_array_equal(mask, rendering.mask)
        numpy.testing.assert_array_equal(render_normals(scene, camera, 64, 48),
                                         rendering.normals)

class SphereCapTest(unittest.TestCase):
    """
    Tests for spherical scenes.
    """

    def test_init(self) -> None:
        """
        Test validating the sphere.
        """

        with self.assertRaises(SceneError):
            Sphere_Cap((0.0, 0.0, 4.0), 5.0)
        with self.assertRaises(SceneError):
            Sphere_Cap((0.0, 0.0, -4.0), 1.0)
        with self.assertRaises(SceneError):
            Sphere_Cap((0.0, 0.0, 4.0), 0.0)

    def test_render(self) -> None:
        """
        Test rendering the visible cap of a sphere.
        """

        camera = Ideal_Pinhole(10, 10, 16, 16)
        scene = load_scene('test/sample/sphere.cfg')
        rendering = render(scene, camera, 33, 33)
        self.assertAlmostEqual(rendering.depth[16, 16], 3.0, places=12)
        numpy.testing.assert_allclose(rendering.normals[16, 16], [0.0, 0.0, -1.0],
                                      atol=1e-12)

        # The cap spans rays within tan(asin(1 / 4)) of the axis.
        self.assertFalse(rendering.mask[0, 0])
        self.assertTrue(rendering.mask[16, 18])
        self.assertFalse(rendering.mask[16, 30])
        self.assertEqual(rendering.depth[0, 0], 0.0)
        numpy.testing.assert_array_equal(rendering.normals[0, 0], [0.0, 0.0, 0.0])

        rays = camera.build_ray_map(33, 33)
        mask = rendering.mask
        points = rendering.depth[mask][:, numpy.newaxis] * rays[mask]
        numpy.testing.assert_allclose(numpy.linalg.norm(points - [0.0, 0.0, 4.0],
                                                        axis=1), 1.0, rtol=1e-10)
        numpy.testing.assert_allclose(numpy.linalg.norm(rendering.normals[mask],
                                                        axis=1), 1.0)
        facing = numpy.einsum('ij,ij->i', rendering.normals[mask], rays[mask])
        self.assertTrue(numpy.all(facing < 0))

class StepPlanesTest(unittest.TestCase):
    """
    Tests for two planes with a depth discontinuity between them.
    """

    def setUp(self) -> None:
        self.camera = load_camera('test/sample/pinhole.cfg')

    def test_render(self) -> None:
        """
        Test rendering a fronto-parallel step.
        """

        scene = load_scene('test/sample/step.cfg')
        self.assertIsInstance(scene, Step_Planes)
        rendering = render(scene, self.camera, 32, 32)
        self.assertTrue(numpy.all(rendering.mask))
        numpy.testing.assert_allclose(rendering.depth[:, :16], 2.0, rtol=1e-15)
        numpy.testing.assert_allclose(rendering.depth[:, 16:], 3.0, rtol=1e-15)
        numpy.testing.assert_array_equal(rendering.normals[..., 2], -1.0)

    def test_slanted(self) -> None:
        """
        Test rendering a step between planes with their own normals.
        """

        scene = Step_Planes(2.0, 3.0, (0.0, 1.0, -10.5),
                            near_normal=(0.0, 0.3, -1.0))
        rendering = render(scene, self.camera, 16, 16)
        rays = self.camera.build_ray_map(16, 16)
        near = scene.near.normal
        numpy.testing.assert_allclose(rendering.normals[5, 3], near)
        numpy.testing.assert_allclose(rendering.normals[12, 3], [0.0, 0.0, -1.0])
        self.assertAlmostEqual(float(rendering.depth[5, 3] * rays[5, 3] @ near),
                               scene.near.offset)

    def test_errors(self) -> None:
        """
        Test rejecting invalid steps.
        """

        with self.assertRaises(SceneError):
            Step_Planes(0.0, 3.0, (1.0, 0.0, -15.5))
        with self.assertRaises(SceneError):
            Step_Planes(2.0, 3.0, (0.0, 0.0, 1.0))

        scene = Step_Planes(2.0, 3.0, (1.0, 0.0, -16.0))
        with self.assertRaisesRegex(SceneError, 'between pixel centers'):
            render(scene, self.camera, 32, 32)

    def test_ground_truth_alpha(self) -> None:
        """
        Test the relative discontinuities at the step.
        """

        scene = load_scene('test/sample/step.cfg')
        rendering = render(scene, self.camera, 32, 32)
        graph = build_graph(rendering.mask, rendering.normals,
                            self.camera.build_ray_map(32, 32))
        alpha = ground_truth_alpha(rendering.depth, graph)
        maps = graph.pair_maps(alpha)

        numpy.testing.assert_allclose(maps['right'][:, 15], -1 / 3)
        numpy.testing.assert_allclose(maps['left'][:, 16], 0.5)
        numpy.testing.assert_allclose(numpy.delete(maps['right'], 15, axis=1), 0.0,
                                      atol=1e-12)
        numpy.testing.assert_allclose(maps['down'], 0.0, atol=1e-12)

        # Depth jump times the far depth is the depth difference.
        epsilon = alpha * rendering.depth.ravel()[graph.pixels[graph.b]]
        jump = numpy.flatnonzero(numpy.abs(alpha) > 1e-6)
        depth = rendering.depth.ravel()
        numpy.testing.assert_allclose(epsilon[jump],
                                      depth[graph.pixels[graph.a[jump]]] -
                                      depth[graph.pixels[graph.b[jump]]])

        with self.assertRaises(ValueError):
            ground_truth_alpha(numpy.zeros((32, 32)), graph)

class WaveTest(unittest.TestCase):
    """
    Tests for sinusoidal graph surfaces.
    """

    def setUp(self) -> None:
        self.camera = load_camera('test/sample/pinhole.cfg')
        self.rays = self.camera.build_ray_map(24, 20)

    def test_render(self) -> None:
        """
        Test that rendered depths lie on the surface.
        """

        scene = load_scene('test/sample/wave.cfg')
        if not isinstance(scene, Wave): # pragma: no cover
            self.fail('Scene configuration did not load a wave')

        rendering = render(scene, self.camera, 24, 20)
        self.assertTrue(numpy.all(rendering.mask))
        depth = rendering.depth
        surface = scene.height(depth * self.rays[..., 0], depth * self.rays[..., 1])
        numpy.testing.assert_allclose(depth, surface, atol=1e-10)

        # Normals are perpendicular to chords between neighboring pixels.
        points = depth[..., numpy.newaxis] * self.rays
        chords = points[1:-1, 2:] - points[1:-1, :-2]
        chords /= numpy.linalg.norm(chords, axis=-1, keepdims=True)
        cosines = numpy.einsum('...i,...i->...', chords, rendering.normals[1:-1, 1:-1])
        self.assertLess(float(numpy.max(numpy.abs(cosines))), 2e-2)

    def test_flat(self) -> None:
        """
        Test that a wave without amplitude is a fronto-parallel plane.
        """

        rendering = render(Wave(3.0, 0.0, 4.0, 3.0), self.camera, 24, 20)
        numpy.testing.assert_allclose(rendering.depth, 3.0, atol=1e-11)
        numpy.testing.assert_allclose(rendering.normals,
                                      numpy.broadcast_to([0.0, 0.0, -1.0], (20, 24, 3)))

    def test_errors(self) -> None:
        """
        Test rejecting waves that are not graph surfaces in depth.
        """

        with self.assertRaises(SceneError):
            Wave(3.0, 0.6, 4.0, 3.0)
        with self.assertRaises(SceneError):
            Wave(3.0, -0.6, 4.0, 3.0)
        with self.assertRaises(SceneError):
            Wave(3.0, 1.5, 4.0, 3.0)
        self.assertEqual(Wave(3.0, 0.59, 4.0, 3.0).amplitude, 0.59)
        with self.assertRaises(SceneError):
            Wave(0.0, 0.0, 4.0, 3.0)

class SceneTest(unittest.TestCase):
    """
    Tests for scene registration and configuration files.
    """

    def test_get_type(self) -> None:
        """
        Test retrieving registered scene classes.
        """

        self.assertIs(Scene.get_type('plane'), Plane)
        self.assertIs(Scene.get_type('sphere'), Sphere_Cap)
        self.assertIs(Scene.get_type('step'), Step_Planes)
        self.assertIs(Scene.get_type('wave'), Wave)
        with self.assertRaises(SceneError):
            Scene.get_type('cube')

    def test_get_keys(self) -> None:
        """
        Test retrieving the keys of scene configuration files.
        """

        self.assertEqual(Scene.get_keys(),
                         ('amplitude', 'center', 'far_normal', 'fu', 'fv',
                          'near_normal', 'normal', 'point', 'radius', 'scene',
                          'split', 'z0', 'z_far', 'z_near'))

    def test_load_scene(self) -> None:
        """
        Test reading invalid scene configuration files.
        """

        with TemporaryDirectory() as directory:
            path = Path(directory, 'scene.cfg')
            cases = {
                'scene = cube\n': SceneError,
                'radius = 1\n': SceneError,
                'scene = sphere\ncenter = 0 0 4\nradius = 1\nz0 = 3\n': SceneError,
                'scene = sphere\ncenter = 0 4\nradius = 1\n': SceneError,
                'scene = sphere\ncenter = 0 0 four\nradius = 1\n': SceneError,
                'scene = sphere\ncenter = 0 0 4\n': SceneError,
                'scene = sphere\ncenter = 0 0 4\nradius = one\n': SceneError,
                'scene = sphere\ncolor = red\n': ConfigurationError
            }
            for text, error in cases.items():
                with self.subTest(text=text):
                    path.write_text(text, encoding='utf-8')
                    with self.assertRaises(error):
                        load_scene(path)

            path.write_text('scene = step\nz_near = 1\nz_far = 2\n'
                            'split = 1, 0, -3.5\nfar_normal = 0 0.1 -1\n',
                            encoding='utf-8')
            scene = load_scene(path)

        if not isinstance(scene, Step_Planes): # pragma: no cover
            self.fail('Scene configuration did not load a step')
        self.assertEqual(scene.split, (1.0, 0.0, -3.5))
        numpy.testing.assert_array_equal(scene.near.normal, [0.0, 0.0, -1.0])
        self.assertGreater(scene.far.normal[1], 0.0)
