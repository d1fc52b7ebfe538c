"""
Analytic ground truth scenes rendered through a camera model.

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

import logging
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple, \
    Type
import numpy
from scipy.optimize import bisect
from .camera import Camera_Model
from .config import Configuration, PathLike
from .graph import Pair_Graph

S_type = Type['Scene']
Point = Sequence[float]

# Scale of n.tau below which a pixel grazes the surface and is masked out.
GRAZING_THRESHOLD = 1e-9

Rendering = NamedTuple('Rendering', [('depth', numpy.ndarray),
                                     ('normals', numpy.ndarray),
                                     ('mask', numpy.ndarray)])

class NonConvergentRoot(RuntimeError):
    """
    Error indicating that the depth of a pixel could not be bracketed or
    refined to tolerance by bisection.
    """

class SceneError(ValueError):
    """
    Error indicating invalid scene parameters.
    """

def _unit(vector: Point, name: str) -> numpy.ndarray:
    array = numpy.asarray(vector, dtype=numpy.float64)
    if array.shape != (3,):
        raise SceneError(f'{name} must be a 3D vector')
    norm = numpy.linalg.norm(array)
    if not norm > 0:
        raise SceneError(f'{name} must not be the zero vector')

    return array / norm

def _parse_vector(text: str, key: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.replace(',', ' ').split())
    except ValueError as error:
        raise SceneError(f"Scene key '{key}' needs numbers, not {text!r}") from error

class Scene:
    """
    Analytic surface that can be intersected with camera rays.

    Rays have the form (tau_x, tau_y, 1) so that the intersection at depth z
    is the point z times the ray.
    """

    KEYS: Tuple[str, ...] = ()

    _scene_types: Dict[str, S_type] = {}

    @classmethod
    def register(cls, name: str) -> Callable[[S_type], S_type]:
        """
        Decorator method for a class that implements a scene under the
        `name` used in scene configuration files.
        """

        def decorator(subject: S_type) -> S_type:
            cls._scene_types[name] = subject
            return subject

        return decorator

    @classmethod
    def get_type(cls, name: str) -> S_type:
        """
        Retrieve the class registered for the given scene name.
        """

        if name not in cls._scene_types:
            raise SceneError(f"Scene '{name}' is not supported")

        return cls._scene_types[name]

    @classmethod
    def get_keys(cls) -> Tuple[str, ...]:
        """
        Retrieve the keys that scene configuration files may contain.
        """

        keys = {'scene'}
        for scene_type in cls._scene_types.values():
            keys.update(scene_type.KEYS)

        return tuple(sorted(keys))

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> 'Scene':
        """
        Construct the scene from parsed configuration options.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    @staticmethod
    def _get_float(options: Dict[str, str], key: str,
                   default: Optional[float] = None) -> float:
        if key not in options:
            if default is None:
                raise SceneError(f"Scene configuration lacks '{key}'")
            return default
        try:
            return float(options[key])
        except ValueError as error:
            raise SceneError(f"Scene key '{key}' must be a number") from error

    @staticmethod
    def _get_vector(options: Dict[str, str], key: str, length: int = 3,
                    default: Optional[Point] = None) -> Tuple[float, ...]:
        if key not in options:
            if default is None:
                raise SceneError(f"Scene configuration lacks '{key}'")
            return tuple(default)

        values = _parse_vector(options[key], key)
        if len(values) != length:
            raise SceneError(f"Scene key '{key}' needs {length} numbers")

        return values

    def intersect(self, rays: numpy.ndarray, u: numpy.ndarray,
                  v: numpy.ndarray) -> numpy.ndarray:
        """
        Compute the depth along each ray of shape (..., 3) through pixel
        coordinates `u` and `v`, or NaN where the ray misses the surface.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    def surface_normals(self, rays: numpy.ndarray, depth: numpy.ndarray,
                        u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        """
        Compute the unit surface normals at the intersections with the given
        depths, oriented toward the camera.
        """

        raise NotImplementedError('Must be implemented by subclasses')

@Scene.register('plane')
class Plane(Scene):
    """
    Infinite plane through `point` with the given normal.
    """

    KEYS = ('point', 'normal')

    def __init__(self, point: Point, normal: Point) -> None:
        self.point = numpy.asarray(point, dtype=numpy.float64)
        normal_array = _unit(normal, 'Plane normal')
        offset = float(numpy.dot(normal_array, self.point))
        if offset == 0.0:
            raise SceneError('Plane must not pass through the camera center')
        if offset > 0.0:
            normal_array = -normal_array

        self.normal = normal_array
        self.offset = -abs(offset)

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> Scene:
        return cls(cls._get_vector(options, 'point'),
                   cls._get_vector(options, 'normal'))

    def intersect(self, rays: numpy.ndarray, u: numpy.ndarray,
                  v: numpy.ndarray) -> numpy.ndarray:
        n_dot_tau = rays @ self.normal
        with numpy.errstate(divide='ignore', invalid='ignore'):
            depth = self.offset / n_dot_tau
        return numpy.where(n_dot_tau < -GRAZING_THRESHOLD, depth, numpy.nan)

    def surface_normals(self, rays: numpy.ndarray, depth: numpy.ndarray,
                        u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        return numpy.broadcast_to(self.normal, rays.shape).copy()

    def __repr__(self) -> str:
        return f'Plane(point={self.point.tolist()}, normal={self.normal.tolist()})'

@Scene.register('sphere')
class Sphere_Cap(Scene):
    """
    The visible cap of a sphere in front of the camera.
    """

    KEYS = ('center', 'radius')

    def __init__(self, center: Point, radius: float) -> None:
        self.center = numpy.asarray(center, dtype=numpy.float64)
        if self.center.shape != (3,):
            raise SceneError('Sphere center must be a 3D point')
        if not radius > 0:
            raise SceneError(f'Sphere radius must be positive, not {radius}')
        if not numpy.linalg.norm(self.center) > radius or self.center[2] <= 0:
            raise SceneError('Sphere must lie in front of the camera')

        self.radius = float(radius)

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> Scene:
        return cls(cls._get_vector(options, 'center'),
                   cls._get_float(options, 'radius'))

    def intersect(self, rays: numpy.ndarray, u: numpy.ndarray,
                  v: numpy.ndarray) -> numpy.ndarray:
        # Nearest root of |z tau - c|^2 = r^2.
        quadratic = numpy.einsum('...i,...i->...', rays, rays)
        linear = rays @ self.center
        constant = float(self.center @ self.center) - self.radius ** 2
        discriminant = linear ** 2 - quadratic * constant
        hit = discriminant > 0
        root = numpy.sqrt(numpy.where(hit, discriminant, 0.0))
        depth = (linear - root) / quadratic
        return numpy.where(hit & (depth > 0), depth, numpy.nan)

    def surface_normals(self, rays: numpy.ndarray, depth: numpy.ndarray,
                        u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        points = depth[..., numpy.newaxis] * rays
        normals = (points - self.center) / self.radius
        facing = numpy.einsum('...i,...i->...', normals, rays)
        normals[facing > 0] *= -1.0
        return normals / numpy.linalg.norm(normals, axis=-1, keepdims=True)

    def __repr__(self) -> str:
        return f'Sphere_Cap(center={self.center.tolist()}, radius={self.radius})'

@Scene.register('step')
class Step_Planes(Scene):
    """
    Two planes separated by an image-space line a*u + b*v + c = 0.

    Pixels with a*u + b*v + c < 0 see the near plane, others the far plane.
    Each plane passes through the optical axis at its depth and has a
    fronto-parallel normal unless another one is given.
    """

    KEYS = ('z_near', 'z_far', 'split', 'near_normal', 'far_normal')

    FRONTO_PARALLEL = (0.0, 0.0, -1.0)

    def __init__(self, z_near: float, z_far: float,
                 split: Tuple[float, float, float],
                 near_normal: Point = FRONTO_PARALLEL,
                 far_normal: Point = FRONTO_PARALLEL) -> None:
        if not 0 < z_near or not 0 < z_far:
            raise SceneError('Step plane depths must be positive')
        if len(split) != 3 or (split[0] == 0 and split[1] == 0):
            raise SceneError('Step split line needs coefficients a, b, c with a or b nonzero')

        self.z_near = float(z_near)
        self.z_far = float(z_far)
        self.split = tuple(float(value) for value in split)
        self.near = Plane((0.0, 0.0, self.z_near), near_normal)
        self.far = Plane((0.0, 0.0, self.z_far), far_normal)

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> Scene:
        a, b, c = cls._get_vector(options, 'split')
        return cls(cls._get_float(options, 'z_near'),
                   cls._get_float(options, 'z_far'), (a, b, c),
                   cls._get_vector(options, 'near_normal',
                                   default=cls.FRONTO_PARALLEL),
                   cls._get_vector(options, 'far_normal',
                                   default=cls.FRONTO_PARALLEL))

    def side(self, u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        """
        Determine which pixels see the near plane.

        Raises a `SceneError` if the split line passes through a pixel
        center.
        """

        a, b, c = self.split
        value = a * u + b * v + c
        if numpy.any(numpy.abs(value) <= 1e-9 * max(abs(a), abs(b))):
            raise SceneError('Step split line must pass between pixel centers')

        return value < 0

    def intersect(self, rays: numpy.ndarray, u: numpy.ndarray,
                  v: numpy.ndarray) -> numpy.ndarray:
        return numpy.where(self.side(u, v), self.near.intersect(rays, u, v),
                           self.far.intersect(rays, u, v))

    def surface_normals(self, rays: numpy.ndarray, depth: numpy.ndarray,
                        u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        return numpy.where(self.side(u, v)[..., numpy.newaxis],
                           self.near.normal, self.far.normal)

    def __repr__(self) -> str:
        return f'Step_Planes(z_near={self.z_near}, z_far={self.z_far}, split={self.split})'

@Scene.register('wave')
class Wave(Scene):
    """
    Graph surface z(x, y) = z0 + A * sin(fu * x) * sin(fv * y).
    """

    KEYS = ('z0', 'amplitude', 'fu', 'fv')

    TOLERANCE = 1e-12

    def __init__(self, z0: float, amplitude: float, fu: float, fv: float) -> None:
        if not z0 > 0:
            raise SceneError(f'Wave base depth must be positive, not {z0}')
        if not 5 * abs(amplitude) < z0:
            raise SceneError('Wave amplitude must be below a fifth of its base depth')

        self.z0 = float(z0)
        self.amplitude = float(amplitude)
        self.fu = float(fu)
        self.fv = float(fv)

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> Scene:
        return cls(cls._get_float(options, 'z0'),
                   cls._get_float(options, 'amplitude'),
                   cls._get_float(options, 'fu'), cls._get_float(options, 'fv'))

    def height(self, x: numpy.ndarray, y: numpy.ndarray) -> numpy.ndarray:
        """
        Compute the surface depth above lateral coordinates x and y.
        """

        return self.z0 + self.amplitude * numpy.sin(self.fu * x) * numpy.sin(self.fv * y)

    def _offset(self, z: float, tau_x: float, tau_y: float) -> float:
        return float(z - self.height(z * tau_x, z * tau_y))

    def intersect(self, rays: numpy.ndarray, u: numpy.ndarray,
                  v: numpy.ndarray) -> numpy.ndarray:
        flat = rays.reshape(-1, 3)
        depth = numpy.empty(len(flat))
        for index, (tau_x, tau_y, _) in enumerate(flat):
            try:
                root, result = bisect(self._offset, 0.1 * self.z0,
                                      10.0 * self.z0, args=(tau_x, tau_y),
                                      xtol=self.TOLERANCE, full_output=True,
                                      disp=False)
            except ValueError as error:
                raise NonConvergentRoot(f'Depth along ray ({tau_x}, {tau_y}, 1) '
                                        f'is not bracketed: {error}') from error
            if not result.converged:
                raise NonConvergentRoot(f'Bisection did not converge along ray '
                                        f'({tau_x}, {tau_y}, 1)')
            depth[index] = root

        return depth.reshape(rays.shape[:-1])

    def surface_normals(self, rays: numpy.ndarray, depth: numpy.ndarray,
                        u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        x = depth * rays[..., 0]
        y = depth * rays[..., 1]
        slope_x = self.amplitude * self.fu * numpy.cos(self.fu * x) * numpy.sin(self.fv * y)
        slope_y = self.amplitude * self.fv * numpy.sin(self.fu * x) * numpy.cos(self.fv * y)
        normals = numpy.stack([slope_x, slope_y, -numpy.ones_like(x)], axis=-1)
        return normals / numpy.linalg.norm(normals, axis=-1, keepdims=True)

    def __repr__(self) -> str:
        return f'Wave(z0={self.z0}, amplitude={self.amplitude}, fu={self.fu}, fv={self.fv})'

def render(scene: Scene, camera: Camera_Model, width: int,
           height: int) -> Rendering:
    """
    Render the depth map, normal map and mask of a scene.

    Pixels whose ray misses the surface or whose normal does not face the
    camera are excluded from the mask and hold zero depth and normals.
    """

    rays = camera.build_ray_map(width, height)
    v, u = numpy.mgrid[0:height, 0:width].astype(numpy.float64)
    depth = scene.intersect(rays, u, v)
    hit = numpy.isfinite(depth) & (depth > 0)
    safe_depth = numpy.where(hit, depth, 1.0)

    normals = scene.surface_normals(rays, safe_depth, u, v)
    facing = numpy.einsum('...i,...i->...', normals, rays)
    mask = hit & (facing < -GRAZING_THRESHOLD)
    back_facing = int(numpy.count_nonzero(hit & ~mask))
    if back_facing > 0:
        logging.warning('Masked out %d pixels whose surface normal does not '
                        'face the camera', back_facing)

    return Rendering(numpy.where(mask, depth, 0.0),
                     numpy.where(mask[..., numpy.newaxis], normals, 0.0), mask)

def render_depth(scene: Scene, camera: Camera_Model, width: int,
                 height: int) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """
    Render the depth map and mask of a scene.
    """

    rendering = render(scene, camera, width, height)
    return rendering.depth, rendering.mask

def render_normals(scene: Scene, camera: Camera_Model, width: int,
                   height: int) -> numpy.ndarray:
    """
    Render the unit normal map of a scene, with n . tau < 0 at every masked
    pixel and zero vectors elsewhere.
    """

    return render(scene, camera, width, height).normals

def ground_truth_alpha(depth_gt: numpy.ndarray, graph: Pair_Graph) -> numpy.ndarray:
    """
    Compute the relative discontinuity of every pair from a ground truth
    depth map, which is zero for pairs without eligible coefficients.
    """

    depth = numpy.asarray(depth_gt, dtype=numpy.float64).ravel()[graph.pixels]
    if not numpy.all(depth > 0):
        raise ValueError('Ground truth depth must be positive on the mask')

    coeffs = graph.coeffs
    eligible = graph.eligible
    ratio = numpy.exp(numpy.log(depth[graph.a]) - numpy.log(depth[graph.b]))
    alpha = numpy.zeros(graph.pair_count)
    alpha[eligible] = (ratio[eligible] - coeffs.omega[eligible]) / coeffs.omega_eps[eligible]
    return alpha

def load_scene(path: PathLike) -> Scene:
    """
    Read a scene from a key-value configuration file.
    """

    options = Configuration.read_key_values(path, Scene.get_keys())
    if 'scene' not in options:
        raise SceneError(f'Scene configuration {path} lacks a scene name')

    scene_type = Scene.get_type(options['scene'].strip())
    unknown = set(options) - set(scene_type.KEYS) - {'scene'}
    if unknown:
        raise SceneError(f'Keys {", ".join(sorted(unknown))} do not apply '
                         f"to scene '{options['scene']}'")

    return scene_type.from_options(options)
