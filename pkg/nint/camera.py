"""
Central camera models and per-pixel ray direction maps.

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
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Type
import numpy
from .config import Configuration, PathLike
from .files import read_pfm

Pixel = Tuple[float, float]
C_type = Type['Camera_Model']

class NonConvergentUndistortion(RuntimeError):
    """
    Error indicating that the fixed-point undistortion of a Brown-Conrady
    camera did not reach its tolerance, which signals extreme distortion
    parameters or a pixel outside the image of the distortion mapping.
    """

    def __init__(self, message: str, pixel: Optional[Pixel] = None) -> None:
        super().__init__(message)
        self.pixel = pixel

class OutOfBounds(ValueError):
    """
    Error indicating that a pixel lies outside the domain of a camera.
    """

class CameraModelError(ValueError):
    """
    Error indicating an invalid, unknown or unsupported camera model.
    """

class Camera_Model:
    """
    Central camera model that maps pixel coordinates to ray directions
    (tau_x, tau_y, 1), so that the 3D point at depth z is z times the ray.

    Pixel centers lie at integer coordinates (u, v) with u along the image
    columns and v along the rows. Instances are immutable.
    """

    # Models that are recognized but cannot be used for integration.
    REJECTED = {
        'orthographic': 'Orthographic cameras are not central: the local '
                        'planarity equations no longer depend on the normals'
    }

    # Keys that a configuration file may contain for this model.
    KEYS: Tuple[str, ...] = ()

    _model_types: Dict[str, C_type] = {}

    @classmethod
    def register(cls, model: str) -> Callable[[C_type], C_type]:
        """
        Decorator method for a class that implements a camera model under
        the `model` name used in configuration files.
        """

        def decorator(subject: C_type) -> C_type:
            cls._model_types[model] = subject
            return subject

        return decorator

    @classmethod
    def get_type(cls, model: str) -> C_type:
        """
        Retrieve the class registered for the given `model` name.

        Raises a `CameraModelError` if the model is rejected or unknown.
        """

        if model in cls.REJECTED:
            raise CameraModelError(cls.REJECTED[model])
        if model not in cls._model_types:
            raise CameraModelError(f"Camera model '{model}' is not supported")

        return cls._model_types[model]

    @classmethod
    def from_options(cls, options: Dict[str, str],
                     base: Optional[Path] = None) -> 'Camera_Model':
        """
        Construct the camera model from parsed configuration `options`.
        Relative file references are resolved against `base`.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    @classmethod
    def get_keys(cls) -> Tuple[str, ...]:
        """
        Retrieve all keys that a camera configuration file may contain for
        any of the registered models.
        """

        keys = {'model'}
        for model_type in cls._model_types.values():
            keys.update(model_type.KEYS)

        return tuple(sorted(keys))

    def rays(self, u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        """
        Compute ray directions for arrays of pixel coordinates `u` and `v`.

        The result has the shape of `u` with an additional last axis of
        length 3 whose final component is 1.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    def ray_direction(self, pixel: Pixel) -> numpy.ndarray:
        """
        Compute the ray direction vector of a single pixel `(u, v)`.
        """

        u = numpy.array([float(pixel[0])])
        v = numpy.array([float(pixel[1])])
        return self.rays(u, v)[0]

    def build_ray_map(self, width: int, height: int) -> numpy.ndarray:
        """
        Compute a ray map of shape (height, width, 3) holding the ray
        direction at every integer pixel center.
        """

        if width <= 0 or height <= 0:
            raise ValueError(f'Ray map size must be positive, not {width}x{height}')

        v, u = numpy.mgrid[0:height, 0:width].astype(numpy.float64)
        return self.rays(u, v)

class Pinhole_Model(Camera_Model):
    """
    Shared intrinsics of pinhole-based camera models.
    """

    KEYS = ('model', 'fx', 'fy', 'cx', 'cy')

    def __init__(self, fx: float, fy: float, cx: float, cy: float) -> None:
        if not fx > 0 or not fy > 0:
            raise CameraModelError(f'Focal lengths must be positive, not {fx}, {fy}')

        self._fx = float(fx)
        self._fy = float(fy)
        self._cx = float(cx)
        self._cy = float(cy)

    @property
    def intrinsics(self) -> Tuple[float, float, float, float]:
        """
        Retrieve the focal lengths and principal point (fx, fy, cx, cy).
        """

        return (self._fx, self._fy, self._cx, self._cy)

    @staticmethod
    def _get_float(options: Dict[str, str], key: str,
                   default: Optional[float] = None) -> float:
        if key not in options:
            if default is None:
                raise CameraModelError(f'Missing camera parameter {key}')
            return default

        try:
            return float(options[key])
        except ValueError as error:
            raise CameraModelError(f'Camera parameter {key} is not a number: {options[key]}') from error

    def normalize(self, u: numpy.ndarray,
                  v: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray]:
        """
        Convert pixel coordinates to normalized image coordinates.
        """

        return ((u - self._cx) / self._fx, (v - self._cy) / self._fy)

@Camera_Model.register('pinhole')
class Ideal_Pinhole(Pinhole_Model):
    """
    Undistorted pinhole camera, whose ray directions are affine in the pixel
    coordinates.
    """

    @classmethod
    def from_options(cls, options: Dict[str, str],
                     base: Optional[Path] = None) -> Camera_Model:
        return cls(cls._get_float(options, 'fx'), cls._get_float(options, 'fy'),
                   cls._get_float(options, 'cx'), cls._get_float(options, 'cy'))

    def rays(self, u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        x, y = self.normalize(u, v)
        return numpy.stack([x, y, numpy.ones_like(x)], axis=-1)

    def __repr__(self) -> str:
        return f'Ideal_Pinhole(fx={self._fx}, fy={self._fy}, cx={self._cx}, cy={self._cy})'

@Camera_Model.register('brown_conrady')
class Brown_Conrady_Pinhole(Pinhole_Model):
    """
    Pinhole camera with Brown-Conrady radial (k1, k2, k3) and tangential
    (p1, p2) lens distortion.

    Ray directions are the undistorted normalized coordinates, found by
    fixed-point iteration on the distortion mapping.
    """

    KEYS = Pinhole_Model.KEYS + ('k1', 'k2', 'k3', 'p1', 'p2')

    MAX_ITERATIONS = 50
    TOLERANCE = 1e-12

    def __init__(self, fx: float, fy: float, cx: float, cy: float,
                 k1: float = 0.0, k2: float = 0.0, k3: float = 0.0,
                 p1: float = 0.0, p2: float = 0.0) -> None:
        super().__init__(fx, fy, cx, cy)
        self._k1 = float(k1)
        self._k2 = float(k2)
        self._k3 = float(k3)
        self._p1 = float(p1)
        self._p2 = float(p2)

    @classmethod
    def from_options(cls, options: Dict[str, str],
                     base: Optional[Path] = None) -> Camera_Model:
        coefficients = {
            key: cls._get_float(options, key, 0.0)
            for key in ('k1', 'k2', 'k3', 'p1', 'p2')
        }
        return cls(cls._get_float(options, 'fx'), cls._get_float(options, 'fy'),
                   cls._get_float(options, 'cx'), cls._get_float(options, 'cy'),
                   **coefficients)

    def _radial(self, r2: numpy.ndarray) -> numpy.ndarray:
        return 1.0 + self._k1 * r2 + self._k2 * r2 * r2 + self._k3 * r2 * r2 * r2

    def _tangential(self, x: numpy.ndarray,
                    y: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray]:
        r2 = x * x + y * y
        dx = 2.0 * self._p1 * x * y + self._p2 * (r2 + 2.0 * x * x)
        dy = self._p1 * (r2 + 2.0 * y * y) + 2.0 * self._p2 * x * y
        return dx, dy

    def forward_distort(self, x: numpy.ndarray,
                        y: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray]:
        """
        Apply the Brown-Conrady distortion to undistorted normalized
        coordinates `x` and `y`.
        """

        radial = self._radial(x * x + y * y)
        dx, dy = self._tangential(x, y)
        return (x * radial + dx, y * radial + dy)

    def _iterate(self, x_distorted: numpy.ndarray, y_distorted: numpy.ndarray) \
            -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
        x = x_distorted.copy()
        y = y_distorted.copy()
        converged = numpy.zeros(x.shape, dtype=bool)
        with numpy.errstate(all='ignore'):
            for _ in range(self.MAX_ITERATIONS):
                radial = self._radial(x * x + y * y)
                dx, dy = self._tangential(x, y)
                next_x = (x_distorted - dx) / radial
                next_y = (y_distorted - dy) / radial
                step = numpy.maximum(numpy.abs(next_x - x),
                                     numpy.abs(next_y - y))
                x = next_x
                y = next_y
                # NaN steps compare false and stay unconverged.
                converged = step <= self.TOLERANCE
                if numpy.all(converged):
                    break

        return x, y, converged

    def undistort(self, x_distorted: numpy.ndarray,
                  y_distorted: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray]:
        """
        Invert the distortion for distorted normalized coordinates.

        Raises `NonConvergentUndistortion` if any coordinate did not converge
        within the iteration limit.
        """

        x, y, converged = self._iterate(x_distorted, y_distorted)
        if not numpy.all(converged):
            index = tuple(numpy.argwhere(~converged)[0])
            raise NonConvergentUndistortion('Undistortion did not converge within '
                                            f'{self.MAX_ITERATIONS} iterations at '
                                            f'index {index}')

        return x, y

    def rays(self, u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        x_distorted, y_distorted = self.normalize(u, v)
        x, y, converged = self._iterate(x_distorted, y_distorted)
        if not numpy.all(converged):
            index = tuple(numpy.argwhere(~converged)[0])
            pixel = (float(u[index]), float(v[index]))
            raise NonConvergentUndistortion(f'Undistortion of pixel {pixel} did '
                                            f'not converge within '
                                            f'{self.MAX_ITERATIONS} iterations',
                                            pixel)

        return numpy.stack([x, y, numpy.ones_like(x)], axis=-1)

    def __repr__(self) -> str:
        return (f'Brown_Conrady_Pinhole(fx={self._fx}, fy={self._fy}, '
                f'cx={self._cx}, cy={self._cy}, k1={self._k1}, k2={self._k2}, '
                f'k3={self._k3}, p1={self._p1}, p2={self._p2})')

@Camera_Model.register('tabulated')
class Tabulated_Rays(Camera_Model):
    """
    Generic central camera described by an explicit table of ray directions
    for every pixel.
    """

    KEYS = ('model', 'ray_file')

    def __init__(self, rays: numpy.ndarray) -> None:
        if rays.ndim != 3 or rays.shape[2] != 3:
            raise CameraModelError(f'Ray table must have shape (H, W, 3), not {rays.shape}')
        if not numpy.all(rays[..., 2] == 1.0):
            raise CameraModelError('Tabulated rays must have a third component of 1')

        self._rays = numpy.array(rays, dtype=numpy.float64)
        self._rays.setflags(write=False)

    @classmethod
    def from_options(cls, options: Dict[str, str],
                     base: Optional[Path] = None) -> Camera_Model:
        if 'ray_file' not in options:
            raise CameraModelError('Missing camera parameter ray_file')

        path = Path(options['ray_file'])
        if base is not None and not path.is_absolute():
            path = base / path

        return cls(cls.normalize_table(read_pfm(path)))

    @staticmethod
    def normalize_table(rays: numpy.ndarray) -> numpy.ndarray:
        """
        Rescale a table of ray directions so that every third component is 1.
        """

        rays = numpy.array(rays, dtype=numpy.float64)
        if rays.ndim != 3 or rays.shape[2] != 3:
            raise CameraModelError(f'Ray table must have shape (H, W, 3), not {rays.shape}')

        tau_z = rays[..., 2:3]
        if numpy.any(tau_z <= 0) or not numpy.all(numpy.isfinite(rays)):
            raise CameraModelError('Ray table contains rays that do not point forward')
        if not numpy.all(tau_z == 1.0):
            logging.warning('Rescaling %d tabulated rays whose third component is not 1',
                            int(numpy.count_nonzero(tau_z != 1.0)))
            rays = rays / tau_z
            rays[..., 2] = 1.0

        return rays

    @property
    def size(self) -> Tuple[int, int]:
        """
        Retrieve the (width, height) of the ray table.
        """

        return (self._rays.shape[1], self._rays.shape[0])

    def rays(self, u: numpy.ndarray, v: numpy.ndarray) -> numpy.ndarray:
        columns = numpy.rint(u).astype(numpy.int64)
        rows = numpy.rint(v).astype(numpy.int64)
        height, width = self._rays.shape[:2]
        outside = (columns != u) | (rows != v) | (columns < 0) | \
            (rows < 0) | (columns >= width) | (rows >= height)
        if numpy.any(outside):
            index = tuple(numpy.argwhere(outside)[0])
            raise OutOfBounds(f'Pixel ({u[index]}, {v[index]}) is not a pixel '
                              f'center of the {width}x{height} ray table')

        return self._rays[rows, columns]

    def build_ray_map(self, width: int, height: int) -> numpy.ndarray:
        if (width, height) != self.size:
            raise OutOfBounds(f'Ray table has size {self.size[0]}x{self.size[1]}, '
                              f'not {width}x{height}')

        return self._rays.copy()

def ray_direction(camera: Camera_Model, pixel: Pixel) -> numpy.ndarray:
    """
    Compute the ray direction (tau_x, tau_y, 1) of `camera` at `pixel`.
    """

    return camera.ray_direction(pixel)

def build_ray_map(camera: Camera_Model, width: int, height: int) -> numpy.ndarray:
    """
    Compute the ray map of `camera` for an image of the given size.
    """

    return camera.build_ray_map(width, height)

def load_camera(path: PathLike) -> Camera_Model:
    """
    Read a camera model from a key-value configuration file.
    """

    options = Configuration.read_key_values(path, Camera_Model.get_keys())
    if 'model' not in options:
        raise CameraModelError(f'Camera configuration {path} lacks a model')

    model_type = Camera_Model.get_type(options['model'].strip())
    unknown = set(options) - set(model_type.KEYS)
    if unknown:
        raise CameraModelError(f'Keys {", ".join(sorted(unknown))} do not apply '
                               f"to camera model '{options['model']}'")

    return model_type.from_options(options, Path(path).parent)
