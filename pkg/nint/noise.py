"""
Normal map corruption and mitigation of corrupted normals.

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
from typing import Callable, Dict, NamedTuple, Type
import numpy
from numpy.random import Generator, PCG64
from scipy import ndimage
from scipy.spatial.transform import Rotation

N_type = Type['Noise_Spec']

Filter_Result = NamedTuple('Filter_Result', [('normals', numpy.ndarray),
                                             ('flagged', numpy.ndarray),
                                             ('unresolved', numpy.ndarray)])

class Noise_Spec:
    """
    Seeded corruption of the masked normals of a normal map.

    Random numbers come from a PCG64 generator seeded with the 64-bit
    `seed`, so that corruption is reproducible across platforms.
    """

    _noise_types: Dict[str, N_type] = {}

    NAME = ''

    @classmethod
    def register(cls, name: str) -> Callable[[N_type], N_type]:
        """
        Decorator method for a class that implements a corruption mode under
        the `name` prefix of its textual form.
        """

        def decorator(subject: N_type) -> N_type:
            cls._noise_types[name] = subject
            subject.NAME = name
            return subject

        return decorator

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> 'Noise_Spec':
        """
        Parse a textual mode such as `outliers:0.05` or `rot:5`.
        """

        name, _, argument = text.strip().partition(':')
        if name not in cls._noise_types:
            raise ValueError(f"Unknown noise mode '{text}'")
        try:
            value = float(argument)
        except ValueError as error:
            raise ValueError(f"Noise mode '{text}' needs a numeric parameter") from error

        return cls._noise_types[name](value, seed)

    def __init__(self, value: float, seed: int = 0) -> None:
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f'Seed must be an unsigned 64-bit integer, not {seed}')

        self._value = float(value)
        self._seed = int(seed)

    @property
    def value(self) -> float:
        """
        Retrieve the strength parameter of the corruption.
        """

        return self._value

    @property
    def seed(self) -> int:
        """
        Retrieve the seed of the random number generator.
        """

        return self._seed

    def generator(self) -> Generator:
        """
        Create a freshly seeded random number generator.
        """

        return Generator(PCG64(self._seed))

    def apply(self, normals: numpy.ndarray, rng: Generator) -> numpy.ndarray:
        """
        Corrupt an (N, 3) array of unit normals.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    def __str__(self) -> str:
        return f'{self.NAME}:{self._value:g}'

    def __repr__(self) -> str:
        return f"Noise_Spec.parse('{self}', seed={self._seed})"

def _random_unit_vectors(rng: Generator, count: int) -> numpy.ndarray:
    vectors = rng.standard_normal((count, 3))
    return vectors / numpy.linalg.norm(vectors, axis=1, keepdims=True)

@Noise_Spec.register('outliers')
class Outliers(Noise_Spec):
    """
    Replaces a fraction of the normals with isotropically random unit
    vectors.
    """

    def __init__(self, value: float, seed: int = 0) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f'Outlier fraction must lie in [0, 1], not {value}')
        super().__init__(value, seed)

    def apply(self, normals: numpy.ndarray, rng: Generator) -> numpy.ndarray:
        result = normals.copy()
        count = int(self._value * len(normals))
        if count == 0:
            return result

        chosen = rng.choice(len(normals), size=count, replace=False)
        result[chosen] = _random_unit_vectors(rng, count)
        return result

@Noise_Spec.register('rot')
class Rotational(Noise_Spec):
    """
    Rotates every normal about a random axis by a Gaussian angle whose
    standard deviation is given in degrees.
    """

    def __init__(self, value: float, seed: int = 0) -> None:
        if not value >= 0.0:
            raise ValueError(f'Rotation deviation must not be negative, not {value}')
        super().__init__(value, seed)

    def apply(self, normals: numpy.ndarray, rng: Generator) -> numpy.ndarray:
        axes = _random_unit_vectors(rng, len(normals))
        angles = numpy.deg2rad(rng.normal(0.0, self._value, len(normals)))
        rotations = Rotation.from_rotvec(axes * angles[:, numpy.newaxis])
        return rotations.apply(normals)

def corrupt(normals: numpy.ndarray, mask: numpy.ndarray,
            spec: Noise_Spec) -> numpy.ndarray:
    """
    Corrupt the masked normals of a normal map of shape (H, W, 3).
    Unmasked pixels are not changed.
    """

    mask = numpy.asarray(mask, dtype=bool)
    result = numpy.array(normals, dtype=numpy.float64)
    result[mask] = spec.apply(result[mask], spec.generator())
    return result

def _neighbor_sum(values: numpy.ndarray, window: int) -> numpy.ndarray:
    kernel = numpy.ones((window, window))
    kernel[window // 2, window // 2] = 0.0
    return ndimage.convolve(values, kernel, mode='constant', cval=0.0)

def flag_normals(normals: numpy.ndarray, rays: numpy.ndarray,
                 mask: numpy.ndarray, deviation_threshold: float = 0.75,
                 window: int = 3) -> numpy.ndarray:
    """
    Detect implausible normals: those facing away from the camera and those
    whose |n . tau| deviates from the mean over the other masked neighbors
    in the window by more than `deviation_threshold` relative to that mean.

    The neighborhood mean leaves out the center pixel and neighbors that
    face away from the camera.
    """

    if window < 3 or window % 2 == 0:
        raise ValueError(f'Filter window must be an odd size of at least 3, not {window}')
    if not deviation_threshold > 0:
        raise ValueError('Deviation threshold must be positive')

    mask = numpy.asarray(mask, dtype=bool)
    n_dot_tau = numpy.einsum('...i,...i->...', normals, rays)
    backward = mask & (n_dot_tau > 0)
    reference = (mask & ~backward).astype(numpy.float64)
    magnitude = numpy.where(mask, numpy.abs(n_dot_tau), 0.0)

    counts = _neighbor_sum(reference, window)
    sums = _neighbor_sum(magnitude * reference, window)
    has_mean = (counts > 0.5) & (sums > 0)
    mean = numpy.where(has_mean, sums / numpy.where(has_mean, counts, 1.0), 1.0)
    deviating = mask & has_mean & \
        (numpy.abs(magnitude - mean) / mean > deviation_threshold)

    return backward | deviating

def filter_normals(normals: numpy.ndarray, rays: numpy.ndarray,
                   mask: numpy.ndarray, deviation_threshold: float = 0.75,
                   window: int = 3) -> Filter_Result:
    """
    Replace flagged normals by the normalized average of the masked
    neighbors in the window that are not flagged, in a single pass.

    Flagged pixels without such neighbors keep their normal and are
    reported as unresolved.
    """

    mask = numpy.asarray(mask, dtype=bool)
    normals = numpy.asarray(normals, dtype=numpy.float64)
    flagged = flag_normals(normals, rays, mask, deviation_threshold, window)
    good = (mask & ~flagged).astype(numpy.float64)

    total = numpy.stack([_neighbor_sum(normals[..., axis] * good, window)
                         for axis in range(3)], axis=-1)
    length = numpy.linalg.norm(total, axis=-1)
    resolved = flagged & (_neighbor_sum(good, window) > 0.5) & (length > 0)
    unresolved = flagged & ~resolved

    result = normals.copy()
    result[resolved] = total[resolved] / length[resolved, numpy.newaxis]

    logging.info('Mitigation filter flagged %d of %d normals',
                 int(numpy.count_nonzero(flagged)), int(numpy.count_nonzero(mask)))
    if numpy.any(unresolved):
        logging.warning('%d flagged normals have no valid neighbors and are kept',
                        int(numpy.count_nonzero(unresolved)))

    return Filter_Result(result, flagged, unresolved)

def mitigation_filter(normals: numpy.ndarray, rays: numpy.ndarray,
                      mask: numpy.ndarray, deviation_threshold: float = 0.75,
                      window: int = 3) -> numpy.ndarray:
    """
    Filter a normal map against outliers, returning the filtered normals.
    """

    return filter_normals(normals, rays, mask, deviation_threshold, window).normals
