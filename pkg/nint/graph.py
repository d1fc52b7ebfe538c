"""
Directed neighboring pixel pairs over a validity mask.

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

from enum import Enum, unique
import logging
from typing import Dict, NamedTuple, Optional, Tuple
import numpy
from scipy import sparse
from scipy.sparse import csgraph
from .formulation import Coefficient_Arrays, Gamma_Mode, Lambda_Mode, \
    Constant_Lambda, ELIGIBLE_THRESHOLD, coefficient_arrays, interp_tau_m

Direction = NamedTuple('Direction', [('name', str), ('du', int), ('dv', int)])

# Enumeration order of neighbors; each direction is followed by its opposite.
DIRECTIONS = (
    Direction('right', 1, 0),
    Direction('left', -1, 0),
    Direction('down', 0, 1),
    Direction('up', 0, -1),
    Direction('down_right', 1, 1),
    Direction('up_left', -1, -1),
    Direction('down_left', -1, 1),
    Direction('up_right', 1, -1)
)

# Allowed deviation of masked normals from unit length.
UNIT_TOLERANCE = 1e-6

class EmptyGraph(ValueError):
    """
    Error indicating that a mask yields no valid pixel pairs.
    """

class DimensionMismatch(ValueError):
    """
    Error indicating that per-pixel inputs do not share their dimensions.
    """

@unique
class Connectivity(Enum):
    """
    Neighborhoods of a pixel.
    """

    FOUR = '4'
    DIAGONAL_FOUR = 'diag4'
    EIGHT = '8'

    @property
    def slots(self) -> Tuple[int, ...]:
        """
        Retrieve the indices into `DIRECTIONS` of the neighbors, in
        enumeration order.
        """

        if self is Connectivity.FOUR:
            return (0, 1, 2, 3)
        if self is Connectivity.DIAGONAL_FOUR:
            return (4, 5, 6, 7)

        return tuple(range(len(DIRECTIONS)))

    @property
    def directions(self) -> Tuple[str, ...]:
        """
        Retrieve the names of the neighbor directions.
        """

        return tuple(DIRECTIONS[slot].name for slot in self.slots)

class Pair_Graph:
    """
    Immutable set of directed pixel pairs (a, b), where each pair stands for
    the equation of pixel a with its neighbor b.

    Pixels are referred to by compact indices into the row-major list of
    masked pixels. Pair arrays are ordered row-major by a and then by the
    fixed neighbor order of `DIRECTIONS`.
    """

    def __init__(self, mask: numpy.ndarray, connectivity: Connectivity,
                 a: numpy.ndarray, b: numpy.ndarray, slot: numpy.ndarray,
                 tau_m: numpy.ndarray, coeffs: Coefficient_Arrays,
                 dropped: int) -> None:
        self._mask = mask
        self._connectivity = connectivity
        self._pixels = numpy.flatnonzero(mask)
        self._a = a
        self._b = b
        self._slot = slot
        self._tau_m = tau_m
        self._coeffs = coeffs
        self._dropped = dropped
        self._difference: Optional[sparse.csr_matrix] = None

        # Pair lookup by pixel and direction slot.
        table = numpy.full((len(self._pixels), len(DIRECTIONS)), -1,
                           dtype=numpy.int64)
        table[a, slot] = numpy.arange(len(a))
        self._opposite = table[a, slot ^ 1]
        self._reverse = table[b, slot ^ 1]
        if numpy.any(self._reverse < 0): # pragma: no cover
            raise ValueError('Pair graph is not closed under reversal')

        adjacency = sparse.coo_matrix((numpy.ones(len(a)), (a, b)),
                                      shape=(len(self._pixels),) * 2)
        self._component_count, self._components = \
            csgraph.connected_components(adjacency, directed=False)

        for array in (self._pixels, a, b, slot, tau_m, self._opposite,
                      self._reverse, self._components):
            array.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        """
        Retrieve the (height, width) of the image.
        """

        return (self._mask.shape[0], self._mask.shape[1])

    @property
    def mask(self) -> numpy.ndarray:
        """
        Retrieve a copy of the pixel mask.
        """

        return self._mask.copy()

    @property
    def connectivity(self) -> Connectivity:
        """
        Retrieve the neighborhood used to enumerate pairs.
        """

        return self._connectivity

    @property
    def pixels(self) -> numpy.ndarray:
        """
        Retrieve the flat image indices of the masked pixels.
        """

        return self._pixels

    @property
    def pixel_count(self) -> int:
        """
        Retrieve the number of masked pixels.
        """

        return len(self._pixels)

    @property
    def pair_count(self) -> int:
        """
        Retrieve the number of directed pairs.
        """

        return len(self._a)

    @property
    def a(self) -> numpy.ndarray:
        """
        Retrieve the compact index of the pixel whose equation each pair is.
        """

        return self._a

    @property
    def b(self) -> numpy.ndarray:
        """
        Retrieve the compact index of the neighbor of each pair.
        """

        return self._b

    @property
    def slot(self) -> numpy.ndarray:
        """
        Retrieve the index into `DIRECTIONS` of each pair.
        """

        return self._slot

    @property
    def opposite(self) -> numpy.ndarray:
        """
        Retrieve for each pair (a, b) the index of the pair of a with the
        neighbor on the other side, or -1 if that pair does not exist.
        """

        return self._opposite

    @property
    def reverse(self) -> numpy.ndarray:
        """
        Retrieve for each pair (a, b) the index of the pair (b, a).
        """

        return self._reverse

    @property
    def tau_m(self) -> numpy.ndarray:
        """
        Retrieve the intermediate ray of each pair, shared by both directions.
        """

        return self._tau_m

    @property
    def coeffs(self) -> Coefficient_Arrays:
        """
        Retrieve the coefficient arrays of the retained pairs.
        """

        return self._coeffs

    @property
    def eligible(self) -> numpy.ndarray:
        """
        Retrieve which pairs may carry a nonzero relative discontinuity.
        """

        return numpy.abs(self._coeffs.omega_eps) >= ELIGIBLE_THRESHOLD

    @property
    def dropped(self) -> int:
        """
        Retrieve the number of directed pairs that were dropped because the
        pair or its reverse had invalid coefficients.
        """

        return self._dropped

    @property
    def component_count(self) -> int:
        """
        Retrieve the number of connected components over retained pairs.
        """

        return int(self._component_count)

    @property
    def components(self) -> numpy.ndarray:
        """
        Retrieve the component label of each masked pixel.
        """

        return self._components

    def pixel_coordinates(self, index: int) -> Tuple[int, int]:
        """
        Retrieve the (u, v) image coordinates of a compact pixel index.
        """

        row, column = divmod(int(self._pixels[index]), self._mask.shape[1])
        return (column, row)

    def pair_location(self, pair: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        """
        Retrieve the image coordinates of the pixels a and b of a pair.
        """

        return (self.pixel_coordinates(self._a[pair]),
                self.pixel_coordinates(self._b[pair]))

    def difference_matrix(self) -> sparse.csr_matrix:
        """
        Build the sparse matrix with one row per pair that computes the
        difference between the values at pixels a and b.
        """

        if self._difference is None:
            count = self.pair_count
            rows = numpy.repeat(numpy.arange(count), 2)
            columns = numpy.stack([self._a, self._b], axis=1).ravel()
            values = numpy.tile([1.0, -1.0], count)
            self._difference = sparse.csr_matrix((values, (rows, columns)),
                                                 shape=(count, self.pixel_count))

        return self._difference

    def pair_maps(self, values: numpy.ndarray,
                  fill: float = 0.0) -> Dict[str, numpy.ndarray]:
        """
        Unpack a per-pair array into one image per neighbor direction, where
        the value of pair (a, b) is stored at pixel a.
        """

        height, width = self.shape
        maps = {}
        for slot in self._connectivity.slots:
            image = numpy.full(height * width, fill, dtype=numpy.float64)
            selected = self._slot == slot
            image[self._pixels[self._a[selected]]] = values[selected]
            maps[DIRECTIONS[slot].name] = image.reshape(height, width)

        return maps

    def pairs_from_maps(self, maps: Dict[str, numpy.ndarray]) -> numpy.ndarray:
        """
        Pack per-direction images back into a per-pair array.
        """

        values = numpy.zeros(self.pair_count)
        for slot in self._connectivity.slots:
            name = DIRECTIONS[slot].name
            if name not in maps:
                raise KeyError(f'Missing pair map for direction {name}')
            if maps[name].shape != self.shape:
                raise DimensionMismatch(f'Pair map {name} has shape {maps[name].shape}')
            selected = self._slot == slot
            values[selected] = maps[name].ravel()[self._pixels[self._a[selected]]]

        return values

def _check_inputs(mask: numpy.ndarray, normals: numpy.ndarray,
                  rays: numpy.ndarray) -> numpy.ndarray:
    if mask.ndim != 2:
        raise DimensionMismatch(f'Mask must be two-dimensional, not {mask.shape}')
    expected = mask.shape + (3,)
    if normals.shape != expected:
        raise DimensionMismatch(f'Normals have shape {normals.shape}, expected {expected}')
    if rays.shape != expected:
        raise DimensionMismatch(f'Rays have shape {rays.shape}, expected {expected}')

    mask = numpy.asarray(mask, dtype=bool)
    norms = numpy.linalg.norm(normals[mask], axis=1)
    if numpy.any(~(numpy.abs(norms - 1.0) <= UNIT_TOLERANCE)):
        raise ValueError('Normals must have unit length at masked pixels')
    if not numpy.all(numpy.isfinite(rays[mask])):
        raise ValueError('Rays must be finite at masked pixels')

    return mask

def build_graph(mask: numpy.ndarray, normals: numpy.ndarray,
                rays: numpy.ndarray, lambda_mode: Optional[Lambda_Mode] = None,
                gamma_mode: Optional[Gamma_Mode] = None,
                connectivity: Connectivity = Connectivity.FOUR) -> Pair_Graph:
    """
    Enumerate the directed pairs of neighboring masked pixels and compute
    their coefficients.

    Each unordered pair gets one intermediate ray tau_m. Unordered pairs for
    which either direction has invalid coefficients are dropped.
    """

    mask = _check_inputs(mask, normals, rays)
    if lambda_mode is None:
        lambda_mode = Constant_Lambda(0.5)
    if gamma_mode is None:
        gamma_mode = Gamma_Mode('full')

    height, width = mask.shape
    pixels = numpy.flatnonzero(mask)
    count = len(pixels)
    index = numpy.full(height * width, -1, dtype=numpy.int64)
    index[pixels] = numpy.arange(count)
    rows, columns = numpy.divmod(pixels, width)
    flat_mask = mask.ravel()

    a_parts = []
    b_parts = []
    slot_parts = []
    for slot in connectivity.slots:
        direction = DIRECTIONS[slot]
        target_columns = columns + direction.du
        target_rows = rows + direction.dv
        inside = (target_columns >= 0) & (target_columns < width) & \
            (target_rows >= 0) & (target_rows < height)
        target = numpy.where(inside, target_rows * width + target_columns, 0)
        inside &= flat_mask[target]
        a_parts.append(numpy.flatnonzero(inside))
        b_parts.append(index[target[inside]])
        slot_parts.append(numpy.full(numpy.count_nonzero(inside), slot))

    a = numpy.concatenate(a_parts).astype(numpy.int64)
    b = numpy.concatenate(b_parts).astype(numpy.int64)
    slot = numpy.concatenate(slot_parts).astype(numpy.int64)
    order = numpy.lexsort((slot, a))
    a = a[order]
    b = b[order]
    slot = slot[order]
    if len(a) == 0:
        raise EmptyGraph('Mask has no neighboring pixel pairs')

    table = numpy.full((count, len(DIRECTIONS)), -1, dtype=numpy.int64)
    table[a, slot] = numpy.arange(len(a))
    reverse = table[b, slot ^ 1]

    pixel_normals = normals.reshape(-1, 3)[pixels].astype(numpy.float64)
    pixel_rays = rays.reshape(-1, 3)[pixels].astype(numpy.float64)

    # One tau_m per unordered pair, evaluated from the lower pixel index.
    canonical = numpy.flatnonzero(a < b)
    lower = a[canonical]
    upper = b[canonical]
    tau_m = numpy.empty((len(a), 3))
    tau_m[canonical] = interp_tau_m(pixel_rays[lower], pixel_rays[upper],
                                    pixel_normals[lower], pixel_normals[upper],
                                    lambda_mode)
    tau_m[reverse[canonical]] = tau_m[canonical]

    offsets = numpy.array([[direction.du, direction.dv] for direction in DIRECTIONS])
    distance = numpy.hypot(offsets[slot, 0], offsets[slot, 1])
    coeffs = coefficient_arrays(pixel_normals[a], pixel_normals[b],
                                pixel_rays[a], pixel_rays[b], tau_m,
                                distance=distance, gamma_mode=gamma_mode)

    keep = coeffs.valid & coeffs.valid[reverse]
    dropped = int(len(a) - numpy.count_nonzero(keep))
    if dropped > 0:
        logging.warning('Dropped %d of %d directed pixel pairs with invalid coefficients',
                        dropped, len(a))
    if not numpy.any(keep):
        raise EmptyGraph('No pixel pairs with valid coefficients remain')

    kept = Coefficient_Arrays(*(array[keep] for array in coeffs))
    return Pair_Graph(mask, connectivity, a[keep], b[keep], slot[keep],
                      tau_m[keep], kept, dropped)

def connected_components(graph: Pair_Graph) -> numpy.ndarray:
    """
    Retrieve the per-pixel image of connected component labels over the
    retained pairs, dense from 0, with -1 outside the mask.
    """

    height, width = graph.shape
    labels = numpy.full(height * width, -1, dtype=numpy.int64)
    labels[graph.pixels] = graph.components
    return labels.reshape(height, width)
