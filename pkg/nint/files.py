"""
File input and output of float maps, masks, point clouds and external
dataset layouts.

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
import os
from pathlib import Path
from typing import BinaryIO, Dict, List, NamedTuple, Sequence, Tuple, Union, \
    TYPE_CHECKING
import imageio.v3 as imageio
import numpy

if TYPE_CHECKING:
    PathLike = Union[str, os.PathLike[str]]
else:
    PathLike = Union[str, os.PathLike]

class MalformedHeader(ValueError):
    """
    Error indicating that a PFM or PGM file has an unreadable header or a
    payload that does not match the header.
    """

class NonUnitNormals(ValueError):
    """
    Error indicating that a normal map holds vectors that are too far from
    unit length to be explained by storage precision, which suggests a
    different normal map convention.
    """

class IoFailure(RuntimeError):
    """
    Error indicating that a file could not be read or written.
    """

Normal_Map_File = NamedTuple('Normal_Map_File', [('normals', numpy.ndarray),
                                                 ('mask', numpy.ndarray),
                                                 ('width', int),
                                                 ('height', int),
                                                 ('renormalized', int)])

Diligent_Data = NamedTuple('Diligent_Data', [('normals', numpy.ndarray),
                                             ('mask', numpy.ndarray),
                                             ('intrinsics', numpy.ndarray)])

# Deviation of a vector norm from 1 that float32 storage of a unit vector
# cannot produce.
RENORMALIZE_TOLERANCE = 2.5e-7
NON_UNIT_TOLERANCE = 1e-2

def _read_tokens(handle: BinaryIO, count: int, path: PathLike) -> List[str]:
    # Whitespace separated header tokens with '#' comments; the single
    # whitespace byte after the last token is consumed.
    tokens: List[str] = []
    token = b''
    while len(tokens) < count:
        char = handle.read(1)
        if char == b'':
            raise MalformedHeader(f'Unexpected end of header in {path}')
        if char == b'#' and token == b'':
            handle.readline()
            continue
        if char.isspace():
            if token != b'':
                tokens.append(token.decode('ascii', errors='replace'))
                token = b''
            continue

        token += char

    return tokens

def _parse_size(tokens: Sequence[str], path: PathLike) -> Tuple[int, int]:
    try:
        width = int(tokens[0])
        height = int(tokens[1])
    except ValueError as error:
        raise MalformedHeader(f'Invalid dimensions in {path}: {tokens[0]} {tokens[1]}') from error
    if width <= 0 or height <= 0:
        raise MalformedHeader(f'Invalid dimensions in {path}: {width}x{height}')

    return width, height

def read_pfm(path: PathLike) -> numpy.ndarray:
    """
    Read a portable float map.

    The result is a float32 array of shape (height, width) for grayscale `Pf`
    files or (height, width, 3) for color `PF` files, with the first row at
    the top of the image.
    """

    try:
        with open(path, 'rb') as handle:
            magic, width_token, height_token, scale_token = \
                _read_tokens(handle, 4, path)
            payload = handle.read()
    except OSError as error:
        raise IoFailure(f'Cannot read float map {path}: {error}') from error

    if magic == 'PF':
        channels = 3
    elif magic == 'Pf':
        channels = 1
    else:
        raise MalformedHeader(f'Unknown float map identifier in {path}: {magic}')

    width, height = _parse_size((width_token, height_token), path)
    try:
        scale = float(scale_token)
    except ValueError as error:
        raise MalformedHeader(f'Invalid scale in {path}: {scale_token}') from error
    if scale == 0.0:
        raise MalformedHeader(f'Scale of {path} must not be zero')

    dtype = numpy.dtype('<f4' if scale < 0 else '>f4')
    expected = width * height * channels * dtype.itemsize
    if len(payload) != expected:
        raise MalformedHeader(f'Float map {path} holds {len(payload)} bytes, '
                              f'expected {expected}')

    data = numpy.frombuffer(payload, dtype=dtype).astype(numpy.float32)
    if channels == 3:
        data = data.reshape(height, width, 3)
    else:
        data = data.reshape(height, width)

    # Rows are stored from the bottom of the image upwards.
    return numpy.ascontiguousarray(numpy.flipud(data))

def write_pfm(path: PathLike, data: numpy.ndarray) -> None:
    """
    Write a float array of shape (height, width) or (height, width, 3) as a
    little-endian portable float map.
    """

    array = numpy.asarray(data)
    if array.ndim == 3 and array.shape[2] == 3:
        magic = 'PF'
    elif array.ndim == 2:
        magic = 'Pf'
    else:
        raise ValueError(f'Cannot store an array of shape {array.shape} as a float map')

    height, width = array.shape[:2]
    header = f'{magic}\n{width} {height}\n-1.0\n'.encode('ascii')
    payload = numpy.ascontiguousarray(numpy.flipud(array), dtype='<f4')
    try:
        with open(path, 'wb') as handle:
            handle.write(header)
            handle.write(payload.tobytes())
    except OSError as error:
        raise IoFailure(f'Cannot write float map {path}: {error}') from error

def read_mask(path: PathLike) -> numpy.ndarray:
    """
    Read a binary PGM (`P5`) mask into a boolean array, where pixels at or
    above half of the maximum value are valid.
    """

    try:
        with open(path, 'rb') as handle:
            magic, width_token, height_token, maxval_token = \
                _read_tokens(handle, 4, path)
            payload = handle.read()
    except OSError as error:
        raise IoFailure(f'Cannot read mask {path}: {error}') from error

    if magic != 'P5':
        raise MalformedHeader(f'Mask {path} is not a binary PGM file: {magic}')

    width, height = _parse_size((width_token, height_token), path)
    try:
        maxval = int(maxval_token)
    except ValueError as error:
        raise MalformedHeader(f'Invalid maximum value in {path}: {maxval_token}') from error
    if not 0 < maxval < 65536:
        raise MalformedHeader(f'Invalid maximum value in {path}: {maxval}')

    dtype = numpy.dtype('u1' if maxval < 256 else '>u2')
    expected = width * height * dtype.itemsize
    if len(payload) != expected:
        raise MalformedHeader(f'Mask {path} holds {len(payload)} bytes, '
                              f'expected {expected}')

    pixels = numpy.frombuffer(payload, dtype=dtype).reshape(height, width)
    return pixels >= (maxval + 1) // 2

def write_mask(path: PathLike, mask: numpy.ndarray) -> None:
    """
    Write a boolean mask as a binary PGM file with values 255 and 0.
    """

    array = numpy.asarray(mask, dtype=bool)
    if array.ndim != 2:
        raise ValueError(f'Cannot store an array of shape {array.shape} as a mask')

    height, width = array.shape
    header = f'P5\n{width} {height}\n255\n'.encode('ascii')
    try:
        with open(path, 'wb') as handle:
            handle.write(header)
            handle.write(numpy.where(array, 255, 0).astype(numpy.uint8).tobytes())
    except OSError as error:
        raise IoFailure(f'Cannot write mask {path}: {error}') from error

def read_normal_map(path: PathLike) -> Normal_Map_File:
    """
    Read a normal map in camera coordinates (x right, y down, z forward) from
    a 3-channel float map.

    Zero vectors and vectors with NaN components are masked out. Vectors
    whose length deviates from 1 beyond storage precision are renormalized
    and counted, while deviations above 1% raise `NonUnitNormals`.
    """

    data = read_pfm(path)
    if data.ndim != 3:
        raise MalformedHeader(f'Normal map {path} must have three channels')

    normals = data.astype(numpy.float64)
    invalid = numpy.any(~numpy.isfinite(normals), axis=2)
    if numpy.any(invalid):
        logging.warning('Masking out %d pixels with non-finite normals in %s',
                        int(numpy.count_nonzero(invalid)), path)
        normals[invalid] = 0.0

    norms = numpy.linalg.norm(normals, axis=2)
    mask = norms > 0.0
    deviation = numpy.where(mask, numpy.abs(norms - 1.0), 0.0)
    if numpy.any(deviation > NON_UNIT_TOLERANCE):
        raise NonUnitNormals(f'Normal map {path} holds vectors with length up '
                             f'to {float(numpy.max(norms))}, which is not a '
                             'unit normal map')

    rescale = deviation > RENORMALIZE_TOLERANCE
    renormalized = int(numpy.count_nonzero(rescale))
    if renormalized > 0:
        normals[rescale] /= norms[rescale, numpy.newaxis]
        logging.warning('Renormalized %d normals in %s', renormalized, path)

    height, width = mask.shape
    return Normal_Map_File(normals, mask, width, height, renormalized)

def write_normal_map(path: PathLike, normals: numpy.ndarray,
                     mask: numpy.ndarray) -> None:
    """
    Write a normal map of shape (height, width, 3) as a float map, with
    pixels outside the mask stored as zero vectors.
    """

    values = numpy.where(mask[..., numpy.newaxis], normals, 0.0)
    if numpy.any(~numpy.isfinite(values)):
        raise ValueError(f'Normal map for {path} holds non-finite values inside the mask')

    write_pfm(path, values)

def read_depth_map(path: PathLike) -> numpy.ndarray:
    """
    Read a depth map from a 1-channel float map as a float64 array.
    """

    data = read_pfm(path)
    if data.ndim != 2:
        raise MalformedHeader(f'Depth map {path} must have a single channel')

    return data.astype(numpy.float64)

def write_depth_map(path: PathLike, depth: numpy.ndarray,
                    mask: numpy.ndarray) -> None:
    """
    Write a depth map as a 1-channel float map. Pixels outside the mask are
    written as 0, and NaN values inside the mask are refused.
    """

    if depth.shape != mask.shape:
        raise ValueError(f'Depth map shape {depth.shape} does not match mask shape {mask.shape}')
    if numpy.any(numpy.isnan(depth[mask])):
        raise ValueError(f'Depth map for {path} holds NaN values inside the mask')

    write_pfm(path, numpy.where(mask, depth, 0.0))

def write_pair_maps(directory: PathLike, prefix: str,
                    maps: Dict[str, numpy.ndarray]) -> List[Path]:
    """
    Write per-pair fields that are unpacked into one image per neighbor
    direction as `<prefix>_<direction>.pfm` files in `directory`.
    """

    paths = []
    for direction, values in maps.items():
        path = Path(directory, f'{prefix}_{direction}.pfm')
        write_pfm(path, values)
        paths.append(path)

    return paths

def read_pair_maps(directory: PathLike, prefix: str,
                   directions: Sequence[str]) -> Dict[str, numpy.ndarray]:
    """
    Read per-direction images written by `write_pair_maps`.
    """

    return {
        direction: read_pfm(Path(directory, f'{prefix}_{direction}.pfm')).astype(numpy.float64)
        for direction in directions
    }

def write_points(path: PathLike, points: numpy.ndarray) -> None:
    """
    Write a point cloud of shape (N, 3) as an `.xyz` text file with one
    point per line.
    """

    try:
        numpy.savetxt(path, points, fmt='%.9g')
    except OSError as error:
        raise IoFailure(f'Cannot write point cloud {path}: {error}') from error

def read_diligent(directory: PathLike) -> Diligent_Data:
    """
    Read a DiLiGenT-style object directory with `normal.txt` (one normal per
    pixel in row-major order), `mask.png` and `K.txt` (3x3 intrinsics).

    The normals of this layout use y up and z toward the viewer; they are
    converted to the camera frame with y down and z forward. This reader is
    best-effort: the layout follows public dataset conventions.
    """

    folder = Path(directory)
    try:
        image = imageio.imread(folder / 'mask.png')
        raw_normals = numpy.loadtxt(folder / 'normal.txt', dtype=numpy.float64)
        intrinsics = numpy.loadtxt(folder / 'K.txt', dtype=numpy.float64)
    except OSError as error:
        raise IoFailure(f'Cannot read DiLiGenT-style directory {folder}: {error}') from error

    if image.ndim == 3:
        image = image[..., 0]
    maxval = 65535 if image.dtype == numpy.uint16 else 255
    mask = image >= (maxval + 1) // 2
    height, width = mask.shape
    if raw_normals.shape != (height * width, 3):
        raise MalformedHeader(f'normal.txt in {folder} has shape {raw_normals.shape}, '
                              f'expected ({height * width}, 3)')
    if intrinsics.shape != (3, 3):
        raise MalformedHeader(f'K.txt in {folder} is not a 3x3 matrix')

    normals = raw_normals.reshape(height, width, 3) * numpy.array([1.0, -1.0, -1.0])
    norms = numpy.linalg.norm(normals, axis=2)
    mask &= norms > 0.0
    normals[mask] /= norms[mask, numpy.newaxis]
    normals[~mask] = 0.0

    return Diligent_Data(normals, mask, intrinsics)
