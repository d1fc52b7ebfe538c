"""
Per-pair quantities of the local planarity formulation.

Two neighboring pixels a and b are modeled by two plane segments, one through
each surface point with the normal of its pixel, which meet at the ray
through an intermediate subpixel m (ray tau_m), possibly with a jump epsilon
in depth along the camera z axis. This yields the depth relation

    z_a = omega_eps * epsilon + omega * z_b

with closed-form coefficients, which this module computes along with the
log-depth right-hand side, the equation scale factor gamma, the discontinuity
activation beta, and a dense 6x6 oracle for the relation.

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

from typing import Callable, Dict, NamedTuple, Optional, Sequence, Type, \
    Union
import numpy
from scipy.special import expit

Vector = Union[Sequence[float], numpy.ndarray]
Scalar = Union[float, numpy.ndarray]
L_type = Type['Lambda_Mode']

# Denominators below this magnitude make a pair degenerate.
DEGENERATE_THRESHOLD = 1e-14
# Pairs with a smaller |omega_eps| never receive discontinuity updates.
ELIGIBLE_THRESHOLD = 1e-12
SIGMOID_CLAMP = 500.0

class DegenerateRay(ValueError):
    """
    Error indicating that a pair has a vanishing denominator, such as a normal
    that is perpendicular to its viewing ray at an occluding boundary.
    """

class SingularSystem(RuntimeError):
    """
    Error indicating that the dense local plane system is rank-deficient.
    """

class NonPositiveLogArgument(RuntimeError):
    """
    Error indicating that the argument of the log-depth right-hand side is
    not positive, which is impossible for valid pairs and thus points at a
    pair that escaped filtering.
    """

    def __init__(self, message: str, index: Optional[int] = None) -> None:
        super().__init__(message)
        self.index = index

Pair_Coefficients = NamedTuple('Pair_Coefficients', [
    ('omega_eps', float),
    ('omega', float),
    ('gamma', float),
    ('tau_m', numpy.ndarray),
    ('n_dot_tau_a', float),
    ('n_dot_tau_b', float),
    ('n_dot_tau_m_a', float),
    ('n_dot_tau_m_b', float),
    ('valid', bool)
])

Coefficient_Arrays = NamedTuple('Coefficient_Arrays', [
    ('omega_eps', numpy.ndarray),
    ('omega', numpy.ndarray),
    ('gamma', numpy.ndarray),
    ('gamma_weight', numpy.ndarray),
    ('delta', numpy.ndarray),
    ('scale', numpy.ndarray),
    ('n_dot_tau_a', numpy.ndarray),
    ('n_dot_tau_b', numpy.ndarray),
    ('n_dot_tau_m_a', numpy.ndarray),
    ('n_dot_tau_m_b', numpy.ndarray),
    ('degenerate', numpy.ndarray),
    ('valid', numpy.ndarray)
])

def sigmoid(x: Scalar, k: float = 1.0) -> Scalar:
    """
    Compute the logistic function of `k * x`, with the exponent clamped so
    that large magnitudes saturate without overflow.
    """

    return expit(numpy.clip(numpy.multiply(k, x), -SIGMOID_CLAMP, SIGMOID_CLAMP))

def _dot(first: numpy.ndarray, second: numpy.ndarray) -> numpy.ndarray:
    return numpy.einsum('...i,...i->...', first, second)

class Lambda_Mode:
    """
    Choice of the intermediate ray tau_m = tau_a + lambda * (tau_b - tau_a)
    between the rays of two neighboring pixels.

    Adaptive modes evaluate a sigmoid of a difference f(a, b) that changes
    sign when a and b are exchanged, so that lambda for (a, b) and (b, a) sums
    to one and both directions share the same tau_m.
    """

    _mode_types: Dict[str, L_type] = {}

    @classmethod
    def register(cls, name: str) -> Callable[[L_type], L_type]:
        """
        Decorator method for a class that implements a lambda mode under the
        `name` prefix of its textual form.
        """

        def decorator(subject: L_type) -> L_type:
            cls._mode_types[name] = subject
            subject.NAME = name
            return subject

        return decorator

    @classmethod
    def parse(cls, text: str) -> 'Lambda_Mode':
        """
        Parse a textual mode such as `const:0.5` or `ntau:2`.
        """

        name, _, argument = text.strip().partition(':')
        if name not in cls._mode_types:
            raise ValueError(f"Unknown lambda mode '{text}'")
        try:
            value = float(argument)
        except ValueError as error:
            raise ValueError(f"Lambda mode '{text}' needs a numeric parameter") from error

        return cls._mode_types[name](value)

    NAME = ''

    def __init__(self, value: float) -> None:
        self._value = float(value)

    @property
    def value(self) -> float:
        """
        Retrieve the numeric parameter of the mode.
        """

        return self._value

    def interpolation(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                      n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        """
        Compute lambda for arrays of normals and rays of shape (..., 3).
        """

        raise NotImplementedError('Must be implemented by subclasses')

    def __str__(self) -> str:
        return f'{self.NAME}:{self._value:g}'

    def __repr__(self) -> str:
        return f"Lambda_Mode.parse('{self}')"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Lambda_Mode) and str(self) == str(other)

    def __hash__(self) -> int:
        return hash(str(self))

@Lambda_Mode.register('const')
class Constant_Lambda(Lambda_Mode):
    """
    Fixed interpolation weight, the midpoint for 0.5.
    """

    def __init__(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f'Constant lambda must lie in [0, 1], not {value}')
        super().__init__(value)

    def interpolation(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                      n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        return numpy.full(numpy.shape(n_a)[:-1], self._value)

class Sigmoid_Lambda(Lambda_Mode):
    """
    Adaptive interpolation weight from a sigmoid with sharpness k_m.
    """

    def __init__(self, value: float) -> None:
        if not value > 0.0:
            raise ValueError(f'Lambda sigmoid sharpness must be positive, not {value}')
        super().__init__(value)

    def difference(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                   n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        """
        Compute the antisymmetric difference f(a, b) that the sigmoid acts on.
        """

        raise NotImplementedError('Must be implemented by subclasses')

    def interpolation(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                      n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        return numpy.asarray(sigmoid(self.difference(n_a, tau_a, n_b, tau_b),
                                     self._value))

@Lambda_Mode.register('ntau')
class Sigmoid_NTau_Lambda(Sigmoid_Lambda):
    """
    Moves tau_m toward the pixel whose normal faces its ray more directly.
    """

    def difference(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                   n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        return _dot(n_a, tau_a) ** 2 - _dot(n_b, tau_b) ** 2

@Lambda_Mode.register('nz')
class Sigmoid_Nz_Lambda(Sigmoid_Lambda):
    """
    Uses the squared z components of the normals.
    """

    def difference(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                   n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        return n_a[..., 2] ** 2 - n_b[..., 2] ** 2

@Lambda_Mode.register('prod')
class Sigmoid_Product_Lambda(Sigmoid_Lambda):
    """
    Uses the squared product of the normal z component with n dot tau.
    """

    def difference(self, n_a: numpy.ndarray, tau_a: numpy.ndarray,
                   n_b: numpy.ndarray, tau_b: numpy.ndarray) -> numpy.ndarray:
        return (n_a[..., 2] * _dot(n_a, tau_a)) ** 2 - \
            (n_b[..., 2] * _dot(n_b, tau_b)) ** 2

class Gamma_Mode:
    """
    Decomposition of the equation scale factor gamma.

    The full factor is f * (n_a . tau_a) with f = |u_b - u_a| / |tau_b - tau_a|.
    The cost side multiplies the rows of the least squares system, while the
    weight side scales the residuals that the bilateral weights compare:

    - `full`: both sides use f * (n . tau)
    - `no_f`: cost n . tau, weights f * (n . tau)
    - `const_f:V`: both sides use V * (n . tau)
    - `no_ndott`: cost f, weights f * (n . tau)
    """

    MODES = ('full', 'no_f', 'const_f', 'no_ndott')

    def __init__(self, name: str, value: Optional[float] = None) -> None:
        if name not in self.MODES:
            raise ValueError(f"Unknown gamma mode '{name}'")
        if name == 'const_f':
            if value is None or not value > 0:
                raise ValueError('Gamma mode const_f needs a positive focal value')
        elif value is not None:
            raise ValueError(f'Gamma mode {name} takes no parameter')

        self._name = name
        self._value = value

    @classmethod
    def parse(cls, text: str) -> 'Gamma_Mode':
        """
        Parse a textual mode such as `full` or `const_f:2000`.
        """

        name, separator, argument = text.strip().partition(':')
        if not separator:
            return cls(name)
        try:
            return cls(name, float(argument))
        except ValueError as error:
            raise ValueError(f"Invalid gamma mode '{text}': {error}") from error

    @property
    def name(self) -> str:
        """
        Retrieve the name of the mode without its parameter.
        """

        return self._name

    def cost(self, scale: Scalar, n_dot_tau: Scalar) -> Scalar:
        """
        Compute the cost-side factor from the pixel-to-ray scale f and n . tau.
        """

        if self._name == 'full':
            return numpy.multiply(scale, n_dot_tau)
        if self._name == 'no_f':
            return n_dot_tau
        if self._name == 'const_f':
            return numpy.multiply(self._value, n_dot_tau)

        return scale

    def weight(self, scale: Scalar, n_dot_tau: Scalar) -> Scalar:
        """
        Compute the weight-side factor that scales residuals for the
        bilateral weights.
        """

        if self._name == 'const_f':
            return numpy.multiply(self._value, n_dot_tau)

        return numpy.multiply(scale, n_dot_tau)

    def __str__(self) -> str:
        if self._value is None:
            return self._name

        return f'{self._name}:{self._value:g}'

    def __repr__(self) -> str:
        return f"Gamma_Mode.parse('{self}')"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Gamma_Mode) and str(self) == str(other)

    def __hash__(self) -> int:
        return hash(str(self))

class Beta_Params:
    """
    Sharpness `q` and midpoint `rho` of the discontinuity activation.
    """

    def __init__(self, q: float = 50.0, rho: float = 0.25) -> None:
        if not q > 0:
            raise ValueError(f'Activation sharpness q must be positive, not {q}')
        if not 0.0 < rho < 1.0:
            raise ValueError(f'Activation midpoint rho must lie in (0, 1), not {rho}')

        self.q = float(q)
        self.rho = float(rho)

    def __repr__(self) -> str:
        return f'Beta_Params(q={self.q:g}, rho={self.rho:g})'

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Beta_Params) and \
            (self.q, self.rho) == (other.q, other.rho)

    def __hash__(self) -> int:
        return hash((self.q, self.rho))

def interp_tau_m(tau_a: Vector, tau_b: Vector, n_a: Vector, n_b: Vector,
                 mode: Lambda_Mode) -> numpy.ndarray:
    """
    Compute the intermediate ray tau_m for one pair or for arrays of pairs
    of shape (..., 3). The third component of the result is exactly 1.
    """

    tau_a = numpy.asarray(tau_a, dtype=numpy.float64)
    tau_b = numpy.asarray(tau_b, dtype=numpy.float64)
    weight = mode.interpolation(numpy.asarray(n_a, dtype=numpy.float64), tau_a,
                                numpy.asarray(n_b, dtype=numpy.float64), tau_b)
    tau_m = tau_a + weight[..., numpy.newaxis] * (tau_b - tau_a)
    tau_m[..., 2] = 1.0
    return tau_m

def coefficient_arrays(n_a: numpy.ndarray, n_b: numpy.ndarray,
                       tau_a: numpy.ndarray, tau_b: numpy.ndarray,
                       tau_m: numpy.ndarray, distance: Scalar = 1.0,
                       gamma_mode: Optional[Gamma_Mode] = None) -> Coefficient_Arrays:
    """
    Compute pair coefficients for arrays of pairs with vectors of shape
    (..., 3) and pixel distances |u_b - u_a| in `distance`.

    Degenerate pairs are flagged rather than raised; their numeric fields are
    zero and they are never valid. The BiNI right-hand side `delta` is the
    central camera form f * n_a . (tau_b - tau_a).
    """

    if gamma_mode is None:
        gamma_mode = Gamma_Mode('full')

    n_dot_tau_a = _dot(n_a, tau_a)
    n_dot_tau_b = _dot(n_b, tau_b)
    n_dot_tau_m_a = _dot(n_a, tau_m)
    n_dot_tau_m_b = _dot(n_b, tau_m)
    delta_tau = tau_b - tau_a
    tau_distance = numpy.linalg.norm(delta_tau, axis=-1)

    degenerate = (numpy.abs(n_dot_tau_a) < DEGENERATE_THRESHOLD) | \
        (numpy.abs(n_dot_tau_m_b) < DEGENERATE_THRESHOLD) | \
        (tau_distance < DEGENERATE_THRESHOLD)
    safe_a = numpy.where(degenerate, 1.0, n_dot_tau_a)
    safe_m_b = numpy.where(degenerate, 1.0, n_dot_tau_m_b)
    safe_distance = numpy.where(degenerate, 1.0, tau_distance)

    omega_eps = numpy.where(degenerate, 0.0, n_a[..., 2] / safe_a)
    omega = numpy.where(degenerate, 0.0,
                        (n_dot_tau_m_a * n_dot_tau_b) / (safe_a * safe_m_b))
    scale = numpy.where(degenerate, 0.0, distance / safe_distance)
    gamma = numpy.asarray(gamma_mode.cost(scale, n_dot_tau_a))
    gamma_weight = numpy.asarray(gamma_mode.weight(scale, n_dot_tau_a))
    delta = scale * _dot(n_a, delta_tau)

    valid = ~degenerate & (n_dot_tau_a < 0) & (n_dot_tau_b < 0) & (omega > 0) & \
        numpy.isfinite(omega) & numpy.isfinite(omega_eps)

    return Coefficient_Arrays(omega_eps, omega, gamma, gamma_weight, delta, scale,
                              n_dot_tau_a, n_dot_tau_b, n_dot_tau_m_a,
                              n_dot_tau_m_b, degenerate, valid)

def pair_coefficients(n_a: Vector, n_b: Vector, tau_a: Vector, tau_b: Vector,
                      tau_m: Vector, distance: float = 1.0,
                      gamma_mode: Optional[Gamma_Mode] = None) -> Pair_Coefficients:
    """
    Compute the coefficients of the depth relation for a single pair with
    unit normals `n_a`, `n_b` and rays `tau_a`, `tau_b`, `tau_m`.

    Raises `DegenerateRay` if n_a . tau_a or n_b . tau_m vanishes, or if the
    rays of a and b coincide.
    """

    arrays = [numpy.asarray(vector, dtype=numpy.float64)[numpy.newaxis]
              for vector in (n_a, n_b, tau_a, tau_b, tau_m)]
    coeffs = coefficient_arrays(*arrays, distance=distance, gamma_mode=gamma_mode)
    if coeffs.degenerate[0]:
        raise DegenerateRay('Pair has a vanishing n.tau denominator or coinciding rays')

    return Pair_Coefficients(float(coeffs.omega_eps[0]), float(coeffs.omega[0]),
                             float(coeffs.gamma[0]), arrays[4][0].copy(),
                             float(coeffs.n_dot_tau_a[0]),
                             float(coeffs.n_dot_tau_b[0]),
                             float(coeffs.n_dot_tau_m_a[0]),
                             float(coeffs.n_dot_tau_m_b[0]),
                             bool(coeffs.valid[0]))

def local_plane_oracle(n_a: Vector, n_b: Vector, tau_a: Vector, tau_b: Vector,
                       tau_m: Vector, z_b: float, epsilon: float) -> float:
    """
    Solve the dense 6x6 local plane system for the depth z_a of pixel a.

    The unknowns are the offsets (dx_ma, dy_ma, dz_ma) from the surface point
    of a and (dx_mb, dy_mb, dz_mb) from the surface point of b toward the
    meeting point on ray m. Plane b contains its offset, plane a contains the
    meeting point shifted by `epsilon` along z, and both offsets end on ray m.
    """

    if not z_b > 0:
        raise ValueError(f'Depth z_b must be positive, not {z_b}')

    n_a = numpy.asarray(n_a, dtype=numpy.float64)
    n_b = numpy.asarray(n_b, dtype=numpy.float64)
    txa, tya = float(tau_a[0]), float(tau_a[1])
    txb, tyb = float(tau_b[0]), float(tau_b[1])
    txm, tym = float(tau_m[0]), float(tau_m[1])

    matrix = numpy.array([
        [0.0, 0.0, 0.0, 1.0, 0.0, -txm],
        [0.0, 0.0, 0.0, 0.0, 1.0, -tym],
        [-1.0, 0.0, txa, 1.0, 0.0, -txa],
        [0.0, -1.0, tya, 0.0, 1.0, -tya],
        [0.0, 0.0, 0.0, n_b[0], n_b[1], n_b[2]],
        [n_a[0], n_a[1], n_a[2], 0.0, 0.0, 0.0]
    ])
    vector = numpy.array([
        (txm - txb) * z_b,
        (tym - tyb) * z_b,
        (txa - txb) * z_b,
        (tya - tyb) * z_b,
        0.0,
        -n_a[2] * epsilon
    ])

    if numpy.linalg.matrix_rank(matrix) < 6:
        raise SingularSystem('Local plane system is rank-deficient')
    try:
        solution = numpy.linalg.solve(matrix, vector)
    except numpy.linalg.LinAlgError as error:
        raise SingularSystem(f'Local plane system cannot be solved: {error}') from error

    return float(z_b + solution[5] - solution[2])

def log_rhs_arrays(omega: numpy.ndarray, omega_eps: numpy.ndarray,
                   alpha: numpy.ndarray, beta: numpy.ndarray) -> numpy.ndarray:
    """
    Compute log(omega + omega_eps * alpha * beta) for arrays of pairs.

    Raises `NonPositiveLogArgument` with the index of the first pair whose
    argument is not positive.
    """

    argument = omega + omega_eps * alpha * beta
    bad = ~(argument > 0)
    if numpy.any(bad):
        index = int(numpy.flatnonzero(bad)[0])
        raise NonPositiveLogArgument(f'Log argument {argument[index]!r} is not '
                                     f'positive for pair {index}', index)

    return numpy.log(argument)

def log_rhs(coeffs: Pair_Coefficients, alpha: float, beta: float) -> float:
    """
    Compute the log-depth right-hand side of a valid pair for a relative
    discontinuity `alpha` and activation `beta`.
    """

    if not coeffs.valid:
        raise ValueError('Log right-hand side requires valid pair coefficients')

    return float(log_rhs_arrays(numpy.array([coeffs.omega]),
                                numpy.array([coeffs.omega_eps]),
                                numpy.array([alpha]), numpy.array([beta]))[0])

def gamma_factor(n_a: Vector, tau_a: Vector, u_a: Vector, u_b: Vector,
                 tau_b: Vector, mode: Optional[Gamma_Mode] = None) -> float:
    """
    Compute the cost-side scale factor gamma of the equation for pixel a
    with neighbor b at pixel coordinates `u_a` and `u_b`.
    """

    if mode is None:
        mode = Gamma_Mode('full')

    tau_a = numpy.asarray(tau_a, dtype=numpy.float64)
    tau_b = numpy.asarray(tau_b, dtype=numpy.float64)
    tau_distance = float(numpy.linalg.norm(tau_b - tau_a))
    if tau_distance < DEGENERATE_THRESHOLD:
        raise DegenerateRay('Rays of the pair coincide')

    distance = float(numpy.linalg.norm(numpy.subtract(u_b, u_a)))
    if distance == 0.0:
        raise ValueError('Pixels of the pair coincide')

    n_dot_tau = float(numpy.dot(numpy.asarray(n_a, dtype=numpy.float64), tau_a))
    return float(mode.cost(distance / tau_distance, n_dot_tau))

def beta_activation(w_prev: Scalar, params: Optional[Beta_Params] = None) -> Scalar:
    """
    Compute the discontinuity activation sigma(q * (rho - w_prev)) for a
    previous bilateral weight or an array of them.
    """

    if params is None:
        params = Beta_Params()

    return sigmoid(numpy.subtract(params.rho, w_prev), params.q)

