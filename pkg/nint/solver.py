"""
Iterative discontinuity-aware integration of normal maps.

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
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union
import numpy
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg
from .camera import Camera_Model
from .config import Configuration
from .formulation import Beta_Params, Gamma_Mode, Lambda_Mode, \
    NonPositiveLogArgument, beta_activation, log_rhs_arrays, sigmoid
from .graph import Connectivity, Pair_Graph, build_graph

Alpha_Input = Union[numpy.ndarray, Dict[str, numpy.ndarray]]

MACHINE_EPSILON = float(numpy.finfo(numpy.float64).eps)

class EmptyMask(ValueError):
    """
    Error indicating that a mask selects no pixels.
    """

@unique
class Method(Enum):
    """
    Right-hand side of the pair equations.
    """

    OURS = 'ours'
    BINI = 'bini'

CG_Result = NamedTuple('CG_Result', [('solution', numpy.ndarray),
                                     ('iterations', int),
                                     ('converged', bool),
                                     ('residual', float)])

class Solver_Config:
    """
    Hyperparameters of the integration.

    The defaults are the main configuration: 1200 outer iterations, bilateral
    sharpness k = 2, activation q = 50 and rho = 0.25, midpoint tau_m, full
    gamma, 4-connectivity and discontinuity estimation enabled.
    """

    FIELDS = ('max_outer_iters', 'k', 'beta', 'alpha_enabled', 'method',
              'gamma_mode', 'lambda_mode', 'connectivity', 'cg_tol',
              'cg_max_iters', 'early_stop_rel_energy', 'beta_override',
              'jacobi', 'log_interval')

    def __init__(self, max_outer_iters: int = 1200, k: float = 2.0,
                 beta: Optional[Beta_Params] = None,
                 alpha_enabled: bool = True, method: Method = Method.OURS,
                 gamma_mode: Optional[Gamma_Mode] = None,
                 lambda_mode: Optional[Lambda_Mode] = None,
                 connectivity: Connectivity = Connectivity.FOUR,
                 cg_tol: float = 1e-9, cg_max_iters: int = 5000,
                 early_stop_rel_energy: Optional[float] = 1e-9,
                 beta_override: Optional[float] = None,
                 jacobi: bool = False, log_interval: int = 100) -> None:
        if max_outer_iters < 1:
            raise ValueError(f'At least one outer iteration is needed, not {max_outer_iters}')
        if not k > 0:
            raise ValueError(f'Bilateral sharpness k must be positive, not {k}')
        if not cg_tol > 0 or cg_max_iters < 1:
            raise ValueError('Conjugate gradient tolerance and iteration limit must be positive')
        if early_stop_rel_energy is not None and not early_stop_rel_energy > 0:
            raise ValueError('Early stopping threshold must be positive or disabled')
        if beta_override is not None and not 0.0 <= beta_override <= 1.0:
            raise ValueError(f'Activation override must lie in [0, 1], not {beta_override}')

        self.max_outer_iters = int(max_outer_iters)
        self.k = float(k)
        self.beta = Beta_Params() if beta is None else beta
        self.alpha_enabled = bool(alpha_enabled)
        self.method = method
        self.gamma_mode = Gamma_Mode('full') if gamma_mode is None else gamma_mode
        self.lambda_mode = Lambda_Mode.parse('const:0.5') \
            if lambda_mode is None else lambda_mode
        self.connectivity = connectivity
        self.cg_tol = float(cg_tol)
        self.cg_max_iters = int(cg_max_iters)
        self.early_stop_rel_energy = early_stop_rel_energy
        self.beta_override = beta_override
        self.jacobi = bool(jacobi)
        self.log_interval = int(log_interval)

    @classmethod
    def from_settings(cls, section: str = 'solver') -> 'Solver_Config':
        """
        Create a configuration with defaults from the settings file, where
        options that are not set keep the built-in defaults.
        """

        def get(option: str) -> Optional[str]:
            return Configuration.get_option(section, option)

        options: Dict[str, Any] = {}
        parsers: Dict[str, Tuple[str, Any]] = {
            'iterations': ('max_outer_iters', int),
            'k': ('k', float),
            'method': ('method', Method),
            'connectivity': ('connectivity', Connectivity),
            'lambda_m': ('lambda_mode', Lambda_Mode.parse),
            'gamma_mode': ('gamma_mode', Gamma_Mode.parse),
            'cg_tol': ('cg_tol', float),
            'cg_max_iters': ('cg_max_iters', int),
            'log_interval': ('log_interval', int)
        }
        for option, (field, parser) in parsers.items():
            value = get(option)
            if value is not None and value != '':
                options[field] = parser(value)

        alpha = get('alpha')
        if alpha is not None:
            options['alpha_enabled'] = Configuration.has_value(alpha)
        jacobi = get('jacobi')
        if jacobi is not None:
            options['jacobi'] = Configuration.has_value(jacobi)
        early_stop = get('early_stop')
        if early_stop is not None:
            options['early_stop_rel_energy'] = float(early_stop) \
                if Configuration.has_value(early_stop) else None

        q = get('q')
        rho = get('rho')
        if q is not None or rho is not None:
            options['beta'] = Beta_Params(50.0 if q is None else float(q),
                                          0.25 if rho is None else float(rho))

        return cls(**options)

    def replace(self, **changes: Any) -> 'Solver_Config':
        """
        Create a copy of this configuration with some fields changed.
        """

        unknown = set(changes) - set(self.FIELDS)
        if unknown:
            raise TypeError(f'Unknown solver configuration fields: {", ".join(sorted(unknown))}')

        options = {field: getattr(self, field) for field in self.FIELDS}
        options.update(changes)
        return Solver_Config(**options)

    def as_row(self) -> Dict[str, str]:
        """
        Describe the hyperparameters as string columns of a table row.
        """

        return {
            'method': self.method.value,
            'connectivity': self.connectivity.value,
            'lambda_m': str(self.lambda_mode),
            'gamma_mode': str(self.gamma_mode),
            'k': f'{self.k:g}',
            'q': f'{self.beta.q:g}',
            'rho': f'{self.beta.rho:g}',
            'alpha': 'yes' if self.alpha_enabled else 'no',
            'iters': str(self.max_outer_iters)
        }

class Solver_State:
    """
    Variables of the optimization: log depth per pixel and relative
    discontinuity, bilateral weight and activation per directed pair.
    """

    def __init__(self, z_tilde: numpy.ndarray, alpha: numpy.ndarray,
                 w: numpy.ndarray, beta: numpy.ndarray, t: int = 0,
                 energy: float = numpy.inf) -> None:
        self.z_tilde = z_tilde
        self.alpha = alpha
        self.w = w
        self.beta = beta
        self.t = t
        self.energy = energy

    @classmethod
    def initial(cls, graph: Pair_Graph) -> 'Solver_State':
        """
        Create the initial state: a planar surface of unit depth without any
        discontinuities.
        """

        pairs = graph.pair_count
        return cls(numpy.zeros(graph.pixel_count), numpy.zeros(pairs),
                   numpy.full(pairs, 0.5), numpy.zeros(pairs))

class Diagnostics:
    """
    Record of the progress and notable conditions of an integration run.
    """

    def __init__(self, graph: Pair_Graph) -> None:
        self.energies: List[float] = []
        self.cg_iterations: List[int] = []
        self.notes: List[str] = []
        self.dropped_pairs = graph.dropped
        self.components = graph.component_count
        self.stop_reason = 'iterations'
        self.stagnations = 0

    @property
    def iterations(self) -> int:
        """
        Retrieve the number of outer iterations that were run.
        """

        return len(self.energies)

    @property
    def non_increasing_fraction(self) -> float:
        """
        Retrieve the fraction of steps in which the energy did not increase.
        """

        if len(self.energies) < 2:
            return 1.0

        steps = numpy.diff(numpy.array(self.energies))
        return float(numpy.count_nonzero(steps <= 0.0) / len(steps))

    def note(self, message: str) -> None:
        """
        Add a note and log it as a warning.
        """

        self.notes.append(message)
        logging.warning('%s', message)

    def as_dict(self) -> Dict[str, Any]:
        """
        Convert the diagnostics to a JSON-compatible dictionary.
        """

        return {
            'iterations': self.iterations,
            'stop_reason': self.stop_reason,
            'energy': self.energies,
            'cg_iterations': self.cg_iterations,
            'non_increasing_fraction': self.non_increasing_fraction,
            'dropped_pairs': self.dropped_pairs,
            'components': self.components,
            'cg_stagnations': self.stagnations,
            'notes': self.notes
        }

class Integration_Result:
    """
    Outcome of an integration run.
    """

    def __init__(self, graph: Pair_Graph, rays: numpy.ndarray,
                 state: Solver_State, diagnostics: Diagnostics) -> None:
        self.graph = graph
        self.state = state
        self.diagnostics = diagnostics
        self._rays = rays

        height, width = graph.shape
        pixel_depth = numpy.exp(state.z_tilde)
        depth = numpy.zeros(height * width)
        depth[graph.pixels] = pixel_depth
        self.depth = depth.reshape(height, width)

        self.epsilon = state.alpha * pixel_depth[graph.b]
        self.weights = state.w.copy()

        maximum = numpy.zeros(height * width)
        numpy.maximum.at(maximum, graph.pixels[graph.a], numpy.abs(self.epsilon))
        self.epsilon_max = maximum.reshape(height, width)

    @property
    def mask(self) -> numpy.ndarray:
        """
        Retrieve the mask of pixels with an integrated depth.
        """

        return self.graph.mask

    def epsilon_maps(self) -> Dict[str, numpy.ndarray]:
        """
        Retrieve the per-pair discontinuities as one image per direction.
        """

        return self.graph.pair_maps(self.epsilon)

    def weight_maps(self) -> Dict[str, numpy.ndarray]:
        """
        Retrieve the final bilateral weights as one image per direction.
        """

        return self.graph.pair_maps(self.weights)

    def points(self) -> numpy.ndarray:
        """
        Retrieve the 3D points of the masked pixels as an (N, 3) array.
        """

        rays = self._rays.reshape(-1, 3)[self.graph.pixels]
        return rays * numpy.exp(self.state.z_tilde)[:, numpy.newaxis]

def _differences(state: Solver_State, graph: Pair_Graph) -> numpy.ndarray:
    return state.z_tilde[graph.a] - state.z_tilde[graph.b]

def residuals(state: Solver_State, graph: Pair_Graph,
              gamma: Optional[numpy.ndarray] = None) -> numpy.ndarray:
    """
    Compute the residual gamma * (z_a - z_b) of every directed pair.

    The weight-side gamma of the graph is used unless `gamma` is given.
    """

    if gamma is None:
        gamma = graph.coeffs.gamma_weight

    return gamma * _differences(state, graph)

def bilateral_weights(state: Solver_State, graph: Pair_Graph,
                      k: float = 2.0) -> numpy.ndarray:
    """
    Compute the bilateral weight of every pair from the squared residuals
    of the pair and of the pair on the opposite side of the same pixel.

    Pairs without an opposite pair get the neutral weight 0.5.
    """

    squared = residuals(state, graph) ** 2
    weights = numpy.full(graph.pair_count, 0.5)
    has_opposite = graph.opposite >= 0
    opposite = graph.opposite[has_opposite]
    weights[has_opposite] = sigmoid(squared[opposite] - squared[has_opposite], k)
    return weights

def alpha_update(state: Solver_State, graph: Pair_Graph) -> numpy.ndarray:
    """
    Compute the relative discontinuity of every eligible pair that makes
    its equation exact for the current log depth; other pairs get 0.
    """

    coeffs = graph.coeffs
    eligible = graph.eligible
    alpha = numpy.zeros(graph.pair_count)
    ratio = numpy.exp(_differences(state, graph)[eligible])
    alpha[eligible] = (ratio - coeffs.omega[eligible]) / coeffs.omega_eps[eligible]
    return alpha

def pair_targets(graph: Pair_Graph, state: Solver_State,
                 config: Solver_Config) -> numpy.ndarray:
    """
    Compute the gamma-scaled right-hand side of every pair equation.

    Raises `NonPositiveLogArgument` with the pixels of the offending pair.
    """

    coeffs = graph.coeffs
    if config.method is Method.BINI:
        # Full-gamma rows have the right-hand side delta; other modes
        # rescale it to their cost-side gamma.
        return coeffs.delta * (coeffs.gamma / (coeffs.scale * coeffs.n_dot_tau_a))

    try:
        rhs = log_rhs_arrays(coeffs.omega, coeffs.omega_eps, state.alpha,
                             state.beta)
    except NonPositiveLogArgument as error:
        location = None if error.index is None else graph.pair_location(error.index)
        raise NonPositiveLogArgument(f'{error} at pixels {location} in '
                                     f'iteration {state.t}', error.index) from error

    return coeffs.gamma * rhs

def assemble_normal_equations(graph: Pair_Graph, state: Solver_State,
                              config: Solver_Config,
                              targets: Optional[numpy.ndarray] = None) \
        -> Tuple[sparse.csr_matrix, numpy.ndarray]:
    """
    Assemble the normal equations M = A^T W A and r = A^T W b of the
    weighted least squares problem, where each pair contributes the row
    gamma * (z_a - z_b) = b with weight w.
    """

    if targets is None:
        targets = pair_targets(graph, state, config)

    gamma = graph.coeffs.gamma
    difference = graph.difference_matrix()
    row_weights = state.w * gamma * gamma
    matrix = (difference.T @ sparse.diags(row_weights) @ difference).tocsr()
    vector = difference.T @ (state.w * gamma * targets)
    return matrix, vector

def objective(graph: Pair_Graph, state: Solver_State,
              targets: numpy.ndarray) -> float:
    """
    Compute the weighted least squares energy of the current state.
    """

    rows = graph.coeffs.gamma * _differences(state, graph) - targets
    return float(numpy.sum(state.w * rows * rows))

def _norm(vector: numpy.ndarray) -> float:
    largest = float(numpy.max(numpy.abs(vector))) if vector.size else 0.0
    if largest == 0.0:
        return 0.0

    return largest * float(numpy.linalg.norm(vector / largest))

def cg_solve(matrix: sparse.spmatrix, vector: numpy.ndarray,
             x0: Optional[numpy.ndarray] = None, tol: float = 1e-9,
             max_iters: int = 5000, jacobi: bool = False) -> CG_Result:
    """
    Solve a symmetric positive semidefinite system with conjugate gradients,
    starting from `x0`, until |M x - r| / max(|r|, eps) <= tol.

    The solver iterates on the correction d in M d = r - M x0 from d = 0,
    so a right-hand side that is negligible next to M x0 keeps the warm
    start. Residuals at the rounding level of M x0 count as converged.
    """

    if x0 is None:
        x0 = numpy.zeros(matrix.shape[0])

    scale = max(_norm(vector), MACHINE_EPSILON)
    rounding = MACHINE_EPSILON * _norm(abs(matrix) @ numpy.abs(x0))
    threshold = max(tol * scale, rounding)
    remainder = vector - matrix @ x0
    initial = _norm(remainder)
    if initial <= threshold:
        return CG_Result(x0.copy(), 0, True, initial / scale)

    preconditioner = None
    if jacobi:
        diagonal = matrix.diagonal()
        inverse = numpy.ones_like(diagonal)
        numpy.divide(1.0, diagonal, out=inverse, where=diagonal > 0)
        preconditioner = sparse.diags(inverse)

    count = [0]
    def callback(_: numpy.ndarray) -> None:
        count[0] += 1

    correction, info = cg(matrix, remainder, x0=numpy.zeros_like(x0), rtol=0.0,
                          atol=threshold, maxiter=max_iters, M=preconditioner,
                          callback=callback)
    solution = x0 + correction
    residual = _norm(matrix @ solution - vector) / scale
    return CG_Result(solution, count[0], info == 0, residual)

def integrate(normals: numpy.ndarray, mask: numpy.ndarray,
              camera: Camera_Model, config: Optional[Solver_Config] = None,
              alpha_init: Optional[Alpha_Input] = None,
              rays: Optional[numpy.ndarray] = None) -> Integration_Result:
    """
    Integrate a normal map into a depth map.

    Each outer iteration computes bilateral weights from the residuals of
    the previous log depth, activations from the previous weights (zero in
    the first iteration), solves the weighted least squares problem with a
    warm-started conjugate gradient method and then updates the relative
    discontinuities if enabled. `alpha_init` gives initial relative
    discontinuities, either per pair of the built graph or as one image per
    neighbor direction, for example ground truth values together with
    disabled updates and `beta_override` of 1.
    """

    if config is None:
        config = Solver_Config()

    mask = numpy.asarray(mask, dtype=bool)
    if not numpy.any(mask):
        raise EmptyMask('Mask selects no pixels to integrate')

    height, width = mask.shape
    if rays is None:
        rays = camera.build_ray_map(width, height)

    graph = build_graph(mask, normals, rays, config.lambda_mode,
                        config.gamma_mode, config.connectivity)
    state = Solver_State.initial(graph)
    diagnostics = Diagnostics(graph)
    ours = config.method is Method.OURS

    if alpha_init is not None:
        if isinstance(alpha_init, dict):
            alpha_init = graph.pairs_from_maps(alpha_init)
        if alpha_init.shape != (graph.pair_count,):
            raise ValueError(f'Initial discontinuities must have shape '
                             f'({graph.pair_count},), not {alpha_init.shape}')
        if ours:
            state.alpha = numpy.where(graph.eligible, alpha_init, 0.0)

    sizes = numpy.bincount(graph.components)
    if numpy.any(sizes == 1):
        diagnostics.note(f'{int(numpy.count_nonzero(sizes == 1))} single-pixel '
                         'components keep unit depth')
    if graph.component_count > 1:
        diagnostics.note(f'{graph.component_count} connected components each '
                         'have an undetermined depth scale')

    previous_w: Optional[numpy.ndarray] = None
    for t in range(1, config.max_outer_iters + 1):
        state.t = t
        state.w = bilateral_weights(state, graph, config.k)
        if config.beta_override is not None:
            state.beta = numpy.full(graph.pair_count, config.beta_override)
        elif previous_w is None:
            state.beta = numpy.zeros(graph.pair_count)
        else:
            state.beta = numpy.asarray(beta_activation(previous_w, config.beta))
        previous_w = state.w

        targets = pair_targets(graph, state, config)
        matrix, vector = assemble_normal_equations(graph, state, config, targets)
        result = cg_solve(matrix, vector, state.z_tilde, config.cg_tol,
                          config.cg_max_iters, config.jacobi)
        if not result.converged:
            diagnostics.stagnations += 1
            logging.warning('Conjugate gradient stagnated at relative residual '
                            '%.3g in iteration %d', result.residual, t)
        state.z_tilde = result.solution

        energy = objective(graph, state, targets)
        previous_energy = state.energy
        state.energy = energy
        diagnostics.energies.append(energy)
        diagnostics.cg_iterations.append(result.iterations)
        if config.log_interval > 0 and t % config.log_interval == 0:
            logging.info('Iteration %d: energy %.9g after %d CG iterations',
                         t, energy, result.iterations)

        if ours and config.alpha_enabled:
            state.alpha = alpha_update(state, graph)

        if config.early_stop_rel_energy is not None and t > 1 and \
            abs(energy - previous_energy) <= \
                config.early_stop_rel_energy * max(previous_energy, MACHINE_EPSILON):
            diagnostics.stop_reason = 'energy'
            logging.info('Stopping after iteration %d: relative energy change '
                         'below %g', t, config.early_stop_rel_energy)
            break

    if diagnostics.stagnations > 0:
        diagnostics.note(f'Conjugate gradient stagnated in '
                         f'{diagnostics.stagnations} iterations')

    return Integration_Result(graph, rays, state, diagnostics)

def gauge_align(depth_est: numpy.ndarray, depth_ref: numpy.ndarray,
                mask: numpy.ndarray, mode: str = 'median',
                domain: str = 'linear',
                labels: Optional[numpy.ndarray] = None) -> numpy.ndarray:
    """
    Align an estimated depth map to a reference per connected component of
    the mask by the median or mean difference in linear or log depth.

    Log-domain alignment scales the estimate, linear alignment offsets it.
    Pixels outside the mask are returned unchanged. Components are those of
    4-connected mask pixels unless `labels` provides them (with negative
    labels outside the mask).
    """

    if mode not in ('median', 'mean'):
        raise ValueError(f"Unknown alignment mode '{mode}'")
    if domain not in ('log', 'linear'):
        raise ValueError(f"Unknown alignment domain '{domain}'")

    mask = numpy.asarray(mask, dtype=bool)
    if not numpy.any(mask):
        raise EmptyMask('Alignment needs a nonempty mask')

    if labels is None:
        labels, _ = ndimage.label(mask)
        labels = numpy.where(mask, labels, -1)

    reduce = numpy.median if mode == 'median' else numpy.mean
    aligned = numpy.array(depth_est, dtype=numpy.float64)
    for label in numpy.unique(labels[mask]):
        selected = mask & (labels == label)
        if domain == 'log':
            shift = reduce(numpy.log(depth_ref[selected]) -
                           numpy.log(depth_est[selected]))
            aligned[selected] = depth_est[selected] * numpy.exp(shift)
        else:
            shift = reduce(depth_ref[selected] - depth_est[selected])
            aligned[selected] = depth_est[selected] + shift

    return aligned
