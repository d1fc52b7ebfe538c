"""
Command line interface for rendering, integrating and evaluating scenes.

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

from argparse import ArgumentParser, ArgumentTypeError, Namespace
from concurrent.futures import ThreadPoolExecutor
import configparser
import json
import logging
from pathlib import Path
import shutil
import sys
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, \
    Tuple
import numpy
from .camera import Camera_Model, Tabulated_Rays, load_camera
from .config import Configuration
from .files import read_depth_map, read_mask, read_normal_map, \
    read_pair_maps, write_depth_map, write_mask, write_normal_map, \
    write_pair_maps, write_pfm, write_points
from .formulation import Beta_Params, Constant_Lambda, Gamma_Mode, Lambda_Mode
from .graph import Connectivity, build_graph
from .log import Log_Setup
from .metrics import evaluate, formulation_residuals, made, \
    relative_errors, residual_report, write_report
from .noise import Noise_Spec, corrupt, filter_normals
from .solver import Method, Solver_Config, integrate
from .synth import ground_truth_alpha, load_scene, render
from .table import Row, Table

Ablation_Input = NamedTuple('Ablation_Input', [('normals', numpy.ndarray),
                                               ('mask', numpy.ndarray),
                                               ('camera', Camera_Model),
                                               ('rays', numpy.ndarray),
                                               ('depth_gt', numpy.ndarray)])

ABLATION_FIELDS = (
    'suite', 'point', 'method', 'connectivity', 'lambda_m', 'gamma_mode',
    'k', 'q', 'rho', 'alpha', 'iters', 'iterations', 'stop_reason', 'made',
    're_percent', 'era_percent'
)

def _size(text: str) -> Tuple[int, int]:
    width, separator, height = text.lower().partition('x')
    try:
        size = (int(width), int(height))
    except ValueError as error:
        raise ArgumentTypeError(f'size must be WxH, not {text!r}') from error
    if not separator or size[0] <= 0 or size[1] <= 0:
        raise ArgumentTypeError(f'size must be a positive WxH, not {text!r}')

    return size

def _parsed(parse: Callable[[str], object], name: str) -> Callable[[str], object]:
    def parser(text: str) -> object:
        try:
            return parse(text)
        except ValueError as error:
            raise ArgumentTypeError(f'invalid {name}: {error}') from error

    return parser

def _gamma_suite(base: Solver_Config) -> List[Solver_Config]:
    modes = ('full', 'no_f', 'const_f:3000', 'const_f:2000', 'const_f:1000',
             'no_ndott')
    return [
        base.replace(gamma_mode=Gamma_Mode.parse(mode), alpha_enabled=False)
        for mode in modes
    ]

def _lambda_suite(base: Solver_Config) -> List[Solver_Config]:
    modes = ['const:0.5'] + [
        f'{name}:{sharpness}' for name in ('ntau', 'nz', 'prod')
        for sharpness in (1, 2, 3)
    ]
    return [
        base.replace(lambda_mode=Lambda_Mode.parse(mode), alpha_enabled=False)
        for mode in modes
    ]

def _beta_suite(base: Solver_Config) -> List[Solver_Config]:
    return [
        base.replace(beta=Beta_Params(q, rho), alpha_enabled=True)
        for rho in (0.25, 0.5)
        for q in (2.5, 5, 10, 15, 25, 40, 50, 100, 1000)
    ]

def _connectivity_suite(base: Solver_Config) -> List[Solver_Config]:
    return [
        base.replace(connectivity=connectivity, alpha_enabled=alpha)
        for connectivity in Connectivity
        for alpha in (False, True)
    ]

ABLATION_SUITES: Dict[str, Callable[[Solver_Config], List[Solver_Config]]] = {
    'gamma': _gamma_suite,
    'lambda': _lambda_suite,
    'beta': _beta_suite,
    'connectivity': _connectivity_suite
}

def _add_solver_arguments(parser: ArgumentParser, defaults: Solver_Config) -> None:
    parser.add_argument('--iters', type=int, default=defaults.max_outer_iters,
                        help=f'outer iterations (default {defaults.max_outer_iters})')
    parser.add_argument('--no-alpha', dest='alpha', action='store_false',
                        default=defaults.alpha_enabled,
                        help='disable discontinuity estimation')
    parser.add_argument('--method', choices=[method.value for method in Method],
                        default=defaults.method.value,
                        help=f'right-hand side of the pair equations (default {defaults.method.value})')
    parser.add_argument('--connectivity',
                        choices=[value.value for value in Connectivity],
                        default=defaults.connectivity.value,
                        help=f'pixel neighborhood (default {defaults.connectivity.value})')
    parser.add_argument('--lambda-m', dest='lambda_m',
                        type=_parsed(Lambda_Mode.parse, 'lambda mode'),
                        default=defaults.lambda_mode,
                        help='intermediate ray: const:L, ntau:K, nz:K or prod:K '
                             f'(default {defaults.lambda_mode})')
    parser.add_argument('--gamma-mode', dest='gamma_mode',
                        type=_parsed(Gamma_Mode.parse, 'gamma mode'),
                        default=defaults.gamma_mode,
                        help='equation scale: full, no_f, const_f:V or no_ndott '
                             f'(default {defaults.gamma_mode})')
    parser.add_argument('--k', type=float, default=defaults.k,
                        help=f'bilateral weight sharpness (default {defaults.k:g})')
    parser.add_argument('--q', type=float, default=defaults.beta.q,
                        help=f'activation sharpness (default {defaults.beta.q:g})')
    parser.add_argument('--rho', type=float, default=defaults.beta.rho,
                        help=f'activation midpoint (default {defaults.beta.rho:g})')
    parser.add_argument('--cg-tol', dest='cg_tol', type=float,
                        default=defaults.cg_tol,
                        help=f'relative CG residual (default {defaults.cg_tol:g})')
    parser.add_argument('--cg-max-iters', dest='cg_max_iters', type=int,
                        default=defaults.cg_max_iters,
                        help=f'CG iterations per outer iteration (default {defaults.cg_max_iters})')
    early_stop = defaults.early_stop_rel_energy
    parser.add_argument('--early-stop', dest='early_stop', type=float,
                        default=0.0 if early_stop is None else early_stop,
                        help='relative energy change that stops the iterations, '
                             f'0 disables (default {early_stop or 0:g})')
    parser.add_argument('--jacobi', action='store_true', default=defaults.jacobi,
                        help='use a Jacobi preconditioner for CG')

def _solver_config(args: Namespace, defaults: Solver_Config) -> Solver_Config:
    return defaults.replace(
        max_outer_iters=args.iters, alpha_enabled=args.alpha,
        method=Method(args.method), connectivity=Connectivity(args.connectivity),
        lambda_mode=args.lambda_m, gamma_mode=args.gamma_mode, k=args.k,
        beta=Beta_Params(args.q, args.rho), cg_tol=args.cg_tol,
        cg_max_iters=args.cg_max_iters,
        early_stop_rel_energy=args.early_stop if args.early_stop > 0 else None,
        jacobi=args.jacobi
    )

def _read_input(normals_path: str, mask_path: Optional[str]) \
        -> Tuple[numpy.ndarray, numpy.ndarray]:
    normal_map = read_normal_map(normals_path)
    mask = normal_map.mask
    if mask_path is not None:
        file_mask = read_mask(mask_path)
        if file_mask.shape != mask.shape:
            raise ValueError(f'Mask {mask_path} has shape {file_mask.shape}, '
                             f'normal map has {mask.shape}')
        mask = mask & file_mask

    return normal_map.normals, mask

def _write_camera(camera_path: str, camera: Camera_Model, output: Path) -> None:
    target = output / 'camera.cfg'
    if isinstance(camera, Tabulated_Rays):
        width, height = camera.size
        write_pfm(output / 'rays.pfm', camera.build_ray_map(width, height))
        target.write_text('model = tabulated\nray_file = rays.pfm\n',
                          encoding='utf-8')
    else:
        shutil.copyfile(camera_path, target)

def synth_command(args: Namespace) -> None:
    """
    Render a scene to a normal map, ground truth depth, mask and ground
    truth relative discontinuities.
    """

    scene = load_scene(args.scene)
    camera = load_camera(args.camera)
    width, height = args.size
    rendering = render(scene, camera, width, height)

    output = Path(args.out)
    output.mkdir(parents=True, exist_ok=True)
    write_normal_map(output / 'normals.pfm', rendering.normals, rendering.mask)
    write_depth_map(output / 'depth_gt.pfm', rendering.depth, rendering.mask)
    write_mask(output / 'mask.pgm', rendering.mask)

    graph = build_graph(rendering.mask, rendering.normals,
                        camera.build_ray_map(width, height),
                        Constant_Lambda(0.5), connectivity=Connectivity.EIGHT)
    alpha = ground_truth_alpha(rendering.depth, graph)
    write_pair_maps(output, 'alpha_gt', graph.pair_maps(alpha))
    _write_camera(args.camera, camera, output)
    logging.info('Rendered %r with %d pixels to %s', scene,
                 int(numpy.count_nonzero(rendering.mask)), output)

def integrate_command(args: Namespace) -> None:
    """
    Integrate a normal map and write the depth map with its by-products.
    """

    normals, mask = _read_input(args.normals, args.mask)
    camera = load_camera(args.camera)
    config: Solver_Config = args.config

    alpha_init: Optional[Dict[str, numpy.ndarray]] = None
    if args.alpha_gt is not None:
        alpha_init = read_pair_maps(args.alpha_gt, 'alpha_gt',
                                    config.connectivity.directions)
        config = config.replace(alpha_enabled=False, beta_override=1.0)

    result = integrate(normals, mask, camera, config, alpha_init=alpha_init)

    output = Path(args.out)
    output.mkdir(parents=True, exist_ok=True)
    write_depth_map(output / 'depth.pfm', result.depth, result.mask)
    write_pfm(output / 'epsilon_max.pfm', result.epsilon_max)
    write_pair_maps(output, 'epsilon', result.epsilon_maps())
    write_pair_maps(output, 'weights', result.weight_maps())
    if args.xyz:
        write_points(output / 'points.xyz', result.points())

    diagnostics = result.diagnostics.as_dict()
    diagnostics['config'] = config.as_row()
    with (output / 'diagnostics.json').open('w', encoding='utf-8') as outfile:
        json.dump(diagnostics, outfile, indent=4)
        outfile.write('\n')

    logging.info('Integrated %d pixels in %d iterations to %s',
                 result.graph.pixel_count, result.diagnostics.iterations, output)

def eval_command(args: Namespace) -> None:
    """
    Compare an estimated depth map with ground truth.
    """

    estimate = read_depth_map(args.est)
    truth = read_depth_map(args.gt)
    mask = read_mask(args.mask)
    align = None if args.align == 'none' else args.align
    write_report(args.report, evaluate(estimate, truth, mask, align, args.domain))

def residuals_command(args: Namespace) -> None:
    """
    Evaluate the pair equations of a method at ground truth depth.
    """

    normals, mask = _read_input(args.normals, args.mask)
    depth = read_depth_map(args.depth_gt)
    camera = load_camera(args.camera)
    method = Method(args.method)
    config = args.defaults.replace(lambda_mode=args.lambda_m,
                                   gamma_mode=args.gamma_mode,
                                   connectivity=Connectivity(args.connectivity))
    height, width = mask.shape
    graph = build_graph(mask & (depth > 0), normals,
                        camera.build_ray_map(width, height), config.lambda_mode,
                        config.gamma_mode, config.connectivity)
    stats = formulation_residuals(normals, depth, camera, graph, method,
                                  args.variant, config)
    if stats.excluded > 0:
        logging.warning('Excluded %d pairs with vanishing log depth', stats.excluded)
    write_report(args.report, residual_report(stats, method, args.variant))

def noise_command(args: Namespace) -> None:
    """
    Corrupt a normal map and optionally filter the result.
    """

    normals, mask = _read_input(args.normals, args.mask)
    spec = Noise_Spec.parse(args.mode, args.seed)
    corrupted = corrupt(normals, mask, spec)
    if args.filter:
        height, width = mask.shape
        rays = load_camera(args.camera).build_ray_map(width, height)
        result = filter_normals(corrupted, rays, mask)
        corrupted = result.normals

    write_normal_map(args.out, corrupted, mask)

def _ablation_point(suite: str, point: int, config: Solver_Config,
                    data: Ablation_Input) -> Row:
    result = integrate(data.normals, data.mask, data.camera, config,
                       rays=data.rays)
    mask = result.mask & (data.depth_gt > 0)
    relative, average = relative_errors(result.depth, data.depth_gt, mask)
    row = config.as_row()
    row.update({
        'suite': suite,
        'point': str(point),
        'iterations': str(result.diagnostics.iterations),
        'stop_reason': result.diagnostics.stop_reason,
        'made': repr(made(result.depth, data.depth_gt, mask)),
        're_percent': repr(relative),
        'era_percent': repr(average)
    })
    logging.info('Ablation %s point %d done', suite, point)
    return row

def ablate_command(args: Namespace) -> None:
    """
    Run an ablation grid on a rendered scene directory.
    """

    base = Path(args.base)
    normals, mask = _read_input(str(base / 'normals.pfm'), str(base / 'mask.pgm'))
    camera = load_camera(base / 'camera.cfg')
    depth_gt = read_depth_map(base / 'depth_gt.pfm')
    height, width = mask.shape
    data = Ablation_Input(normals, mask, camera,
                          camera.build_ray_map(width, height), depth_gt)

    configs = ABLATION_SUITES[args.suite](args.config)
    table = Table('ablation', ABLATION_FIELDS)
    with ThreadPoolExecutor(max_workers=Configuration.get_threads()) as executor:
        rows = executor.map(_ablation_point, [args.suite] * len(configs),
                            range(len(configs)), configs, [data] * len(configs))
        table.extend(list(rows))

    table.write(args.report)

def parse_args(argv: Optional[Sequence[str]] = None) -> Namespace:
    """
    Parse command line arguments.
    """

    description = 'Discontinuity-aware integration of normal maps'
    parser = ArgumentParser(prog='nint', description=description)
    try:
        defaults = Solver_Config.from_settings()
    except (ValueError, configparser.Error) as error:
        parser.exit(1, f'{parser.prog}: error: invalid settings: {error}\n')

    subparsers = parser.add_subparsers(dest='command', required=True)

    synth = subparsers.add_parser('synth', help='render an analytic scene')
    synth.add_argument('--scene', required=True, help='scene configuration file')
    synth.add_argument('--camera', required=True, help='camera configuration file')
    synth.add_argument('--size', type=_size, required=True, help='image size WxH')
    synth.add_argument('--out', required=True, help='output directory')
    synth.set_defaults(func=synth_command)

    integration = subparsers.add_parser('integrate', help='integrate a normal map')
    integration.add_argument('--normals', required=True, help='normal map PFM file')
    integration.add_argument('--mask', default=None,
                             help='mask PGM file (default: nonzero normals)')
    integration.add_argument('--camera', required=True,
                             help='camera configuration file')
    integration.add_argument('--out', required=True, help='output directory')
    integration.add_argument('--alpha-gt', dest='alpha_gt', default=None,
                             help='directory with ground truth alpha_gt maps '
                                  'to use as known discontinuities')
    integration.add_argument('--xyz', action='store_true',
                             help='also write the point cloud points.xyz')
    _add_solver_arguments(integration, defaults)
    integration.set_defaults(func=integrate_command)

    evaluation = subparsers.add_parser('eval', help='evaluate a depth map')
    evaluation.add_argument('--est', required=True, help='estimated depth PFM file')
    evaluation.add_argument('--gt', required=True, help='ground truth depth PFM file')
    evaluation.add_argument('--mask', required=True, help='mask PGM file')
    evaluation.add_argument('--align', choices=('median', 'mean', 'none'),
                            default='median',
                            help='gauge alignment (default median)')
    evaluation.add_argument('--domain', choices=('linear', 'log'),
                            default='linear',
                            help='alignment domain (default linear)')
    evaluation.add_argument('--report', required=True,
                            help='report file (.csv or .json)')
    evaluation.set_defaults(func=eval_command)

    residuals = subparsers.add_parser('residuals',
                                      help='evaluate pair equations at ground truth')
    residuals.add_argument('--normals', required=True, help='normal map PFM file')
    residuals.add_argument('--mask', default=None,
                           help='mask PGM file (default: nonzero normals)')
    residuals.add_argument('--depth-gt', dest='depth_gt', required=True,
                           help='ground truth depth PFM file')
    residuals.add_argument('--camera', required=True,
                           help='camera configuration file')
    residuals.add_argument('--method', choices=[method.value for method in Method],
                           default=Method.OURS.value,
                           help='right-hand side of the pair equations (default ours)')
    residuals.add_argument('--variant', choices=('abs', 'rel-log', 'rel-depth'),
                           default='abs', help='residual variant (default abs)')
    residuals.add_argument('--connectivity',
                           choices=[value.value for value in Connectivity],
                           default=defaults.connectivity.value,
                           help=f'pixel neighborhood (default {defaults.connectivity.value})')
    residuals.add_argument('--lambda-m', dest='lambda_m',
                           type=_parsed(Lambda_Mode.parse, 'lambda mode'),
                           default=defaults.lambda_mode,
                           help=f'intermediate ray (default {defaults.lambda_mode})')
    residuals.add_argument('--gamma-mode', dest='gamma_mode',
                           type=_parsed(Gamma_Mode.parse, 'gamma mode'),
                           default=defaults.gamma_mode,
                           help=f'equation scale (default {defaults.gamma_mode})')
    residuals.add_argument('--report', required=True,
                           help='report file (.csv or .json)')
    residuals.set_defaults(func=residuals_command)

    noise = subparsers.add_parser('noise', help='corrupt a normal map')
    noise.add_argument('--normals', required=True, help='normal map PFM file')
    noise.add_argument('--mask', default=None,
                       help='mask PGM file (default: nonzero normals)')
    noise.add_argument('--mode', required=True,
                       help='corruption: outliers:FRACTION or rot:SIGMA_DEGREES')
    noise.add_argument('--seed', type=int, default=0,
                       help='unsigned 64-bit random seed (default 0)')
    noise.add_argument('--filter', action='store_true',
                       help='apply the mitigation filter after corruption')
    noise.add_argument('--camera', default=None,
                       help='camera configuration file, needed for --filter')
    noise.add_argument('--out', required=True, help='output normal map PFM file')
    noise.set_defaults(func=noise_command)

    ablate = subparsers.add_parser('ablate', help='run an ablation grid')
    ablate.add_argument('--suite', choices=tuple(ABLATION_SUITES), required=True,
                        help='grid to run')
    ablate.add_argument('--base', required=True,
                        help='scene directory written by the synth command')
    ablate.add_argument('--iters', type=int, default=defaults.max_outer_iters,
                        help=f'outer iterations (default {defaults.max_outer_iters})')
    ablate.add_argument('--report', required=True,
                        help='report file (.csv or .json)')
    ablate.set_defaults(func=ablate_command)

    for subparser in (synth, integration, evaluation, residuals, noise, ablate):
        Log_Setup.add_argument(subparser)

    args = parser.parse_args(argv)
    if args.command == 'noise' and args.filter and args.camera is None:
        noise.error('--filter requires --camera')
    if args.command == 'noise':
        try:
            Noise_Spec.parse(args.mode, args.seed)
        except ValueError as error:
            noise.error(str(error))
    if args.command == 'integrate':
        try:
            args.config = _solver_config(args, defaults)
        except ValueError as error:
            integration.error(str(error))
    if args.command == 'ablate':
        try:
            args.config = defaults.replace(max_outer_iters=args.iters)
        except ValueError as error:
            ablate.error(str(error))

    args.defaults = defaults
    Log_Setup.parse_args(args)
    return args

def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run a subcommand and return its exit code: 0 on success, 1 if the
    computation failed and 2 if the arguments are invalid.
    """

    try:
        args = parse_args(argv)
    except SystemExit as exit_status:
        if isinstance(exit_status.code, int):
            return exit_status.code
        return 0 if exit_status.code is None else 2

    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as error:
        logging.error('%s failed: %s', args.command, error)
        return 1

    return 0

def main() -> None:
    """
    Main entry point.
    """

    sys.exit(run())

if __name__ == "__main__":
    main()
