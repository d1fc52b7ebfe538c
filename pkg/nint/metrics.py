"""
Evaluation of integrated depth maps and of formulation residuals.

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

import math
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple
import numpy
from .camera import Camera_Model
from .config import PathLike
from .files import IoFailure
from .graph import Pair_Graph, build_graph
from .solver import EmptyMask, Method, Solver_Config, Solver_State, \
    gauge_align, pair_targets
from .table import Key_Table

# Pairs with a smaller |log z_a| are left out of relative log residuals.
LOG_DEPTH_GUARD = 1e-12

VARIANTS = ('abs', 'rel_log', 'rel_depth')

Metric = NamedTuple('Metric', [('name', str), ('value', float),
                               ('alignment', str), ('pixels', int)])

Residual_Stats = NamedTuple('Residual_Stats', [('mean', float), ('std', float),
                                               ('pairs', int),
                                               ('excluded', int)])

def alignment_name(align: Optional[str], domain: str = 'linear') -> str:
    """
    Describe a gauge alignment for reports.
    """

    if align is None or align == 'none':
        return 'none'

    return f'{align}/{domain}'

def _prepare(est: numpy.ndarray, gt: numpy.ndarray, mask: numpy.ndarray,
             align: Optional[str], domain: str) -> Tuple[numpy.ndarray, numpy.ndarray]:
    mask = numpy.asarray(mask, dtype=bool)
    if est.shape != gt.shape or gt.shape != mask.shape:
        raise ValueError(f'Depth maps {est.shape} and {gt.shape} and mask '
                         f'{mask.shape} must have the same shape')
    if not numpy.any(mask):
        raise EmptyMask('Evaluation needs a nonempty mask')

    if align is not None and align != 'none':
        est = gauge_align(est, gt, mask, mode=align, domain=domain)

    return numpy.asarray(est, dtype=numpy.float64)[mask], \
        numpy.asarray(gt, dtype=numpy.float64)[mask]

def made(est: numpy.ndarray, gt: numpy.ndarray, mask: numpy.ndarray,
         align: Optional[str] = 'median', domain: str = 'linear') -> float:
    """
    Compute the mean absolute depth error over the masked pixels after
    aligning the estimate to the ground truth.

    `align` is `median`, `mean` or `None` for no alignment.
    """

    estimate, truth = _prepare(est, gt, mask, align, domain)
    return float(numpy.mean(numpy.abs(estimate - truth)))

def relative_errors(est: numpy.ndarray, gt: numpy.ndarray, mask: numpy.ndarray,
                    align: Optional[str] = 'median',
                    domain: str = 'linear') -> Tuple[float, float]:
    """
    Compute the mean relative depth error and the mean absolute depth error
    relative to the mean ground truth depth, both in percent.
    """

    estimate, truth = _prepare(est, gt, mask, align, domain)
    if not numpy.all(truth > 0):
        raise ValueError('Ground truth depth must be positive on the mask')

    error = numpy.abs(estimate - truth)
    relative = 100.0 * float(numpy.mean(error / truth))
    average = 100.0 * float(numpy.mean(error)) / float(numpy.mean(truth))
    return relative, average

def formulation_residuals(normals: numpy.ndarray, depth_gt: numpy.ndarray,
                          camera: Optional[Camera_Model] = None,
                          graph: Optional[Pair_Graph] = None,
                          method: Method = Method.OURS,
                          variant: str = 'abs',
                          config: Optional[Solver_Config] = None) -> Residual_Stats:
    """
    Evaluate how well the pair equations of a method hold at ground truth
    depth, with all discontinuity terms set to zero.

    The graph is built from the normals, the camera and the pixels with
    positive ground truth depth unless it is given. The variants are the
    absolute residual `abs`, the residual relative to the log depth
    `rel_log` (pairs with vanishing log depth are left out and counted) and
    the relative depth prediction error `rel_depth`.
    """

    variant = variant.replace('-', '_')
    if variant not in VARIANTS:
        raise ValueError(f"Unknown residual variant '{variant}'")
    if config is None:
        config = Solver_Config()
    config = config.replace(method=method)

    depth_gt = numpy.asarray(depth_gt, dtype=numpy.float64)
    if graph is None:
        if camera is None:
            raise ValueError('Residuals need a camera or a pair graph')
        height, width = depth_gt.shape
        mask = (depth_gt > 0) & numpy.any(normals != 0, axis=-1)
        graph = build_graph(mask, normals, camera.build_ray_map(width, height),
                            config.lambda_mode, config.gamma_mode,
                            config.connectivity)

    depth = depth_gt.ravel()[graph.pixels]
    if not numpy.all(depth > 0):
        raise ValueError('Ground truth depth must be positive on the mask')

    log_depth = numpy.log(depth)
    targets = pair_targets(graph, Solver_State.initial(graph), config)
    gamma = graph.coeffs.gamma
    log_a = log_depth[graph.a]
    difference = log_a - log_depth[graph.b]

    excluded = 0
    if variant == 'abs':
        values = numpy.abs(gamma * difference - targets)
    elif variant == 'rel_log':
        kept = numpy.abs(log_a) >= LOG_DEPTH_GUARD
        excluded = int(graph.pair_count - numpy.count_nonzero(kept))
        values = numpy.abs((difference - targets / gamma)[kept] / log_a[kept])
    else:
        depth_a = depth[graph.a]
        values = numpy.abs((depth_a - numpy.exp(targets / gamma) * depth[graph.b]) /
                           depth_a)

    if len(values) == 0:
        return Residual_Stats(0.0, 0.0, 0, excluded)

    return Residual_Stats(float(numpy.mean(values)), float(numpy.std(values)),
                          len(values), excluded)

class Metrics_Report:
    """
    Ordered collection of named evaluation values, each with the alignment
    used to obtain it and the number of pixels or pairs it covers.
    """

    FIELDS = ('metric', 'value', 'alignment', 'pixels')

    def __init__(self) -> None:
        self._metrics: Dict[str, Metric] = {}

    def add(self, name: str, value: float, alignment: str = 'none',
            pixels: int = 0) -> None:
        """
        Add or replace a metric. Values must be finite and not negative.
        """

        if not math.isfinite(value) or value < 0:
            raise ValueError(f'Metric {name} must be finite and not negative, not {value!r}')

        self._metrics[name] = Metric(name, float(value), alignment, int(pixels))

    @property
    def metrics(self) -> List[Metric]:
        """
        Retrieve the metrics in the order in which they were added.
        """

        return list(self._metrics.values())

    def get(self, name: str) -> Metric:
        """
        Retrieve a metric by its name.
        """

        return self._metrics[name]

    def __getitem__(self, name: str) -> float:
        return self._metrics[name].value

    def __contains__(self, name: object) -> bool:
        return name in self._metrics

    def __iter__(self) -> Iterator[Metric]:
        return iter(self._metrics.values())

    def __len__(self) -> int:
        return len(self._metrics)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Metrics_Report) and self.metrics == other.metrics

    def __repr__(self) -> str:
        return f'Metrics_Report({self.metrics!r})'

    def to_table(self) -> Key_Table:
        """
        Convert the report to a table with one row per metric. Values are
        written with the shortest representation that reads back exactly.
        """

        table = Key_Table('report', 'metric', self.FIELDS)
        for metric in self._metrics.values():
            table.append({
                'metric': metric.name,
                'value': repr(metric.value),
                'alignment': metric.alignment,
                'pixels': str(metric.pixels)
            })

        return table

    @classmethod
    def from_table(cls, table: Key_Table) -> 'Metrics_Report':
        """
        Rebuild a report from its table form.
        """

        report = cls()
        for row in table:
            try:
                report.add(row['metric'], float(row['value']),
                           row.get('alignment', 'none'), int(row.get('pixels', '0')))
            except KeyError as error:
                raise ValueError(f'Report row lacks column {error}') from error

        return report

def evaluate(est: numpy.ndarray, gt: numpy.ndarray, mask: numpy.ndarray,
             align: Optional[str] = 'median',
             domain: str = 'linear') -> Metrics_Report:
    """
    Compute the depth error metrics of an estimate as a report.
    """

    alignment = alignment_name(align, domain)
    pixels = int(numpy.count_nonzero(mask))
    relative, average = relative_errors(est, gt, mask, align, domain)

    report = Metrics_Report()
    report.add('made', made(est, gt, mask, align, domain), alignment, pixels)
    report.add('re_percent', relative, alignment, pixels)
    report.add('era_percent', average, alignment, pixels)
    return report

def residual_report(stats: Residual_Stats, method: Method,
                    variant: str) -> Metrics_Report:
    """
    Convert residual statistics of a method and variant to a report.
    """

    prefix = f'{method.value}_{variant.replace("-", "_")}'
    report = Metrics_Report()
    report.add(f'{prefix}_mean', stats.mean, 'none', stats.pairs)
    report.add(f'{prefix}_std', stats.std, 'none', stats.pairs)
    report.add(f'{prefix}_excluded', stats.excluded, 'none', stats.pairs)
    return report

def write_report(path: PathLike, report: Metrics_Report) -> Path:
    """
    Write a report as CSV, or as JSON for a `.json` suffix.
    """

    try:
        return report.to_table().write(path)
    except OSError as error:
        raise IoFailure(f'Cannot write report {path}: {error}') from error

def read_report(path: PathLike) -> Metrics_Report:
    """
    Read a report that was written by `write_report`.
    """

    if not Path(path).is_file():
        raise IoFailure(f'Report {path} does not exist')

    table = Key_Table('report', 'metric', Metrics_Report.FIELDS)
    try:
        table.load(path)
    except OSError as error:
        raise IoFailure(f'Cannot read report {path}: {error}') from error

    return Metrics_Report.from_table(table)
