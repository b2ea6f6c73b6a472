"""
Validation controller for Py-TeFS.

Captures the same scenario with a single-viewport method and with the
dual-viewport oracle, runs the odometry baseline on both datasets, evaluates
them against ground truth and compares the results side by side. Also
aggregates report tables from several runs into one table.
"""

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from py_tefs.controllers.capture_controller import analytic_offsets, run_session
from py_tefs.models.analysis_model import (ALIGN_RIGID, REPORT_FIELDS, MetricReport, evaluate, format_reports,
                                           read_reports_csv, write_reports_csv)
from py_tefs.models.odometry_model import run_vo, write_vo_result
from py_tefs.models.render_model import ConditionProfile, get_condition
from py_tefs.models.sample_model import DUAL_VIEWPORT, NAIVE_SWAP, TEFS
from py_tefs.models.settings_model import SettingsModel
from py_tefs.utils.dataset_manager import (POSES_FILE, POSES_RIGHT_FILE, read_calibration, read_poses,
                                           read_trajectory)
from py_tefs.utils.errors import ConfigurationError
from py_tefs.utils.geometry_utils import PoseSE3, translation_offset

logger = logging.getLogger('py-tefs.validation')

APE_PCT_DELTA_LIMIT = 0.2
NAIVE_DEGRADATION_FACTOR = 10.0
STATIONARY_CYCLES = 60
COMPARED_STATISTICS = ('mean', 'median', 'rmse', 'max')
SUMMARY_COLUMNS = (('APE_m', 'mean'), ('APE_m', 'max'), ('APE_pct', 'mean'), ('APE_pct', 'max'),
                   ('RPE_trans', 'mean'), ('RPE_rot', 'mean'))


@dataclass
class MethodRun:
    """Outcome of capture, odometry and evaluation for one method."""

    method: str
    directory: str
    frame_count: int
    trajectory_length_m: float
    reports: List[MetricReport]
    holes: List[int]
    measured_offset_mean_m: float
    measured_offset_max_m: float

    def report(self, metric: str) -> Optional[MetricReport]:
        for report in self.reports:
            if report.metric == metric:
                return report
        return None


@dataclass
class ValidationResult:
    """Side-by-side comparison of a capture method with the dual-viewport oracle."""

    scenario: str
    runs: Dict[str, MethodRun]
    deltas: Dict[str, float]
    offsets: Dict[str, float]
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> Dict:
        return {
            'scenario': self.scenario,
            'passed': self.passed,
            'failures': list(self.failures),
            'deltas': dict(self.deltas),
            'offsets': dict(self.offsets),
            'runs': {
                method: {
                    'directory': run.directory,
                    'frame_count': run.frame_count,
                    'trajectory_length_m': run.trajectory_length_m,
                    'holes': list(run.holes),
                    'measured_offset_mean_m': run.measured_offset_mean_m,
                    'measured_offset_max_m': run.measured_offset_max_m,
                } for method, run in self.runs.items()
            },
        }


def measured_offsets(directory: str) -> np.ndarray:
    """Per-pair distance between the right camera and where a rigid rig would put it.

    The expected right-camera center is the left center moved by the baseline
    along the left camera's x axis.
    """
    calib = read_calibration(directory)
    left = read_poses(os.path.join(directory, POSES_FILE))
    right = read_poses(os.path.join(directory, POSES_RIGHT_FILE))
    if not left:
        return np.zeros(0)
    offsets = []
    for left_pose, right_pose in zip(left, right):
        expected = translation_offset(PoseSE3.from_matrix(left_pose), (calib.baseline_m, 0.0, 0.0))
        offsets.append(np.linalg.norm(right_pose[:3, 3] - expected.translation))
    return np.array(offsets)


def statistic_delta(a: float, b: float) -> float:
    """Absolute difference that treats equal values (infinities included) as 0."""
    if a == b:
        return 0.0
    return abs(a - b)


class ValidationController:
    """Runs a capture method against the dual-viewport oracle and checks the thresholds."""

    def __init__(self, settings: SettingsModel, method: str = TEFS, condition: Optional[ConditionProfile] = None,
                 noise_sigma: float = 0.0, vo_seed: int = 0, align: str = ALIGN_RIGID):
        """Initialize the validation controller.

        Args:
            settings: Effective scenario settings
            method: ``tefs`` or ``naiveSwap``
            condition: RGB degradation profile, clear weather by default
            noise_sigma: Pixel noise injected into the odometry observations
            vo_seed: Seed of the odometry noise
            align: Alignment mode used for APE
        """
        if method not in (TEFS, NAIVE_SWAP):
            raise ConfigurationError(f"Validation compares tefs or naiveSwap with the oracle, got '{method}'")
        self.settings = self._bounded(settings)
        self.method = method
        self.condition = condition or get_condition('sunny')
        self.noise_sigma = noise_sigma
        self.vo_seed = vo_seed
        self.align = align

    @staticmethod
    def _bounded(settings: SettingsModel) -> SettingsModel:
        """Cap the cycle count of a stationary scenario that would otherwise never end."""
        vehicle, capture = settings.section('vehicle'), settings.section('capture')
        if vehicle['speed_kmh'] == 0 and vehicle['duration_s'] is None and capture['cycles'] is None:
            logger.info(f"Stationary vehicle; capping the session at {STATIONARY_CYCLES} cycles")
            bounded = SettingsModel(data=settings.to_dict())
            bounded.apply_overrides(cycles=STATIONARY_CYCLES)
            return bounded
        return settings

    @property
    def methods(self) -> List[str]:
        if self.method == NAIVE_SWAP:
            return [NAIVE_SWAP, TEFS, DUAL_VIEWPORT]
        return [TEFS, DUAL_VIEWPORT]

    def run_method(self, method: str, directory: str, progress: bool = False) -> MethodRun:
        """Capture, run odometry and evaluate one method into ``directory``."""
        settings = SettingsModel(data=self.settings.to_dict())
        settings.apply_overrides(method=method, condition=self.condition.name)
        summary = run_session(settings, method, self.condition, directory, progress)
        vo = run_vo(directory, self.noise_sigma, self.vo_seed)
        write_vo_result(os.path.join(directory, 'vo'), vo)
        reports = evaluate(vo.trajectory, read_trajectory(directory), self.align)
        write_reports_csv(reports, os.path.join(directory, 'report.csv'),
                          extra={'scenario': self.settings.name, 'method': method})
        offsets = measured_offsets(directory)
        return MethodRun(method, directory, summary.frame_count, summary.trajectory_length_m, reports, vo.holes,
                         float(np.mean(offsets)) if offsets.size else 0.0,
                         float(np.max(offsets)) if offsets.size else 0.0)

    def compare(self, runs: Dict[str, MethodRun]) -> ValidationResult:
        """Compute APE_pct deltas against the oracle and collect threshold failures."""
        oracle = runs[DUAL_VIEWPORT].report('APE_pct')
        candidate = runs[self.method].report('APE_pct')
        deltas = {f"APE_pct.{name}": statistic_delta(getattr(candidate, name), getattr(oracle, name))
                  for name in COMPARED_STATISTICS}
        offsets = analytic_offsets(self.settings)
        for method, run in runs.items():
            offsets[f'{method}_measured_offset_mean_m'] = run.measured_offset_mean_m
            offsets[f'{method}_measured_offset_max_m'] = run.measured_offset_max_m

        failures = []
        if self.method == TEFS:
            for name, delta in deltas.items():
                if not delta <= APE_PCT_DELTA_LIMIT:
                    failures.append(f"{name}: tefs vs dualViewport delta {delta:.6f} exceeds {APE_PCT_DELTA_LIMIT}")
        elif self.settings.section('vehicle')['speed_kmh'] > 0:
            tefs = runs[TEFS].report('APE_pct').rmse
            ratio = candidate.rmse / tefs if tefs > 0 else math.inf
            deltas['naive_to_tefs_APE_pct_ratio'] = ratio
            if not ratio >= NAIVE_DEGRADATION_FACTOR:
                failures.append(f"APE_pct.rmse: naiveSwap/tefs ratio {ratio:.3f} below {NAIVE_DEGRADATION_FACTOR}")
        return ValidationResult(self.settings.name, runs, deltas, offsets, failures)

    def run(self, directory: str, progress: bool = False) -> ValidationResult:
        """Run every method, compare them and write ``validation.csv`` plus ``validation.json``."""
        os.makedirs(directory, exist_ok=True)
        runs = {}
        for method in self.methods:
            logger.info(f"Validation run '{self.settings.name}' / {method}")
            runs[method] = self.run_method(method, os.path.join(directory, method), progress)
        result = self.compare(runs)

        rows = []
        for method, run in runs.items():
            rows.extend(dict({'scenario': result.scenario, 'method': method}, **report.as_row())
                        for report in run.reports)
        write_rows_csv(rows, os.path.join(directory, 'validation.csv'))
        with open(os.path.join(directory, 'validation.json'), 'w') as f:
            f.write(json.dumps(result.as_dict(), indent=2, sort_keys=True) + '\n')
        for failure in result.failures:
            logger.error(f"Threshold violated: {failure}")
        return result


def format_validation(result: ValidationResult) -> str:
    """Side-by-side text table of a validation run."""
    lines = [f"Validation of '{result.scenario}'"]
    for method, run in result.runs.items():
        lines.append("")
        lines.append(format_reports(run.reports, title=f"[{method}] {run.frame_count} pairs, "
                                                       f"{run.trajectory_length_m:.3f} m, {len(run.holes)} holes"))
    lines.append("")
    lines.append("Deltas")
    for name, value in result.deltas.items():
        lines.append(f"  {name:<30}{value:>16.9f}")
    lines.append("Offsets")
    for name, value in result.offsets.items():
        lines.append(f"  {name:<30}{value:>16.9f}")
    lines.append("PASS" if result.passed else "FAIL: " + "; ".join(result.failures))
    return "\n".join(lines)


def write_rows_csv(rows: Sequence[Dict], path: str) -> None:
    """Write report rows (``scenario``, ``method`` plus the metric columns)."""
    fieldnames = ['scenario', 'method'] + list(REPORT_FIELDS)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n', extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def aggregate_reports(paths: Sequence[str]) -> List[Dict[str, object]]:
    """One summary row per (scenario, method) from report CSV files.

    Each row carries APE mean/max in meters and percent plus the mean
    per-frame RPE, the shape used to read methods side by side.
    """
    table: Dict[tuple, Dict[str, object]] = {}
    for path in paths:
        for row in read_reports_csv(path):
            scenario = row.get('scenario') or os.path.basename(os.path.dirname(os.path.abspath(path)))
            method = row.get('method') or ''
            entry = table.setdefault((scenario, method), {'scenario': scenario, 'method': method})
            for metric, statistic in SUMMARY_COLUMNS:
                if row['metric'] == metric:
                    entry[f'{metric}_{statistic}'] = float(row[statistic])
            if row['metric'] == 'APE_m':
                entry['alignment'] = row['alignment']
                entry['trajectory_length_m'] = float(row['trajectory_length_m'])
    return [table[key] for key in sorted(table)]


def summary_columns() -> List[str]:
    return [f'{metric}_{statistic}' for metric, statistic in SUMMARY_COLUMNS]


def format_aggregate(rows: Sequence[Dict[str, object]]) -> str:
    """Plain-text table of aggregated rows."""
    columns = summary_columns()
    lines = [f"{'scenario':<20}{'method':<14}" + "".join(f"{c:>16}" for c in columns)]
    for row in rows:
        values = "".join(f"{row.get(c, math.nan):>16.6f}" for c in columns)
        lines.append(f"{str(row['scenario']):<20}{str(row['method']):<14}{values}")
    return "\n".join(lines)


def write_aggregate_csv(rows: Sequence[Dict[str, object]], path: str) -> None:
    fieldnames = ['scenario', 'method', 'alignment', 'trajectory_length_m'] + summary_columns()
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_gnuplot_data(rows: Sequence[Dict[str, object]], path: str) -> None:
    """Whitespace-separated data file with a commented header, one line per row."""
    columns = summary_columns()
    with open(path, 'w') as f:
        f.write("# index scenario method " + " ".join(columns) + "\n")
        for i, row in enumerate(rows):
            values = " ".join(repr(float(row.get(c, math.nan))) for c in columns)
            f.write(f"{i} {row['scenario']} {row['method']} {values}\n")


def validate_tefs(settings: SettingsModel, directory: str, method: str = TEFS,
                  condition: Optional[ConditionProfile] = None, noise_sigma: float = 0.0,
                  progress: bool = False) -> ValidationResult:
    """Validate ``method`` against the dual-viewport oracle on one scenario."""
    controller = ValidationController(copy.deepcopy(settings), method, condition, noise_sigma)
    return controller.run(directory, progress)
