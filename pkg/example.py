#!/usr/bin/env python3
"""
Example of using py-tefs as an imported module.

This script captures the small bundled test scene with the frame-swap
protocol and with the dual-viewport oracle, runs the stereo odometry baseline
on both datasets and prints their evaluation side by side.
"""

import os
import tempfile

from index import STATS, show_statistics
from py_tefs.controllers.capture_controller import CaptureController, analytic_offsets
from py_tefs.models.analysis_model import evaluate, format_reports
from py_tefs.models.odometry_model import run_vo
from py_tefs.models.render_model import get_condition
from py_tefs.models.sample_model import DUAL_VIEWPORT, TEFS
from py_tefs.models.settings_model import SettingsModel
from py_tefs.utils.dataset_manager import read_trajectory


def main():
    """
    Main function that demonstrates using py-tefs as a module.
    """
    print("Example of using py-tefs as an imported module")
    print("=" * 50)

    settings = SettingsModel('test_scene')
    settings.apply_overrides(cycles=12)
    offsets = analytic_offsets(settings)
    print(f"Analytic offsets at {offsets['speed_mps'] * 3.6:.1f} km/h: "
          f"tefs {offsets['tefs_offset_m'] * 1000:.3f} mm, naive {offsets['naive_offset_m'] * 1000:.1f} mm")

    with tempfile.TemporaryDirectory() as root:
        for method in (TEFS, DUAL_VIEWPORT):
            directory = os.path.join(root, method)
            summary = CaptureController(settings, method, get_condition('sunny')).run_session(directory)
            STATS['sessions'] += 1
            STATS['pairs_captured'] += summary.frame_count

            result = run_vo(directory)
            STATS['vo_frames'] += len(result.trajectory)
            STATS['vo_holes'] += len(result.holes)
            reports = evaluate(result.trajectory, read_trajectory(directory))
            print()
            print(format_reports(reports, title=f"[{method}] {summary.frame_count} pairs"))

    show_statistics()


if __name__ == "__main__":
    main()
