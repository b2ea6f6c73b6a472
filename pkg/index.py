#!/usr/bin/env python3
"""
Py-TeFS: Temporal-controlled Frame Swap capture and evaluation toolkit

This script captures stereo datasets on a simulated single-viewport engine,
converts depth, runs the stereo odometry baseline, evaluates trajectories and
validates frame-swap captures against the dual-viewport oracle.

Usage examples:
    # Capture a bundled scenario with the frame-swap protocol
    python index.py capture --scenario validation_a --method tefs --out runs/a_tefs

    # Capture several scenarios in parallel
    python index.py capture --scenario validation_a validation_b --method dual --out runs --workers 2

    # Convert the raw depth buffer of a dataset with another profile
    python index.py convert-depth --dataset runs/a_tefs --profile cameraReadyInline

    # Stereo odometry with half a pixel of observation noise
    python index.py vo --dataset runs/a_tefs --noise 0.5

    # Evaluate an estimate against ground truth
    python index.py evaluate --est runs/a_tefs/vo/poses.txt --gt runs/a_tefs --align rigid

    # Validate the frame-swap protocol end to end
    python index.py validate-tefs --scenario validation_a --out runs/validate_a

    # Aggregate report tables
    python index.py report runs/*/report.csv --out summary.csv --dat summary.dat
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

from py_tefs.controllers.capture_controller import CaptureController
from py_tefs.controllers.validation_controller import (ValidationController, aggregate_reports,
                                                       format_aggregate, format_validation, write_aggregate_csv,
                                                       write_gnuplot_data)
from py_tefs.models.analysis_model import ALIGN_MODES, ALIGN_RIGID, evaluate, format_reports, write_reports_csv
from py_tefs.models.odometry_model import DEFAULT_MAX_DEPTH_M, run_vo, write_vo_result
from py_tefs.models.render_model import CONDITION_ALIASES, get_condition
from py_tefs.models.sample_model import METHOD_ALIASES
from py_tefs.models.settings_model import SCHEDULES, SettingsModel
from py_tefs.utils.dataset_manager import convert_dataset_depth, read_trajectory
from py_tefs.utils.depth_utils import PROFILE_KINDS, SEMANTICS
from py_tefs.utils.errors import TefsError

# Logging system configuration
logging.basicConfig(
    level=logging.INFO,
    format='%(levelname)s: %(message)s'
)
logger = logging.getLogger('py-tefs')

EXIT_OK = 0
EXIT_FAILURE = 1

# Global statistics
STATS = {
    'sessions': 0,
    'pairs_captured': 0,
    'rasters_converted': 0,
    'vo_frames': 0,
    'vo_holes': 0,
    'reports_written': 0,
    'errors': 0
}


def add_scenario_arguments(parser: argparse.ArgumentParser, many: bool = False) -> None:
    """Scenario selection plus the flags that override scenario values."""
    parser.add_argument('--scenario', '-c', type=str, nargs='+' if many else None,
                        default=['validation_a'] if many else 'validation_a',
                        help='Scenario file or bundled scenario name (default: validation_a)')
    parser.add_argument('--seed', type=int, default=None, help='Override the scenario seed')
    parser.add_argument('--speed', type=float, default=None, help='Override the vehicle speed (km/h)')
    parser.add_argument('--cycles', type=int, default=None, help='Cap the number of capture cycles')
    parser.add_argument('--disparity-ms', type=float, default=None,
                        help='Override the engine temporal disparity (ms)')
    parser.add_argument('--schedule', type=str, choices=sorted(SCHEDULES), default=None,
                        help='Use a predefined capture tick schedule')
    parser.add_argument('--image-size', type=int, nargs=2, metavar=('W', 'H'), default=None,
                        help='Override the rendered image size')
    parser.add_argument('--condition', type=str, choices=sorted(CONDITION_ALIASES), default=None,
                        help="RGB degradation profile (default: the scenario's run.condition, sunny)")
    parser.add_argument('--progress', '-P', action='store_true', help='Show capture progress bars')


def setup_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Configure and process command line arguments.

    Args:
        argv: Argument list, ``sys.argv[1:]`` when None

    Returns:
        argparse.Namespace: Object with processed arguments
    """
    parser = argparse.ArgumentParser(
        description='Capture, convert and evaluate frame-swap stereo datasets.',
        epilog='Developed as part of the py-tefs project.'
    )
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='Verbose mode: shows additional information during the process')
    subparsers = parser.add_subparsers(dest='command', required=True)

    capture = subparsers.add_parser('capture', help='Capture stereo datasets')
    add_scenario_arguments(capture, many=True)
    capture.add_argument('--method', '-m', type=str, choices=sorted(METHOD_ALIASES), default=None,
                         help="Capture method (default: the scenario's run.method, tefs)")
    capture.add_argument('--out', '-o', type=str, required=True,
                         help='Dataset directory; with several scenarios, one subdirectory per scenario')
    capture.add_argument('--keep-ndc', action='store_true', help='Also store the raw NDC depth buffer')
    capture.add_argument('--workers', '-w', type=int, default=1,
                         help='Worker processes when capturing several scenarios (default: 1)')

    convert = subparsers.add_parser('convert-depth', help='Convert stored NDC rasters to metric depth')
    convert.add_argument('--dataset', '-d', type=str, required=True, help='Dataset directory')
    convert.add_argument('--profile', type=str, choices=PROFILE_KINDS, default=PROFILE_KINDS[0],
                         help='Depth conversion profile')
    convert.add_argument('--semantics', type=str, choices=SEMANTICS, default=SEMANTICS[0],
                         help='Ray distance or planar depth')
    convert.add_argument('--out', '-o', type=str, default=None,
                         help='Output directory (default: DATASET/depth_<profile>_<semantics>)')

    vo = subparsers.add_parser('vo', help='Run the stereo odometry baseline on a dataset')
    vo.add_argument('--dataset', '-d', type=str, required=True, help='Dataset directory')
    vo.add_argument('--noise', type=float, default=0.0, help='Pixel noise sigma added to observations')
    vo.add_argument('--seed', type=int, default=0, help='Noise seed')
    vo.add_argument('--max-depth', type=float, default=DEFAULT_MAX_DEPTH_M,
                    help=f'Ignore points farther than this (default: {DEFAULT_MAX_DEPTH_M} m)')
    vo.add_argument('--out', '-o', type=str, default=None, help='Output directory (default: DATASET/vo)')

    ev = subparsers.add_parser('evaluate', help='Evaluate an estimated trajectory against ground truth')
    ev.add_argument('--est', type=str, required=True, help='Estimated poses file or directory')
    ev.add_argument('--gt', type=str, required=True, help='Ground-truth poses file or dataset directory')
    ev.add_argument('--align', type=str, choices=ALIGN_MODES, default=ALIGN_RIGID, help='Alignment mode')
    ev.add_argument('--scale-correct', action='store_true', help='Rescale the estimate to the ground-truth length')
    ev.add_argument('--delta', type=int, default=1, help='RPE frame delta (default: 1)')
    ev.add_argument('--tolerance', type=float, default=None, help='Timestamp association tolerance (s)')
    ev.add_argument('--csv', type=str, default=None, help='Write the report table as CSV')

    validate = subparsers.add_parser('validate-tefs', help='Validate a capture method against the oracle')
    add_scenario_arguments(validate)
    validate.add_argument('--method', '-m', type=str, choices=['tefs', 'naive'], default=None,
                          help='Method compared with the dual-viewport oracle (default: tefs)')
    validate.add_argument('--noise', type=float, default=None, help='Pixel noise sigma for odometry (default: 0)')
    validate.add_argument('--out', '-o', type=str, required=True, help='Output directory')

    report = subparsers.add_parser('report', help='Aggregate report CSV files into one table')
    report.add_argument('inputs', nargs='+', help='Report CSV files')
    report.add_argument('--out', '-o', type=str, default=None, help='Write the aggregate table as CSV')
    report.add_argument('--dat', type=str, default=None, help='Write a gnuplot-compatible data file')

    return parser.parse_args(argv)


def load_settings(args: argparse.Namespace, scenario: str) -> SettingsModel:
    """Effective configuration: defaults, then the scenario file, then flags."""
    settings = SettingsModel(scenario)
    settings.apply_overrides(seed=args.seed, speed_kmh=args.speed, cycles=args.cycles,
                             disparity_ms=args.disparity_ms, schedule=args.schedule,
                             image_size=args.image_size, method=args.method, condition=args.condition,
                             noise_sigma=getattr(args, 'noise', None))
    if getattr(args, 'keep_ndc', False):
        settings.update({'capture': {'keep_ndc': True}})
    return settings


def print_config(config: Dict) -> None:
    """Print the effective configuration block on standard output."""
    print(json.dumps(config, indent=2, sort_keys=True))


def capture_scenario(job: Dict) -> Dict:
    """Capture one scenario; runs in a worker process when ``--workers`` > 1."""
    settings = SettingsModel(data=job['settings'])
    run = settings.section('run')
    controller = CaptureController(settings, METHOD_ALIASES.get(run['method'], run['method']),
                                   get_condition(run['condition']))
    summary = controller.run_session(job['out'], job['progress'])
    return {'scenario': settings.name, 'directory': summary.directory, 'frame_count': summary.frame_count,
            'manifest': json.loads(summary.manifest.to_json())}


def command_capture(args: argparse.Namespace) -> int:
    jobs = []
    for scenario in args.scenario:
        settings = load_settings(args, scenario)
        print_config(settings.to_dict())
        out = args.out if len(args.scenario) == 1 else os.path.join(args.out, settings.name)
        jobs.append({'settings': settings.to_dict(), 'out': out, 'progress': args.progress})

    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(capture_scenario, jobs))
    else:
        results = [capture_scenario(job) for job in jobs]

    for result in results:
        manifest = dict(result['manifest'])
        manifest.pop('frames', None)
        manifest.pop('config', None)
        print(json.dumps(manifest, indent=2, sort_keys=True))
        STATS['sessions'] += 1
        STATS['pairs_captured'] += result['frame_count']
        logger.info(f"{result['scenario']}: {result['frame_count']} pairs in {result['directory']}")
    return EXIT_OK


def command_convert_depth(args: argparse.Namespace) -> int:
    out = args.out or os.path.join(args.dataset, f"depth_{args.profile}_{args.semantics}")
    print_config({'dataset': args.dataset, 'profile': args.profile, 'semantics': args.semantics, 'out': out})
    STATS['rasters_converted'] += convert_dataset_depth(args.dataset, out, args.profile, args.semantics)
    return EXIT_OK


def command_vo(args: argparse.Namespace) -> int:
    out = args.out or os.path.join(args.dataset, 'vo')
    print_config({'dataset': args.dataset, 'noise_sigma': args.noise, 'seed': args.seed,
                  'max_depth_m': args.max_depth, 'out': out})
    result = run_vo(args.dataset, args.noise, args.seed, args.max_depth)
    os.makedirs(out, exist_ok=True)
    write_vo_result(out, result)
    STATS['vo_frames'] += len(result.trajectory)
    STATS['vo_holes'] += len(result.holes)
    if result.partial:
        logger.warning(f"Trajectory is partial: holes at frames {result.holes}")
    return EXIT_OK


def command_evaluate(args: argparse.Namespace) -> int:
    print_config({'est': args.est, 'gt': args.gt, 'align': args.align, 'scale_correct': args.scale_correct,
                  'delta': args.delta, 'tolerance': args.tolerance})
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    reports = evaluate(est, gt, args.align, args.scale_correct, args.delta, tolerance=args.tolerance)
    print(format_reports(reports, title=f"{args.est} vs {args.gt}"))
    if args.csv:
        write_reports_csv(reports, args.csv)
        STATS['reports_written'] += 1
    return EXIT_OK


def command_validate(args: argparse.Namespace) -> int:
    settings = load_settings(args, args.scenario)
    print_config(settings.to_dict())
    run = settings.section('run')
    controller = ValidationController(settings, METHOD_ALIASES.get(run['method'], run['method']),
                                      get_condition(run['condition']), run['noise_sigma'])
    result = controller.run(args.out, args.progress)
    print(format_validation(result))
    STATS['sessions'] += len(result.runs)
    STATS['pairs_captured'] += sum(run.frame_count for run in result.runs.values())
    STATS['reports_written'] += 1
    if not result.passed:
        for failure in result.failures:
            logger.error(f"FAILED {failure}")
        return EXIT_FAILURE
    return EXIT_OK


def command_report(args: argparse.Namespace) -> int:
    print_config({'inputs': list(args.inputs), 'out': args.out, 'dat': args.dat})
    rows = aggregate_reports(args.inputs)
    print(format_aggregate(rows))
    if args.out:
        write_aggregate_csv(rows, args.out)
        STATS['reports_written'] += 1
    if args.dat:
        write_gnuplot_data(rows, args.dat)
    return EXIT_OK


COMMANDS = {
    'capture': command_capture,
    'convert-depth': command_convert_depth,
    'vo': command_vo,
    'evaluate': command_evaluate,
    'validate-tefs': command_validate,
    'report': command_report,
}


def show_statistics() -> None:
    """
    Shows a summary of the run statistics.
    """
    logger.info("Run Summary:")
    logger.info(f"  - Capture sessions: {STATS['sessions']}")
    logger.info(f"  - Stereo pairs captured: {STATS['pairs_captured']}")
    logger.info(f"  - Depth rasters converted: {STATS['rasters_converted']}")
    logger.info(f"  - VO frames (holes): {STATS['vo_frames']} ({STATS['vo_holes']})")
    logger.info(f"  - Reports written: {STATS['reports_written']}")
    logger.info(f"  - Errors encountered: {STATS['errors']}")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main function that dispatches a subcommand and maps errors to exit codes.

    Returns:
        int: 0 on success, 1 on failure or violated threshold; usage errors exit with 2
    """
    args = setup_arguments(argv)

    # Configure logging level based on verbosity
    if args.verbose:
        logging.getLogger('py-tefs').setLevel(logging.DEBUG)

    try:
        code = COMMANDS[args.command](args)
    except (TefsError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        STATS['errors'] += 1
        code = EXIT_FAILURE

    show_statistics()
    return code


if __name__ == "__main__":
    sys.exit(main())
