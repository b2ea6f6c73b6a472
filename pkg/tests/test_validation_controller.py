import json
import math

import pytest

from py_tefs.controllers.capture_controller import run_session
from py_tefs.controllers.validation_controller import (APE_PCT_DELTA_LIMIT, STATIONARY_CYCLES, MethodRun,
                                                       ValidationController, aggregate_reports, format_aggregate,
                                                       format_validation, measured_offsets, statistic_delta,
                                                       summary_columns, write_aggregate_csv, write_gnuplot_data)
from py_tefs.models.analysis_model import ALIGN_RIGID, MetricReport, write_reports_csv
from py_tefs.models.render_model import get_condition
from py_tefs.models.sample_model import DUAL_VIEWPORT, NAIVE_SWAP, TEFS
from py_tefs.utils.errors import ConfigurationError


def _run(method, ape_pct_rmse, ape_pct_max=None):
    reports = [
        MetricReport('APE_m', 0.01, 0.01, 0.01, 0.02, ALIGN_RIGID, 100.0, 10),
        MetricReport('APE_pct', ape_pct_rmse, ape_pct_rmse, ape_pct_rmse,
                     ape_pct_rmse if ape_pct_max is None else ape_pct_max, ALIGN_RIGID, 100.0, 10),
    ]
    return MethodRun(method, f'/tmp/{method}', 10, 100.0, reports, [], 0.0, 0.0)


def test_statistic_delta():
    assert statistic_delta(1.0, 1.5) == pytest.approx(0.5)
    assert statistic_delta(math.inf, math.inf) == 0.0
    assert statistic_delta(0.0, math.inf) == math.inf


def test_tefs_within_limit_passes(make_settings):
    controller = ValidationController(make_settings())
    result = controller.compare({TEFS: _run(TEFS, 0.30), DUAL_VIEWPORT: _run(DUAL_VIEWPORT, 0.25)})
    assert result.passed
    assert result.deltas['APE_pct.rmse'] == pytest.approx(0.05)
    assert set(result.deltas) == {'APE_pct.mean', 'APE_pct.median', 'APE_pct.rmse', 'APE_pct.max'}


def test_tefs_over_limit_fails(make_settings):
    controller = ValidationController(make_settings())
    result = controller.compare({TEFS: _run(TEFS, 0.30, ape_pct_max=0.30 + APE_PCT_DELTA_LIMIT + 0.05),
                                 DUAL_VIEWPORT: _run(DUAL_VIEWPORT, 0.30)})
    assert not result.passed
    assert len(result.failures) == 1
    assert result.failures[0].startswith('APE_pct.max')


def test_naive_must_degrade_tenfold(make_settings):
    controller = ValidationController(make_settings(), NAIVE_SWAP)
    assert controller.methods == [NAIVE_SWAP, TEFS, DUAL_VIEWPORT]
    runs = {TEFS: _run(TEFS, 0.1), DUAL_VIEWPORT: _run(DUAL_VIEWPORT, 0.1)}
    passed = controller.compare(dict(runs, **{NAIVE_SWAP: _run(NAIVE_SWAP, 5.0)}))
    assert passed.passed
    assert passed.deltas['naive_to_tefs_APE_pct_ratio'] == pytest.approx(50.0)
    failed = controller.compare(dict(runs, **{NAIVE_SWAP: _run(NAIVE_SWAP, 0.5)}))
    assert not failed.passed


def test_dual_viewport_cannot_be_validated(make_settings):
    with pytest.raises(ConfigurationError):
        ValidationController(make_settings(), DUAL_VIEWPORT)


def test_stationary_scenario_is_capped(make_settings):
    settings = make_settings(speed_kmh=0.0, data={'capture': {'cycles': None}})
    controller = ValidationController(settings)
    assert controller.settings.section('capture')['cycles'] == STATIONARY_CYCLES
    assert settings.section('capture')['cycles'] is None


def test_end_to_end_run_writes_outputs(make_settings, tmp_path):
    controller = ValidationController(make_settings())
    result = controller.run(str(tmp_path))
    assert set(result.runs) == {TEFS, DUAL_VIEWPORT}
    for method in (TEFS, DUAL_VIEWPORT):
        assert (tmp_path / method / 'report.csv').exists()
        assert (tmp_path / method / 'vo' / 'poses.txt').exists()
        assert result.runs[method].frame_count == 6
    assert result.runs[DUAL_VIEWPORT].measured_offset_max_m == pytest.approx(0.0, abs=1e-9)
    # 10 km/h × 0.25 ms
    assert result.runs[TEFS].measured_offset_mean_m == pytest.approx(0.000694, abs=2e-6)
    assert result.offsets['tefs_offset_m'] == pytest.approx(0.000694, abs=1e-6)
    saved = json.loads((tmp_path / 'validation.json').read_text())
    assert saved['passed'] == result.passed
    assert (tmp_path / 'validation.csv').read_text().startswith('scenario,method,metric,')
    assert 'Deltas' in format_validation(result)


def test_measured_offsets_of_naive_swap(make_settings, tmp_path):
    run_session(make_settings(cycles=2), NAIVE_SWAP, get_condition('sunny'), str(tmp_path))
    offsets = measured_offsets(str(tmp_path))
    assert offsets == pytest.approx([10.0 / 3.6 / 60.0] * 2, abs=1e-9)


def test_aggregate_reports(tmp_path):
    paths = []
    for scenario, method, value in (('b', TEFS, 0.2), ('a', DUAL_VIEWPORT, 0.1), ('a', TEFS, 0.3)):
        path = tmp_path / f'{scenario}_{method}.csv'
        write_reports_csv(_run(method, value).reports, str(path), extra={'scenario': scenario, 'method': method})
        paths.append(str(path))
    rows = aggregate_reports(paths)
    assert [(row['scenario'], row['method']) for row in rows] == [('a', DUAL_VIEWPORT), ('a', TEFS), ('b', TEFS)]
    assert rows[1]['APE_pct_mean'] == pytest.approx(0.3)
    assert rows[0]['alignment'] == ALIGN_RIGID

    write_aggregate_csv(rows, str(tmp_path / 'summary.csv'))
    header = (tmp_path / 'summary.csv').read_text().splitlines()[0].split(',')
    assert header[:4] == ['scenario', 'method', 'alignment', 'trajectory_length_m']
    write_gnuplot_data(rows, str(tmp_path / 'summary.dat'))
    lines = (tmp_path / 'summary.dat').read_text().splitlines()
    assert lines[0].startswith('# index scenario method')
    assert len(lines) == 4
    assert len(lines[1].split()) == 3 + len(summary_columns())
    assert 'APE_m_mean' in format_aggregate(rows)
