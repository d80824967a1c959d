"""
Tests for dbmatch.harness
"""
import os
import csv
import tempfile

import mock
import numpy as np
from pytool.json import from_json
from nose.tools import eq_, ok_, raises, assert_raises, assert_almost_equal

import dbmatch
from dbmatch.errors import ValidationError, SweepRangeError, ReportError
from dbmatch.harness import (CSV_FIELDS, SweepConfig, SweepRow, SweepTable,
                             ThresholdEstimate, load_config, run_sweep,
                             estimate_threshold, emit_report, emit_gnuplot,
                             rate)
from dbmatch.matcher import TYPICALITY, MAP_ORACLE, RANDOM
from dbmatch.process import binary_symmetric, builtin_specs


SPECS_DIR = os.path.join(os.path.dirname(__file__), '..', 'specs')


def _row(r, success, matcher=TYPICALITY, m=10, epsilon=0.05, error=''):
    n = int(round(2 ** (m * r)))
    return SweepRow('abc', m, n, r, epsilon, matcher, 1, success,
                    0.0 if success is not None else None, 0.0, error)


def _table(points, matcher=TYPICALITY):
    return SweepTable([_row(r, s, matcher) for r, s in points])


def _report(table, estimates=(), fmt='csv'):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'report.' + fmt)
        emit_report(table, estimates, path, fmt)
        with open(path, 'rb') as stream:
            return stream.read()


def test_rate():
    eq_(rate(10, 32), 0.5)
    eq_(rate(8, 2), 0.125)


def test_row_cardinality():
    config = SweepConfig(binary_symmetric(0.1), [8, 10], n_values=[2, 3, 4],
                         matchers=[TYPICALITY, RANDOM], trials_per_cell=10)
    eq_(config.row_count, 120)
    table = run_sweep(config, 1)
    eq_(len(table), 120)
    keys = [(row.m, row.n, row.matcher) for row in table]
    eq_(keys[0], (8, 2, TYPICALITY))
    eq_(keys[10], (8, 2, RANDOM))
    eq_(keys[20], (8, 3, TYPICALITY))
    eq_(keys[-1], (10, 4, RANDOM))


def test_single_random_row():
    config = SweepConfig(binary_symmetric(0.1), [6], n_values=[5],
                         matchers=[RANDOM])
    table = run_sweep(config)
    eq_(len(table), 1)
    row = table.rows[0]
    ok_(row.success_fraction in (0.0, 0.2, 0.4, 0.6, 1.0))
    eq_(row.ambiguity_fraction, 1.0)
    eq_(row.error, '')
    assert_almost_equal(row.R, np.log2(5) / 6, places=12)


def test_point_mass_rows_are_all_ambiguous():
    config = SweepConfig(builtin_specs()['point_mass'], [4], n_values=[3, 6],
                         epsilons=[0.01, 0.1], trials_per_cell=3)
    for row in run_sweep(config):
        eq_(row.ambiguity_fraction, 1.0)


def test_matchers_share_the_pair_of_a_trial():
    config = SweepConfig(binary_symmetric(0.1), [12], n_values=[6],
                         epsilons=[0.05, 0.2],
                         matchers=[TYPICALITY, MAP_ORACLE],
                         trials_per_cell=2)
    table = run_sweep(config)
    eq_(len(set(row.trial_seed for row in table)), 2)
    oracle = table.select(matcher=MAP_ORACLE)
    eq_(oracle[0].success_fraction, oracle[2].success_fraction)


def test_sweep_ignores_worker_count():
    config = SweepConfig(binary_symmetric(0.1), [10, 12], n_values=[4, 8],
                         matchers=[TYPICALITY, MAP_ORACLE, RANDOM],
                         trials_per_cell=3, root_seed=99)
    serial = run_sweep(config, 1)
    parallel = run_sweep(config, 3)
    eq_(serial.rows, parallel.rows)
    eq_(_report(serial), _report(parallel))


def test_sweep_is_seeded():
    config = SweepConfig(binary_symmetric(0.1), [10], n_values=[8],
                         matchers=[RANDOM], trials_per_cell=5, root_seed=1)
    other = SweepConfig(binary_symmetric(0.1), [10], n_values=[8],
                        matchers=[RANDOM], trials_per_cell=5, root_seed=2)
    eq_(run_sweep(config).rows, run_sweep(config).rows)
    ok_(run_sweep(config).rows != run_sweep(other).rows)


def test_oracle_cap_gives_error_rows():
    config = SweepConfig(binary_symmetric(0.1), [6], n_values=[2, 5],
                         matchers=[MAP_ORACLE, RANDOM], oracle_cap=4)
    table = run_sweep(config)
    eq_(len(table), 4)
    capped = table.select(matcher=MAP_ORACLE, errors=True)
    eq_(capped[0].error, '')
    ok_('oracle cap' in capped[1].error)
    eq_(capped[1].success_fraction, None)
    eq_(len(table.select(matcher=RANDOM)), 2)


def test_resource_cap_gives_error_rows():
    config = SweepConfig(binary_symmetric(0.1), [6], n_values=[4, 40],
                         matchers=[TYPICALITY, RANDOM])
    with mock.patch.dict(os.environ, {'DBMATCH_MAX_SCALARS': '100'}):
        table = run_sweep(config, 1)
    eq_(len(table), 4)
    eq_([bool(row.error) for row in table], [False, False, True, True])


def test_timing_is_recorded_on_request():
    config = SweepConfig(binary_symmetric(0.1), [6], n_values=[4],
                         matchers=[MAP_ORACLE])
    eq_(run_sweep(config).rows[0].wall_time, 0.0)
    config.record_timing = True
    ok_(run_sweep(config).rows[0].wall_time > 0.0)


def test_rates_convert_to_sizes():
    config = SweepConfig(binary_symmetric(0.1), [10], r_values=[0.2, 0.3,
                                                                 0.5])
    eq_(config.cells, [(10, 4), (10, 8), (10, 32)])
    eq_(config.n_rounding[1], {'m': 10, 'R': 0.3, 'n': 8,
                               'R_actual': rate(10, 8)})


def test_duplicate_rates_are_kept_once():
    config = SweepConfig(binary_symmetric(0.1), [4], r_values=[0.5, 0.51])
    eq_(config.cells, [(4, 4), (4, 5)])
    config = SweepConfig(binary_symmetric(0.1), [2], r_values=[1.0, 1.0])
    eq_(config.cells, [(2, 4)])


def test_config_validation():
    spec = binary_symmetric(0.1)
    assert_raises(ValidationError, SweepConfig, spec, [10], n_values=[1, 4])
    assert_raises(ValidationError, SweepConfig, spec, [10])
    assert_raises(ValidationError, SweepConfig, spec, [10], [4], [0.5])
    assert_raises(ValidationError, SweepConfig, spec, [10], [4],
                  trials_per_cell=0)
    assert_raises(ValidationError, SweepConfig, spec, [10], [4],
                  matchers=['greedy'])
    assert_raises(ValidationError, SweepConfig, spec, [10], [4],
                  epsilons=[-0.1])
    assert_raises(ValidationError, SweepConfig, spec, [], [4])
    assert_raises(ValidationError, SweepConfig, spec, [2000],
                  r_values=[0.5])
    assert_raises(ValidationError, SweepConfig, 'bsc', [10], [4])


def test_config_from_dict():
    config = SweepConfig.from_dict({'spec': 'bsc_0.1', 'm_values': [10],
                                    'R_values': [0.2, 0.4],
                                    'matchers': ['random'],
                                    'root_seed': 5})
    eq_(config.spec, builtin_specs()['bsc_0.1'])
    eq_(config.cells, [(10, 4), (10, 16)])
    again = SweepConfig.from_dict(from_json(config.to_json()))
    eq_(again.to_dict(), config.to_dict())


def test_config_from_dict_errors():
    assert_raises(ValidationError, SweepConfig.from_dict, [])
    assert_raises(ValidationError, SweepConfig.from_dict,
                  {'spec': 'nope', 'm_values': [4], 'n_values': [2]})
    assert_raises(ValidationError, SweepConfig.from_dict,
                  {'m_values': [4], 'n_values': [2]})
    assert_raises(ValidationError, SweepConfig.from_dict,
                  {'spec': 'uniform', 'n_values': [2]})
    assert_raises(ValidationError, SweepConfig.from_dict,
                  {'spec': 'uniform', 'm_values': [4], 'n_values': [2],
                   'colour': 'blue'})
    assert_raises(ValidationError, SweepConfig.from_json, '{')


def test_shipped_sweep_config():
    config = load_config(os.path.join(SPECS_DIR, 'sweep_bsc_0.1.json'))
    eq_([n for _, n in config.cells], [4, 8, 16, 32, 64, 128, 256])
    eq_(config.row_count, 7 * 20 * 3)


def test_threshold_midpoint():
    table = _table([(0.2, 1.0), (0.4, 1.0), (0.6, 0.0), (0.8, 0.0)])
    estimate = estimate_threshold(table, 10, 0.05, TYPICALITY)
    assert_almost_equal(estimate.r_star, 0.5, places=12)
    eq_(estimate.band, (0.4, 0.6))
    eq_(estimate.outside, None)
    eq_(estimate.warning, None)
    eq_(estimate.method, 'midpoint-crossing')


def test_threshold_interpolates():
    table = _table([(0.1, 0.9), (0.3, 0.7), (0.5, 0.3)])
    estimate = estimate_threshold(table, 10, 0.05, TYPICALITY)
    assert_almost_equal(estimate.r_star, 0.4, places=12)
    ok_(estimate.band[0] <= estimate.r_star <= estimate.band[1])


def test_threshold_above_range():
    table = _table([(0.2, 1.0), (0.4, 1.0), (0.6, 1.0)])
    estimate = estimate_threshold(table, 10, 0.05, TYPICALITY)
    eq_(estimate.outside, 'above')
    eq_(estimate.r_star, None)
    eq_(estimate.band, None)


def test_threshold_below_range():
    table = _table([(0.2, 0.1), (0.4, 0.0), (0.6, 0.0)])
    eq_(estimate_threshold(table, 10, 0.05, TYPICALITY).outside, 'below')


def test_threshold_warns_when_not_monotone():
    table = _table([(0.2, 1.0), (0.4, 0.3), (0.6, 0.8), (0.8, 0.0)])
    estimate = estimate_threshold(table, 10, 0.05, TYPICALITY)
    ok_('not monotone' in estimate.warning)
    ok_(estimate.r_star is not None)


def test_threshold_averages_trials():
    table = SweepTable([_row(0.2, 1.0), _row(0.2, 0.8), _row(0.4, 0.5),
                        _row(0.4, 0.3), _row(0.6, 0.0), _row(0.6, None,
                                                             error='boom')])
    points = table.mean_success(10, 0.05, TYPICALITY)
    eq_([r for r, _ in points], [0.2, 0.4, 0.6])
    for (_, mean), expected in zip(points, [0.9, 0.4, 0.0]):
        assert_almost_equal(mean, expected, places=12)


@raises(SweepRangeError)
def test_threshold_needs_three_rates():
    estimate_threshold(_table([(0.2, 1.0), (0.4, 0.0)]), 10, 0.05,
                       TYPICALITY)


@raises(SweepRangeError)
def test_threshold_filters_by_matcher():
    table = _table([(0.2, 1.0), (0.4, 0.5), (0.6, 0.0)], RANDOM)
    estimate_threshold(table, 10, 0.05, TYPICALITY)


def test_map_oracle_phase_transition():
    spec = binary_symmetric(0.2)
    mi = spec.entropy_rates().mi
    config = SweepConfig(spec, [16], n_values=[2, 8, 32, 128, 512],
                         matchers=[MAP_ORACLE], trials_per_cell=20,
                         root_seed=7)
    table = run_sweep(config, 2)
    points = table.mean_success(16, 0.05, MAP_ORACLE)
    ok_(points[0][1] >= 0.85)
    ok_(points[-1][1] <= 0.45)
    estimate = estimate_threshold(table, 16, 0.05, MAP_ORACLE)
    assert_almost_equal(estimate.analytic_mi, mi, places=12)
    ok_(estimate.outside is None)
    ok_(abs(estimate.r_star - mi) <= 0.25)


def test_typicality_phase_transition():
    # At m=16 and epsilon=0.1 a matching pair is typical when it differs in
    # 3 or 4 places; an unrelated pair is typical about 4% of the time
    spec = binary_symmetric(0.2)
    mi = spec.entropy_rates().mi
    config = SweepConfig(spec, [16], n_values=[2, 8, 32, 128, 512],
                         epsilons=[0.1], matchers=[TYPICALITY],
                         trials_per_cell=100, root_seed=3)
    table = run_sweep(config, 2)
    points = table.mean_success(16, 0.1, TYPICALITY)
    ok_(points[0][1] >= 0.7, points)
    ok_(points[-1][1] <= 0.15, points)
    estimate = estimate_threshold(table, 16, 0.1, TYPICALITY)
    ok_(estimate.outside is None)
    ok_(abs(estimate.r_star - mi) <= 0.25, estimate)


def test_typicality_fails_above_capacity():
    spec = binary_symmetric(0.2)
    config = SweepConfig(spec, [16], n_values=[512],
                         epsilons=[0.05, 0.1, 0.2], matchers=[TYPICALITY],
                         trials_per_cell=20, root_seed=4)
    ok_(rate(16, 512) > spec.entropy_rates().mi + 0.25)
    table = run_sweep(config, 2)
    for epsilon in config.epsilons:
        points = table.mean_success(16, epsilon, TYPICALITY)
        ok_(points[0][1] <= 0.05, (epsilon, points))


def test_markov_phase_transition():
    spec = builtin_specs()['markov_increments']
    mi = spec.entropy_rates().mi
    config = SweepConfig(spec, [16], n_values=[2, 8, 32, 128],
                         matchers=[MAP_ORACLE], trials_per_cell=30,
                         root_seed=5)
    table = run_sweep(config, 2)
    points = table.mean_success(16, 0.05, MAP_ORACLE)
    ok_(points[0][1] >= 0.8, points)
    ok_(points[-1][1] <= 0.3, points)
    estimate = estimate_threshold(table, 16, 0.05, MAP_ORACLE)
    ok_(estimate.outside is None)
    ok_(abs(estimate.r_star - mi) <= 0.2, estimate)


def test_transition_sharpens_with_entry_length():
    spec = binary_symmetric(0.2)

    # Below the mutual information longer entries match more often
    below = run_sweep(SweepConfig(spec, [16, 64], r_values=[0.0625],
                                  matchers=[MAP_ORACLE],
                                  trials_per_cell=1000, root_seed=6), 2)
    short = below.mean_success(16, 0.05, MAP_ORACLE)
    long_ = below.mean_success(64, 0.05, MAP_ORACLE)
    eq_([row.n for row in below.select(m=64)][0], 16)
    ok_(long_[0][1] > short[0][1], (short, long_))

    # and above it they match less often
    above = run_sweep(SweepConfig(spec, [8, 16], r_values=[0.5],
                                  matchers=[MAP_ORACLE],
                                  trials_per_cell=50, root_seed=6), 2)
    short = above.mean_success(8, 0.05, MAP_ORACLE)
    long_ = above.mean_success(16, 0.05, MAP_ORACLE)
    eq_([row.n for row in above.select(m=16)][0], 256)
    ok_(long_[0][1] < short[0][1], (short, long_))


def test_markov_matching_below_capacity():
    config = SweepConfig(builtin_specs()['markov_increments'], [200],
                         n_values=[8], matchers=[MAP_ORACLE, RANDOM],
                         trials_per_cell=10)
    table = run_sweep(config)
    ok_(np.mean([row.success_fraction
                 for row in table.select(matcher=MAP_ORACLE)]) >= 0.9)


def test_random_baseline_stays_low():
    config = SweepConfig(binary_symmetric(0.1), [10], n_values=[4, 8, 16],
                         matchers=[RANDOM], trials_per_cell=30)
    table = run_sweep(config)
    for r, mean in table.mean_success(10, 0.05, RANDOM):
        n = 2 ** (10 * r)
        ok_(mean <= 2 / n + 0.05)


def test_empty_csv_is_header_only():
    eq_(_report(SweepTable()), (','.join(CSV_FIELDS) + '\n').encode('ascii'))


def test_csv_rows():
    config = SweepConfig(binary_symmetric(0.1), [8, 10], n_values=[2, 3, 4],
                         matchers=[TYPICALITY, RANDOM], trials_per_cell=10)
    data = _report(run_sweep(config)).decode('ascii')
    eq_(len(data.splitlines()), 121)
    rows = list(csv.DictReader(data.splitlines()))
    eq_(tuple(rows[0].keys()), CSV_FIELDS)
    eq_(rows[0]['error'], '')
    eq_(rows[0]['spec_id'], config.spec.spec_id)


def test_csv_error_cells_are_blank():
    table = SweepTable([_row(0.2, None, error='n=5 exceeds, badly')])
    rows = list(csv.reader(_report(table).decode('ascii').splitlines()))
    eq_(rows[1][7], '')
    eq_(rows[1][-1], 'n=5 exceeds, badly')


def test_json_report():
    config = SweepConfig(binary_symmetric(0.1), [6], n_values=[4],
                         matchers=[RANDOM], trials_per_cell=2)
    table = run_sweep(config)
    estimate = ThresholdEstimate(6, 0.05, RANDOM, [(0.3, 0.5)], r_star=0.3,
                                 band=(0.3, 0.3))
    data = from_json(_report(table, [estimate], 'json').decode('utf-8'))
    eq_(data['tool'], 'dbmatch')
    eq_(data['version'], dbmatch.__version__)
    eq_(data['config']['n_values'], [4])
    eq_(len(data['rows']), 2)
    eq_(data['rows'][0]['matcher'], RANDOM)
    eq_(data['thresholds'][0]['r_star'], 0.3)
    eq_(_report(table, [estimate], 'json'),
        _report(run_sweep(config), [estimate], 'json'))


def test_report_errors():
    assert_raises(ReportError, emit_report, SweepTable(), [],
                  os.path.join(tempfile.gettempdir(), 'no', 'such', 'dir.csv'))
    assert_raises(ValidationError, emit_report, SweepTable(), [], 'x.txt',
                  'txt')


def test_gnuplot():
    table = SweepTable([_row(0.2, 1.0), _row(0.4, 0.5),
                        _row(0.2, 0.25, RANDOM)])
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'curve.dat')
        emit_gnuplot(table, path, 10, 0.05)
        with open(path) as stream:
            lines = stream.read().splitlines()
    eq_(lines[1], '# R random typicality')
    eq_(lines[2], '0.2 0.25 1.0')
    eq_(lines[3], '0.4 nan 0.5')
