"""
Sweep harness
=============

Runs seeded grids of matching experiments over ``(m, n, epsilon, matcher)``
for one spec, estimates where matching success collapses as the rate
``R = log2(n) / m`` grows, and writes the results out.

Every trial draws its pair from a seed derived from the root seed, the cell
index and the trial index, so a sweep gives the same table whatever the
worker count or scheduling order.

"""
import csv
import math
import time
import logging
import multiprocessing
from collections import namedtuple

import six
import numpy as np
from pytool.json import as_json, from_json

from dbmatch import config as settings
from dbmatch.database import generate_correlated_pair
from dbmatch.errors import (DBMatchError, ValidationError, SweepRangeError,
                            ReportError)
from dbmatch.matcher import (MATCHERS, MAP_ORACLE, TYPICALITY, run_matcher,
                             success_fraction)
from dbmatch.process import JointProcessSpec, builtin_specs, positive_int
from dbmatch.seeds import check_seed, derive_seed, child_rng


log = logging.getLogger(__name__)

CSV_FIELDS = ('spec_id', 'm', 'n', 'R', 'epsilon', 'matcher', 'trial_seed',
              'success_fraction', 'ambiguity_fraction', 'wall_time', 'error')

SweepRow = namedtuple('SweepRow', CSV_FIELDS)

CROSSING = 0.5
WIGGLE_LIMIT = 0.15

# Largest exponent accepted when converting a rate to a database size
MAX_RATE_EXPONENT = 62


def rate(m, n):
    """ Return the rate ``log2(n) / m`` in bits per symbol. """
    return math.log2(n) / m


def _number_list(values, name, convert):
    if isinstance(values, (six.string_types, dict)) or \
            not hasattr(values, '__iter__'):
        raise ValidationError("{} must be a list".format(name))
    values = [convert(value, name) for value in values]
    if not values:
        raise ValidationError("{} must not be empty".format(name))
    return values


def _positive_float(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError("{} must be a number, got {!r}".format(
            name, value))
    if not value > 0 or not math.isfinite(value):
        raise ValidationError("{} must be positive, got {!r}".format(
            name, value))
    return value


class SweepConfig(object):
    """
    One sweep: a spec, the grid to run it over, and the seed discipline.

    Exactly one of `n_values` and `r_values` is given. Rates are converted
    to database sizes ``n = ceil(2 ** (m * R))`` per ``m``; the conversion is
    kept in :attr:`n_rounding` and echoed in reports.

    :param spec: :class:`JointProcessSpec`
    :param m_values: Entry lengths
    :param n_values: Database sizes, each at least 2
    :param r_values: Rates in bits per symbol
    :param epsilons: Typicality slacks
    :param matchers: Matcher names, a subset of :data:`MATCHERS`
    :param int trials_per_cell: Trials per ``(m, n)`` cell
    :param int root_seed: Root seed
    :param int oracle_cap: MAP oracle cap (default ``dbmatch.oracle_cap``)
    :param bool strict: Strict typicality
    :param bool record_timing: Record per-row wall time

    """
    def __init__(self, spec, m_values, n_values=None, r_values=None,
                 epsilons=(0.05,), matchers=(TYPICALITY,), trials_per_cell=1,
                 root_seed=0, oracle_cap=None, strict=False,
                 record_timing=False):
        if not isinstance(spec, JointProcessSpec):
            raise ValidationError("spec must be a JointProcessSpec")
        if (n_values is None) == (r_values is None):
            raise ValidationError("give exactly one of n_values and r_values")
        self.spec = spec
        self.m_values = _number_list(m_values, 'm_values', positive_int)
        for m in self.m_values:
            if m < spec.min_length():
                raise ValidationError("m={} is below the spec's minimum "
                                      "length {}".format(m, spec.min_length()))
        self.epsilons = _number_list(epsilons, 'epsilons', _positive_float)
        self.matchers = _number_list(matchers, 'matchers', self._matcher)
        self.trials_per_cell = positive_int(trials_per_cell,
                                            'trials_per_cell')
        self.root_seed = check_seed(root_seed)
        if oracle_cap is None:
            oracle_cap = settings.get('dbmatch.oracle_cap', 512)
        self.oracle_cap = positive_int(oracle_cap, 'oracle_cap')
        self.strict = bool(strict)
        self.record_timing = bool(record_timing)

        self.n_values = None
        self.r_values = None
        self.n_rounding = None
        if n_values is not None:
            self.n_values = _number_list(n_values, 'n_values', positive_int)
            if min(self.n_values) < 2:
                raise ValidationError("n_values must be at least 2 so the "
                                      "rate is positive")
            self.cells = [(m, n) for m in self.m_values
                          for n in self.n_values]
        else:
            self.r_values = _number_list(r_values, 'r_values',
                                         _positive_float)
            self.n_rounding = []
            self.cells = []
            for m in self.m_values:
                for r in self.r_values:
                    n = self._size_for_rate(m, r)
                    self.n_rounding.append({'m': m, 'R': r, 'n': n,
                                            'R_actual': rate(m, n)})
                    if (m, n) in self.cells:
                        log.warning("R=%s rounds to n=%s again at m=%s; "
                                    "cell kept once", r, n, m)
                        continue
                    self.cells.append((m, n))

    @staticmethod
    def _matcher(value, name):
        if value not in MATCHERS:
            raise ValidationError("unknown matcher {!r} in {}, expected one "
                                  "of {}".format(value, name,
                                                 ', '.join(MATCHERS)))
        return value

    @staticmethod
    def _size_for_rate(m, r):
        # Round the exponent so binary float noise never bumps the ceiling
        exponent = round(m * r, 9)
        if exponent > MAX_RATE_EXPONENT:
            raise ValidationError("R={} at m={} needs n = 2**{}, which is "
                                  "not a feasible database".format(
                                      r, m, exponent))
        return max(2, int(math.ceil(2 ** exponent)))

    @property
    def row_count(self):
        return (len(self.cells) * self.trials_per_cell * len(self.epsilons) *
                len(self.matchers))

    def to_dict(self):
        out = {
                'spec': self.spec.to_dict(),
                'm_values': self.m_values,
                'epsilons': self.epsilons,
                'matchers': self.matchers,
                'trials_per_cell': self.trials_per_cell,
                'root_seed': self.root_seed,
                'oracle_cap': self.oracle_cap,
                'strict': self.strict,
                'record_timing': self.record_timing,
                }
        if self.n_values is not None:
            out['n_values'] = self.n_values
        else:
            out['r_values'] = self.r_values
            out['n_rounding'] = self.n_rounding
        return out

    def to_json(self, **kwargs):
        return as_json(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data):
        """ Return the config described by `data`.

            ``spec`` is either a spec object in JSON form or the name of a
            built-in spec. ``R_values`` is accepted for ``r_values``.
        """
        if not isinstance(data, dict):
            raise ValidationError("sweep config must be a JSON object")
        data = dict(data)
        data.pop('n_rounding', None)
        if 'R_values' in data:
            data['r_values'] = data.pop('R_values')
        spec = data.pop('spec', None)
        if isinstance(spec, six.string_types):
            specs = builtin_specs()
            if spec not in specs:
                raise ValidationError("unknown built-in spec {!r}".format(
                    spec))
            spec = specs[spec]
        elif isinstance(spec, dict):
            spec = JointProcessSpec.from_dict(spec)
        else:
            raise ValidationError("sweep config needs a spec")
        if 'm_values' not in data:
            raise ValidationError("sweep config needs m_values")
        try:
            return cls(spec, **data)
        except TypeError as err:
            raise ValidationError("bad sweep config: {}".format(err))

    @classmethod
    def from_json(cls, text):
        try:
            data = from_json(text)
        except ValueError as err:
            raise ValidationError("sweep config is not JSON: {}".format(err))
        return cls.from_dict(data)


def load_config(path):
    """ Return the :class:`SweepConfig` stored as JSON at `path`. """
    with open(path) as stream:
        return SweepConfig.from_json(stream.read())


class SweepTable(object):
    """ Rows of a sweep, one per ``(cell, trial, epsilon, matcher)``, ordered
        by ``(m, n, epsilon, matcher, trial)``.
    """
    def __init__(self, rows=(), config=None):
        self.rows = list(rows)
        self.config = config

    @property
    def spec(self):
        return self.config.spec if self.config else None

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def select(self, m=None, epsilon=None, matcher=None, errors=False):
        """ Return the rows matching every given field. Error rows are left
            out unless `errors` is set.
        """
        return [row for row in self.rows
                if (m is None or row.m == m) and
                (epsilon is None or row.epsilon == epsilon) and
                (matcher is None or row.matcher == matcher) and
                (errors or not row.error)]

    def mean_success(self, m, epsilon, matcher):
        """ Return ``[(R, mean success fraction)]`` sorted by ``R``. """
        by_rate = {}
        for row in self.select(m, epsilon, matcher):
            by_rate.setdefault(row.R, []).append(row.success_fraction)
        return [(r, float(np.mean(by_rate[r]))) for r in sorted(by_rate)]


def _error_rows(config, m, n, seed, reason):
    return [(index, matcher_index,
             SweepRow(config.spec.spec_id, m, n, rate(m, n), epsilon,
                      matcher, seed, None, None, 0.0, reason))
            for index, epsilon in enumerate(config.epsilons)
            for matcher_index, matcher in enumerate(config.matchers)]


def _run_unit(work):
    """ Run every epsilon and matcher on the pair of one ``(m, n, trial)``
        unit. Returns ``(sort key, rows)``.
    """
    config, cell_index, m, n, trial = work
    seed = derive_seed(config.root_seed, 'trial', cell_index, trial)
    key = (cell_index, trial)
    try:
        pair = generate_correlated_pair(config.spec, m, n, seed)
    except DBMatchError as err:
        log.warning("Cell m=%s n=%s trial %s failed: %s", m, n, trial, err)
        return key, _error_rows(config, m, n, seed, str(err))

    rows = []
    map_outcome = None
    for e_index, epsilon in enumerate(config.epsilons):
        for matcher_index, matcher in enumerate(config.matchers):
            # The MAP oracle ignores epsilon, so solve it once per pair
            if matcher == MAP_ORACLE and map_outcome is not None:
                outcome = map_outcome
            else:
                outcome = _run_matcher(config, pair, matcher, epsilon, seed,
                                       e_index)
                if matcher == MAP_ORACLE:
                    map_outcome = outcome
            success, ambiguity, wall_time, error = outcome
            rows.append((e_index, matcher_index,
                         SweepRow(config.spec.spec_id, m, n, rate(m, n),
                                  epsilon, matcher, seed, success, ambiguity,
                                  wall_time, error)))
    log.debug("Unit m=%s n=%s trial=%s done", m, n, trial)
    return key, rows


def _run_matcher(config, pair, matcher, epsilon, seed, e_index):
    started = time.perf_counter()
    try:
        result = run_matcher(matcher, pair.db1, pair.db2.base, pair.spec,
                             epsilon=epsilon,
                             rng=child_rng(seed, 'match-' + matcher, e_index),
                             strict=config.strict,
                             oracle_cap=config.oracle_cap, workers=1)
    except DBMatchError as err:
        log.warning("Matcher %s failed at m=%s n=%s: %s", matcher, pair.m,
                    pair.n, err)
        return None, None, 0.0, str(err)
    success = success_fraction(pair.db2.theta, result)
    wall_time = 0.0
    if config.record_timing:
        wall_time = time.perf_counter() - started
    return success, result.ambiguity_fraction, wall_time, ''


def run_sweep(config, workers=None):
    """
    Return the :class:`SweepTable` of `config`.

    Each ``(m, n, trial)`` unit generates one pair and runs every epsilon and
    matcher on it, so matchers are compared on identical pairs. Failures
    inside a unit become error rows instead of aborting the sweep.

    :param config: :class:`SweepConfig`
    :param int workers: Worker processes (default ``dbmatch.workers``)

    """
    if workers is None:
        workers = settings.get('dbmatch.workers', 1)
    workers = positive_int(workers, 'workers')
    work = [(config, cell_index, m, n, trial)
            for cell_index, (m, n) in enumerate(config.cells)
            for trial in range(config.trials_per_cell)]
    log.info("Sweep spec=%s: %s cells, %s units, %s rows, %s workers",
             config.spec.spec_id, len(config.cells), len(work),
             config.row_count, workers)

    if workers <= 1 or len(work) <= 1:
        results = [_run_unit(item) for item in work]
    else:
        with multiprocessing.Pool(processes=workers) as pool:
            results = list(pool.imap_unordered(_run_unit, work, chunksize=1))

    rows = []
    for (cell_index, trial), unit_rows in results:
        for e_index, matcher_index, row in unit_rows:
            rows.append(((cell_index, e_index, matcher_index, trial), row))
    rows.sort(key=lambda item: item[0])
    return SweepTable([row for _, row in rows], config)


class ThresholdEstimate(object):
    """
    Where the mean success fraction crosses one half, for one
    ``(m, epsilon, matcher)`` slice of a sweep.

    When the crossing lies outside the swept rates, :attr:`r_star` and
    :attr:`band` are ``None`` and :attr:`outside` says which side it is on
    (``'above'`` when every rate still succeeds).

    """
    method = 'midpoint-crossing'

    def __init__(self, m, epsilon, matcher, points, r_star=None, band=None,
                 analytic_mi=None, outside=None, warning=None):
        self.m = m
        self.epsilon = epsilon
        self.matcher = matcher
        self.points = points
        self.r_star = r_star
        self.band = band
        self.analytic_mi = analytic_mi
        self.outside = outside
        self.warning = warning

    def to_dict(self):
        return {
                'm': self.m,
                'epsilon': self.epsilon,
                'matcher': self.matcher,
                'method': self.method,
                'r_star': self.r_star,
                'band': list(self.band) if self.band else None,
                'analytic_mi': self.analytic_mi,
                'outside': self.outside,
                'warning': self.warning,
                'points': [list(point) for point in self.points],
                }

    def __repr__(self):
        if self.outside:
            return "<ThresholdEstimate {} m={} outside={}>".format(
                self.matcher, self.m, self.outside)
        return "<ThresholdEstimate {} m={} r_star={:.4f}>".format(
            self.matcher, self.m, self.r_star)


def _max_wiggle(means):
    """ Largest rise of the mean success over any later, larger rate. """
    wiggle = 0.0
    lowest = np.inf
    for mean in means:
        wiggle = max(wiggle, mean - lowest)
        lowest = min(lowest, mean)
    return wiggle


def estimate_threshold(table, m, epsilon, matcher):
    """
    Return the :class:`ThresholdEstimate` of one slice of `table`: the rate
    where the mean success fraction first drops through 0.5, linearly
    interpolated between the two bracketing rates.

    :raises: :exc:`SweepRangeError` with fewer than three rates in the slice

    """
    points = table.mean_success(m, epsilon, matcher)
    if len(points) < 3:
        raise SweepRangeError("need at least 3 rates at m={} epsilon={} "
                              "matcher={}, found {}".format(
                                  m, epsilon, matcher, len(points)))
    analytic_mi = None
    if table.spec is not None:
        analytic_mi = table.spec.entropy_rates().mi

    means = [mean for _, mean in points]
    warning = None
    wiggle = _max_wiggle(means)
    if wiggle > WIGGLE_LIMIT:
        warning = "mean success is not monotone in R (wiggle {:.3f})".format(
            wiggle)
        log.warning("m=%s epsilon=%s %s: %s", m, epsilon, matcher, warning)

    estimate = ThresholdEstimate(m, epsilon, matcher, points,
                                 analytic_mi=analytic_mi, warning=warning)
    for (r_low, high), (r_high, low) in zip(points, points[1:]):
        if high >= CROSSING > low:
            estimate.r_star = r_low + (high - CROSSING) * (r_high - r_low) / \
                (high - low)
            estimate.band = (r_low, r_high)
            return estimate

    estimate.outside = 'above' if min(means) >= CROSSING else 'below'
    log.info("m=%s epsilon=%s %s: threshold %s the swept range", m, epsilon,
             matcher, estimate.outside)
    return estimate


def _cell(value):
    return '' if value is None else value


def _write_csv(table, stream):
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(CSV_FIELDS)
    for row in table:
        writer.writerow([_cell(value) for value in row])


def _write_json(table, estimates, stream):
    from dbmatch import __version__
    report = {
            'tool': 'dbmatch',
            'version': __version__,
            'config': table.config.to_dict() if table.config else None,
            'rows': [row._asdict() for row in table],
            'thresholds': [estimate.to_dict() for estimate in estimates],
            }
    stream.write(as_json(report, sort_keys=True, indent=2))
    stream.write('\n')


def emit_report(table, estimates, path, fmt='csv'):
    """
    Write `table` to `path` as CSV (columns :data:`CSV_FIELDS`, header
    first) or as JSON with the config echo, the tool version and the
    threshold `estimates`. CSV reports carry rows only.

    :raises: :exc:`ReportError` when `path` cannot be written

    """
    if fmt not in ('csv', 'json'):
        raise ValidationError("unknown report format {!r}".format(fmt))
    estimates = list(estimates or ())
    try:
        with open(path, 'w') as stream:
            if fmt == 'csv':
                _write_csv(table, stream)
            else:
                _write_json(table, estimates, stream)
    except (IOError, OSError) as err:
        raise ReportError("cannot write report {}: {}".format(path, err))
    log.info("Wrote %s report with %s rows to %s", fmt, len(table), path)


def emit_gnuplot(table, path, m, epsilon):
    """ Write a whitespace separated data file of ``R`` against the mean
        success of every matcher at ``(m, epsilon)``.
    """
    matchers = table.config.matchers if table.config else \
        sorted(set(row.matcher for row in table))
    curves = dict((matcher, dict(table.mean_success(m, epsilon, matcher)))
                  for matcher in matchers)
    rates = sorted(set(r for curve in curves.values() for r in curve))
    try:
        with open(path, 'w') as stream:
            stream.write("# m={} epsilon={}\n".format(m, epsilon))
            stream.write("# R {}\n".format(' '.join(matchers)))
            for r in rates:
                values = [repr(curves[matcher].get(r, float('nan')))
                          for matcher in matchers]
                stream.write("{!r} {}\n".format(r, ' '.join(values)))
    except (IOError, OSError) as err:
        raise ReportError("cannot write plot data {}: {}".format(path, err))
    log.info("Wrote plot data for m=%s to %s", m, path)
