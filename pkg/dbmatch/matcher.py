"""
Matchers
========

Reconstruct the labeling of the second database from the labeled first
database, the second database's entries and the known spec.

* :func:`typicality_match` - assign each entry the label of its unique
  jointly typical partner; everything else is filled at random from the
  unused labels.
* :func:`map_match` - exact maximum-likelihood bijection via a maximum
  weight assignment over pairwise log joint densities.
* :func:`random_match` - uniform random bijection baseline.

"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.optimize import linear_sum_assignment
from pytool.json import as_json

from dbmatch import config
from dbmatch.database import LabeledDatabase, UnlabeledDatabase
from dbmatch.errors import ValidationError, OracleCapError
from dbmatch.process import marginal_entropy_rates
from dbmatch.seeds import as_rng


log = logging.getLogger(__name__)

TYPICALITY = 'typicality'
MAP_ORACLE = 'map_oracle'
RANDOM = 'random'
MATCHERS = (TYPICALITY, MAP_ORACLE, RANDOM)

# Rows of the second database scanned per worker task
SCAN_CHUNK = 512


class MatchResult(object):
    """ A reconstructed labeling of the second database.

        :param theta_hat: ``theta_hat[j]`` is the member assigned to entry
                          ``j`` of the second database
        :param ambiguity_set: Indices filled at random
        :param str matcher_kind: One of :data:`MATCHERS`
        :param float epsilon: Typicality slack, ``None`` for other matchers

    """
    def __init__(self, theta_hat, ambiguity_set, matcher_kind, epsilon=None,
                 strict=False):
        theta_hat = np.asarray(theta_hat, dtype=np.int64)
        n = theta_hat.shape[0]
        if not np.array_equal(np.sort(theta_hat), np.arange(n)):
            raise ValidationError("reconstructed labeling is not a bijection")
        self.theta_hat = theta_hat
        self.ambiguity_set = frozenset(int(i) for i in ambiguity_set)
        if any(i < 0 or i >= n for i in self.ambiguity_set):
            raise ValidationError("ambiguity set index out of range")
        self.matcher_kind = matcher_kind
        self.epsilon = epsilon
        self.strict = strict
        self.per_entry_correct = None
        self.success_fraction = None

    @property
    def n(self):
        return self.theta_hat.shape[0]

    @property
    def ambiguity_fraction(self):
        return len(self.ambiguity_set) / float(self.n)

    def score(self, truth_theta2):
        """ Shortcut for :func:`success_fraction`. """
        return success_fraction(truth_theta2, self)

    def to_dict(self, verbose=False):
        out = {
                'theta_hat': self.theta_hat.tolist(),
                'ambiguity': sorted(self.ambiguity_set),
                'epsilon': self.epsilon,
                'matcher_kind': self.matcher_kind,
                'success_fraction': self.success_fraction,
                }
        if self.matcher_kind == TYPICALITY:
            out['strict'] = self.strict
        if verbose and self.per_entry_correct is not None:
            out['per_entry_correct'] = self.per_entry_correct.tolist()
        return out

    def to_json(self, verbose=False, **kwargs):
        return as_json(self.to_dict(verbose), **kwargs)

    def __repr__(self):
        return "<MatchResult {} n={} ambiguous={} success={}>".format(
            self.matcher_kind, self.n, len(self.ambiguity_set),
            self.success_fraction)


def _check_databases(db1, db2, spec=None):
    if not isinstance(db1, LabeledDatabase):
        raise ValidationError("the first database must be labeled")
    if isinstance(db2, LabeledDatabase):
        db2 = db2.base
    if not isinstance(db2, UnlabeledDatabase):
        db2 = UnlabeledDatabase(db2)
    if db1.n != db2.n or db1.m != db2.m:
        raise ValidationError("database dimensions differ: {}x{} vs {}x{}"
                              .format(db1.n, db1.m, db2.n, db2.m))
    if spec is not None:
        db1.base.validate(spec, 1)
        db2.validate(spec, 2)
    return db1, db2


def _check_epsilon(epsilon):
    if epsilon is None:
        epsilon = config.get('dbmatch.epsilon', 0.05)
    try:
        epsilon = float(epsilon)
    except (TypeError, ValueError):
        raise ValidationError("epsilon must be a number, got {!r}".format(
            epsilon))
    if not epsilon > 0 or not np.isfinite(epsilon):
        raise ValidationError("epsilon must be positive, got {!r}".format(
            epsilon))
    return epsilon


def _check_strict(strict):
    if strict is None:
        return bool(config.get('dbmatch.strict_typicality', False))
    return bool(strict)


def joint_entropy_rate(spec):
    """ Return the analytic joint entropy rate of `spec`, cached on it. """
    cached = spec.__dict__.get('_joint_rate')
    if cached is None:
        cached = spec._joint_rate = spec.entropy_rates().h12
    return cached


def is_jointly_typical(spec, epsilon, u1, u2, strict=None):
    """
    Return whether ``(u1, u2)`` is in the jointly typical set: the empirical
    rate ``-(1/m) log2 f_m(u1, u2)`` is within `epsilon` of the joint
    entropy rate. Strict mode also requires each entry to be typical for its
    own marginal process.

    :param spec: A :class:`JointProcessSpec`
    :param float epsilon: Typicality slack, positive
    :param u1: Entry of the first database
    :param u2: Entry of the second database
    :param bool strict: Require marginal typicality too (default from
                        ``dbmatch.strict_typicality``)

    """
    epsilon = _check_epsilon(epsilon)
    u1, u2 = spec.check_pair(u1, u2)
    m = float(u1.shape[0])
    rate = -spec.log_joint(u1, u2) / m
    if not abs(rate - joint_entropy_rate(spec)) <= epsilon:
        return False
    if not _check_strict(strict):
        return True

    h1, h2 = marginal_entropy_rates(spec)
    return (abs(-spec.log_marginal(1, u1) / m - h1) <= epsilon and
            abs(-spec.log_marginal(2, u2) / m - h2) <= epsilon)


def _typical_rows(spec, U1, U2, h12, epsilon):
    rates = -spec.pairwise_log_joint(U1, U2) / U1.shape[1]
    return np.abs(rates - h12) <= epsilon


def typical_matrix(spec, epsilon, U1, U2, strict=None, workers=1):
    """
    Return the boolean matrix ``T`` with ``T[j, i]`` true when
    ``(U1[i], U2[j])`` is jointly typical.

    Rows are computed in chunks, in parallel when `workers` is above one;
    chunks are merged in index order.

    """
    epsilon = _check_epsilon(epsilon)
    U1 = np.asarray(U1)
    U2 = np.asarray(U2)
    h12 = joint_entropy_rate(spec)
    bounds = [(start, min(start + SCAN_CHUNK, U2.shape[0]))
              for start in range(0, U2.shape[0], SCAN_CHUNK)]

    def scan(bound):
        return _typical_rows(spec, U1, U2[bound[0]:bound[1]], h12, epsilon)

    if workers and workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            typical = np.vstack(list(pool.map(scan, bounds)))
    else:
        typical = np.vstack([scan(bound) for bound in bounds])

    if _check_strict(strict):
        m = float(U1.shape[1])
        h1, h2 = marginal_entropy_rates(spec)
        typical1 = np.abs(-spec.log_marginal_many(1, U1) / m - h1) <= epsilon
        typical2 = np.abs(-spec.log_marginal_many(2, U2) / m - h2) <= epsilon
        typical &= typical2[:, None] & typical1[None, :]
    return typical


def typicality_match(db1, db2, spec, epsilon=None, rng=0, strict=None,
                     workers=None):
    """
    Return the typicality matching :class:`MatchResult`.

    Each entry ``j`` of the second database claims ``theta1[i]`` when ``i``
    is its only jointly typical partner. Entries with no or several typical
    partners are ambiguous, and so is every claimant of a label claimed more
    than once. Labels left unclaimed are dealt to the ambiguous entries
    uniformly at random, in index order.

    :param db1: :class:`LabeledDatabase`
    :param db2: :class:`UnlabeledDatabase` (a labeled one is accepted and
                its labels ignored)
    :param spec: A :class:`JointProcessSpec`
    :param float epsilon: Typicality slack (default ``dbmatch.epsilon``)
    :param rng: Generator or integer seed for the random fill
    :param bool strict: Require marginal typicality too
    :param int workers: Threads scanning the second database

    """
    db1, db2 = _check_databases(db1, db2, spec)
    epsilon = _check_epsilon(epsilon)
    strict = _check_strict(strict)
    if workers is None:
        workers = config.get('dbmatch.workers', 1)

    typical = typical_matrix(spec, epsilon, db1.entries, db2.entries, strict,
                             workers)
    n = db1.n
    unique = typical.sum(axis=1) == 1
    claims = np.where(unique, db1.theta[typical.argmax(axis=1)], -1)

    labels, counts = np.unique(claims[unique], return_counts=True)
    contested = labels[counts > 1]
    resolved = unique & ~np.isin(claims, contested)

    theta_hat = np.where(resolved, claims, -1)
    ambiguous = np.flatnonzero(~resolved)
    unused = np.setdiff1d(np.arange(n), theta_hat[resolved])
    theta_hat[ambiguous] = as_rng(rng).permutation(unused)

    log.debug("Typicality scan n=%s: %s unique, %s contested labels, %s "
              "ambiguous", n, int(unique.sum()), len(contested),
              len(ambiguous))
    return MatchResult(theta_hat, ambiguous, TYPICALITY, epsilon, strict)


def finite_weights(weights):
    """
    Return `weights` with ``-inf`` entries replaced by a finite value below
    any total weight reachable through finite entries only.

    """
    weights = np.array(weights, dtype=float)
    finite = np.isfinite(weights)
    if finite.all():
        return weights
    if not finite.any():
        return np.full(weights.shape, -1.0)
    lowest = weights[finite].min()
    spread = weights[finite].max() - lowest
    # One replaced entry costs more than any spread of the others can gain
    weights[~finite] = lowest - weights.shape[0] * spread - 1
    return weights


def max_weight_assignment(weights):
    """ Return ``(rows, cols)`` of a maximum weight perfect assignment on the
        square matrix `weights`. ``-inf`` marks forbidden pairs.
    """
    return linear_sum_assignment(finite_weights(weights), maximize=True)


def map_match(db1, db2, spec, oracle_cap=None):
    """
    Return the :class:`MatchResult` maximizing the summed log joint density
    of the assigned pairs over all bijections.

    :param int oracle_cap: Largest accepted ``n`` (default
                           ``dbmatch.oracle_cap``)
    :raises: :exc:`OracleCapError` when ``n`` is over the cap

    """
    db1, db2 = _check_databases(db1, db2, spec)
    if oracle_cap is None:
        oracle_cap = config.get('dbmatch.oracle_cap', 512)
    if db1.n > oracle_cap:
        raise OracleCapError("n={} exceeds the MAP oracle cap of {}; use the "
                             "typicality matcher".format(db1.n, oracle_cap))

    weights = spec.pairwise_log_joint(db1.entries, db2.entries)
    rows, cols = max_weight_assignment(weights)
    theta_hat = np.empty(db1.n, dtype=np.int64)
    theta_hat[rows] = db1.theta[cols]
    return MatchResult(theta_hat, (), MAP_ORACLE)


def random_match(db1, db2, rng=0):
    """ Return a uniform random bijection; every entry counts as ambiguous.
    """
    db1, db2 = _check_databases(db1, db2)
    theta_hat = as_rng(rng).permutation(db1.n)
    return MatchResult(theta_hat, range(db1.n), RANDOM)


def run_matcher(kind, db1, db2, spec, epsilon=None, rng=0, strict=None,
                oracle_cap=None, workers=None):
    """ Dispatch to the matcher named `kind`. """
    if kind == TYPICALITY:
        return typicality_match(db1, db2, spec, epsilon, rng, strict, workers)
    if kind == MAP_ORACLE:
        return map_match(db1, db2, spec, oracle_cap)
    if kind == RANDOM:
        return random_match(db1, db2, rng)
    raise ValidationError("unknown matcher {!r}, expected one of {}".format(
        kind, ', '.join(MATCHERS)))


def success_fraction(truth_theta2, result):
    """ Return the fraction of entries whose reconstructed label equals the
        true one, recording per-entry correctness on `result`.
    """
    truth = np.asarray(truth_theta2)
    if truth.shape != result.theta_hat.shape:
        raise ValidationError("truth has {} labels, result has {}".format(
            truth.shape[0] if truth.ndim else 0, result.n))
    result.per_entry_correct = result.theta_hat == truth
    result.success_fraction = float(result.per_entry_correct.mean())
    return result.success_fraction
