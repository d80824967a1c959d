"""
Tests for dbmatch.matcher
"""
import itertools

import mock
import numpy as np
from pytool.json import from_json
from nose.tools import (eq_, ok_, raises, assert_raises, assert_less,
                        assert_almost_equal)

from dbmatch import config
from dbmatch.database import (UnlabeledDatabase, LabeledDatabase,
                              generate_correlated_pair)
from dbmatch.errors import ValidationError, OracleCapError
from dbmatch.matcher import (MatchResult, TYPICALITY, MAP_ORACLE, RANDOM,
                             is_jointly_typical, typical_matrix,
                             typicality_match, map_match, random_match,
                             run_matcher, success_fraction, finite_weights,
                             max_weight_assignment)
from dbmatch.process import (IIDDiscrete, IIDGaussian, binary_symmetric,
                             correlated_increments, builtin_specs)
from dbmatch.seeds import child_rng


POINT_MASS = builtin_specs()['point_mass']


def _labeled(entries, theta):
    return LabeledDatabase(UnlabeledDatabase(entries), theta)


def _bijection(theta):
    return sorted(theta.tolist()) == list(range(len(theta)))


def test_point_mass_zeros_are_typical():
    u = np.zeros(10, dtype=int)
    for epsilon in (1e-6, 0.01, 1.0):
        ok_(is_jointly_typical(POINT_MASS, epsilon, u, u))


def test_uniform_pmf_everything_is_typical():
    spec = builtin_specs()['uniform']
    rng = np.random.default_rng(0)
    for _ in range(20):
        u1, u2 = rng.integers(0, 2, (2, 30))
        ok_(is_jointly_typical(spec, 0.001, u1, u2))


def test_bsc_all_zeros_is_not_typical():
    u = np.zeros(100, dtype=int)
    ok_(not is_jointly_typical(binary_symmetric(0.1), 0.05, u, u))
    ok_(is_jointly_typical(binary_symmetric(0.1), 0.35, u, u))


def test_zero_density_is_not_typical():
    ok_(not is_jointly_typical(POINT_MASS, 10.0, [0, 1], [0, 0]))


def test_epsilon_must_be_positive():
    u = np.zeros(3, dtype=int)
    assert_raises(ValidationError, is_jointly_typical, POINT_MASS, 0, u, u)
    assert_raises(ValidationError, is_jointly_typical, POINT_MASS, -1, u, u)
    assert_raises(ValidationError, is_jointly_typical, POINT_MASS, 'x', u, u)


def test_strict_typicality_checks_marginals():
    # Joint rate is exactly h12 = 1.5, but u2 is far from its marginal rate
    spec = IIDDiscrete([[0.25, 0.25], [0.5, 0.0]])
    u1 = [0, 1, 0, 1]
    u2 = [0, 0, 0, 0]
    ok_(is_jointly_typical(spec, 0.05, u1, u2))
    ok_(not is_jointly_typical(spec, 0.05, u1, u2, strict=True))
    with mock.patch.dict(config.Config().settings,
                         {'dbmatch.strict_typicality': True}):
        ok_(not is_jointly_typical(spec, 0.05, u1, u2))


def test_matching_pairs_are_typical():
    for name, spec in builtin_specs().items():
        U1, U2 = spec.sample_many(2000, [child_rng(21, name, k)
                                         for k in range(500)])
        typical = [is_jointly_typical(spec, 0.1, U1[k], U2[k])
                   for k in range(500)]
        ok_(np.mean(typical) >= 0.95, name)


def test_independent_pairs_are_rarely_typical():
    spec = binary_symmetric(0.1)
    m, epsilon = 200, 0.05
    U1, _ = spec.sample_many(m, [child_rng(5, 'a', k) for k in range(317)])
    _, U2 = spec.sample_many(m, [child_rng(5, 'b', k) for k in range(317)])
    frequency = typical_matrix(spec, epsilon, U1, U2).mean()
    mi = spec.entropy_rates().mi
    ok_(frequency <= 10 * 2 ** (-m * (mi - 3 * epsilon)))


def test_typical_matrix_ignores_worker_count():
    spec = IIDGaussian(0.8)
    U1, U2 = spec.sample_many(40, [child_rng(2, 'w', k) for k in range(9)])
    serial = typical_matrix(spec, 0.2, U1, U2)
    with mock.patch('dbmatch.matcher.SCAN_CHUNK', 2):
        parallel = typical_matrix(spec, 0.2, U1, U2, workers=3)
    ok_(np.array_equal(serial, parallel))
    for j in range(9):
        for i in range(9):
            eq_(serial[j, i], is_jointly_typical(spec, 0.2, U1[i], U2[j]))


def test_single_member_is_forced():
    db1 = _labeled([[0, 1, 1]], [0])
    db2 = UnlabeledDatabase([[1, 1, 1]])
    result = typicality_match(db1, db2, binary_symmetric(0.1), 0.01)
    eq_(result.theta_hat.tolist(), [0])
    eq_(success_fraction([0], result), 1.0)


def test_point_mass_is_all_ambiguous():
    pair = generate_correlated_pair(POINT_MASS, 5, 3, 0)
    total = 0.0
    for seed in range(300):
        result = typicality_match(pair.db1, pair.db2, POINT_MASS, 0.01,
                                  rng=seed)
        eq_(result.ambiguity_set, frozenset([0, 1, 2]))
        eq_(result.ambiguity_fraction, 1.0)
        ok_(_bijection(result.theta_hat))
        total += success_fraction(pair.db2.theta, result)
    assert_less(abs(total / 300 - 1.0 / 3), 0.07)


def test_contested_labels_are_demoted():
    db1 = _labeled([[0, 0], [1, 1], [1, 0]], [2, 0, 1])
    db2 = UnlabeledDatabase([[0, 0], [0, 0], [1, 1]])
    result = typicality_match(db1, db2, POINT_MASS, 0.01, rng=3)
    eq_(result.ambiguity_set, frozenset([0, 1, 2]))
    ok_(_bijection(result.theta_hat))


def test_unique_claims_are_kept():
    db1 = _labeled([[0, 0], [1, 1], [1, 0]], [2, 0, 1])
    db2 = UnlabeledDatabase([[1, 1], [0, 0], [1, 1]])
    result = typicality_match(db1, db2, POINT_MASS, 0.01, rng=3)
    eq_(result.ambiguity_set, frozenset([0, 2]))
    eq_(result.theta_hat[1], 2)
    eq_(sorted(result.theta_hat[[0, 2]].tolist()), [0, 1])


def test_ambiguity_fill_is_seeded():
    pair = generate_correlated_pair(POINT_MASS, 3, 8, 1)
    first = typicality_match(pair.db1, pair.db2, POINT_MASS, rng=5)
    again = typicality_match(pair.db1, pair.db2, POINT_MASS,
                             rng=child_rng(5, 'root'))
    eq_(first.theta_hat.tolist(), again.theta_hat.tolist())


def test_typicality_scan_is_storage_order_invariant():
    spec = binary_symmetric(0.1)
    pair = generate_correlated_pair(spec, 60, 12, 9)
    perm = np.random.default_rng(1).permutation(12)
    shuffled = _labeled(pair.db1.entries[perm], pair.db1.theta[perm])
    first = typicality_match(pair.db1, pair.db2, spec, 0.1, rng=0)
    second = typicality_match(shuffled, pair.db2, spec, 0.1, rng=0)
    eq_(first.ambiguity_set, second.ambiguity_set)
    resolved = [j for j in range(12) if j not in first.ambiguity_set]
    eq_(first.theta_hat[resolved].tolist(),
        second.theta_hat[resolved].tolist())


def test_typicality_succeeds_far_below_capacity():
    spec = binary_symmetric(0.05)
    typicality, oracle = [], []
    for trial in range(100):
        pair = generate_correlated_pair(spec, 2000, 16, trial)
        typicality.append(success_fraction(
            pair.db2.theta,
            typicality_match(pair.db1, pair.db2, spec, 0.05, rng=trial)))
        oracle.append(success_fraction(
            pair.db2.theta, map_match(pair.db1, pair.db2, spec)))
    ok_(np.mean(typicality) >= 0.99)
    ok_(np.mean(oracle) >= np.mean(typicality))


def test_strict_matching_runs():
    spec = correlated_increments()
    pair = generate_correlated_pair(spec, 400, 6, 2)
    with mock.patch('dbmatch.matcher.marginal_entropy_rates',
                    return_value=(0.5294, 0.5294)):
        result = typicality_match(pair.db1, pair.db2, spec, 0.15, rng=0,
                                  strict=True)
    ok_(result.strict)
    ok_(_bijection(result.theta_hat))


@raises(ValidationError)
def test_dimension_mismatch():
    db1 = _labeled([[0, 0], [1, 1]], [0, 1])
    typicality_match(db1, UnlabeledDatabase([[0, 0, 0], [1, 1, 1]]),
                     binary_symmetric(0.1))


@raises(ValidationError)
def test_first_database_must_be_labeled():
    db = UnlabeledDatabase([[0, 0]])
    map_match(db, db, binary_symmetric(0.1))


def test_map_single_member():
    db1 = _labeled([[1, 0]], [0])
    result = map_match(db1, UnlabeledDatabase([[0, 1]]), POINT_MASS)
    eq_(result.theta_hat.tolist(), [0])
    eq_(result.ambiguity_set, frozenset())


def test_map_hand_built_instance():
    weights = np.array([[1.0, 5.0, 2.0],
                        [4.0, 1.0, 1.0],
                        [2.0, 2.0, 6.0]])
    rows, cols = max_weight_assignment(weights)
    eq_(dict(zip(rows.tolist(), cols.tolist())), {0: 1, 1: 0, 2: 2})


def test_map_matches_exhaustive_search():
    rng = np.random.default_rng(12)
    for n in range(1, 7):
        perms = np.array(list(itertools.permutations(range(n))))
        for _ in range(1000):
            weights = rng.normal(size=(n, n))
            weights[rng.random((n, n)) < 0.2] = -np.inf
            best = weights[np.arange(n), perms].sum(axis=1).max()
            rows, cols = max_weight_assignment(weights)
            total = weights[rows, cols].sum()
            if np.isfinite(best):
                assert_almost_equal(total, best, places=9)


def test_finite_weights():
    weights = finite_weights([[0.0, -np.inf], [-2.0, -1.0]])
    ok_(np.all(np.isfinite(weights)))
    eq_(weights[0, 1], -2.0 - 2 * 2.0 - 1)
    eq_(finite_weights([[-np.inf]]).tolist(), [[-1.0]])


def test_map_recovers_labels():
    spec = IIDGaussian(0.95)
    pair = generate_correlated_pair(spec, 50, 20, 4)
    result = map_match(pair.db1, pair.db2, spec)
    eq_(success_fraction(pair.db2.theta, result), 1.0)
    eq_(result.matcher_kind, MAP_ORACLE)


def test_map_oracle_cap():
    pair = generate_correlated_pair(POINT_MASS, 2, 5, 0)
    assert_raises(OracleCapError, map_match, pair.db1, pair.db2, POINT_MASS,
                  oracle_cap=4)
    with mock.patch.dict(config.Config().settings, {'dbmatch.oracle_cap': 4}):
        with assert_raises(OracleCapError) as context:
            map_match(pair.db1, pair.db2, POINT_MASS)
    ok_('typicality' in str(context.exception))


def test_random_match():
    pair = generate_correlated_pair(POINT_MASS, 2, 6, 0)
    result = random_match(pair.db1, pair.db2, 3)
    ok_(_bijection(result.theta_hat))
    eq_(result.ambiguity_fraction, 1.0)
    eq_(result.matcher_kind, RANDOM)


def test_random_permutation_expectation():
    truth = np.array([3, 0, 4, 1, 2])
    scores = [success_fraction(truth, MatchResult(perm, (), RANDOM))
              for perm in itertools.permutations(range(5))]
    eq_(len(scores), 120)
    assert_almost_equal(np.mean(scores), 0.2, places=12)
    eq_(sorted(set(scores)), [0.0, 0.2, 0.4, 0.6, 1.0])


def test_success_fraction():
    truth = [2, 0, 3, 1]
    result = MatchResult(truth, (), MAP_ORACLE)
    eq_(success_fraction(truth, result), 1.0)
    eq_(result.per_entry_correct.tolist(), [True] * 4)
    swapped = MatchResult([0, 2, 3, 1], (), MAP_ORACLE)
    eq_(success_fraction(truth, swapped), 0.5)
    assert_raises(ValidationError, success_fraction, [0, 1, 2], swapped)


def test_match_result_must_be_bijection():
    assert_raises(ValidationError, MatchResult, [0, 0, 1], (), RANDOM)
    assert_raises(ValidationError, MatchResult, [0, 1], [5], RANDOM)


def test_match_result_json():
    result = MatchResult([1, 0], [1], TYPICALITY, 0.05)
    success_fraction([1, 0], result)
    data = from_json(result.to_json())
    eq_(data['theta_hat'], [1, 0])
    eq_(data['ambiguity'], [1])
    eq_(data['epsilon'], 0.05)
    eq_(data['success_fraction'], 1.0)
    ok_('per_entry_correct' not in data)
    eq_(from_json(result.to_json(verbose=True))['per_entry_correct'],
        [True, True])


def test_run_matcher_dispatch():
    pair = generate_correlated_pair(POINT_MASS, 2, 4, 0)
    for kind in (TYPICALITY, MAP_ORACLE, RANDOM):
        eq_(run_matcher(kind, pair.db1, pair.db2, POINT_MASS).matcher_kind,
            kind)
    assert_raises(ValidationError, run_matcher, 'greedy', pair.db1,
                  pair.db2, POINT_MASS)


def test_matchers_reject_symbols_outside_alphabet():
    db1 = _labeled([[0, 1], [1, 1]], [1, 0])
    db2 = UnlabeledDatabase([[0, 7], [1, 0]])
    spec = binary_symmetric(0.1)
    assert_raises(ValidationError, map_match, db1, db2, spec)
    assert_raises(ValidationError, typicality_match, db1, db2, spec)
    assert_raises(ValidationError, map_match,
                  _labeled([[0, 3], [1, 1]], [1, 0]),
                  UnlabeledDatabase([[0, 1], [1, 0]]), spec)
