"""
Joint entry processes
=====================

A :class:`JointProcessSpec` describes how a pair of matching entries
``(u1, u2)`` is generated. Three variants exist:

* :class:`IIDDiscrete` - each coordinate pair drawn from a joint pmf.
* :class:`IIDGaussian` - each coordinate pair standard bivariate normal with
  correlation ``rho``.
* :class:`MarkovDiscrete` - the pair process is a stationary Markov chain of
  order ``l`` over pair symbols.

All logarithms are base 2; densities, entropy rates and mutual information
are in bits (per symbol for rates). Zero-probability observations give
``-inf`` rather than raising.

"""
import hashlib
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from pytool.json import as_json, from_json

from dbmatch import config
from dbmatch.errors import (ValidationError, StationarityError,
                            ReducibleChainError)
from dbmatch.seeds import child_rng


log = logging.getLogger(__name__)

LOG2E = np.log2(np.e)

# Tolerances for validating user supplied distributions
PMF_TOL = 1e-12
STATIONARY_CHECK_TOL = 1e-9


class EntropyReport(object):
    """ Entropy rates of a pair process, in bits per symbol.

        :param float h1: Entropy rate of the first coordinate process
        :param float h2: Entropy rate of the second coordinate process
        :param float h12: Joint entropy rate
        :param float mi: Mutual information rate, ``h1 + h2 - h12``
        :param str mode: ``'analytic'`` or ``'monte_carlo'``
        :param float stderr: Standard error of `mi` (0 for analytic)
        :param dict stderrs: Standard errors of ``h1``, ``h2``, ``h12``

    """
    def __init__(self, h1, h2, h12, mi, mode, stderr=0.0, stderrs=None):
        self.h1 = float(h1)
        self.h2 = float(h2)
        self.h12 = float(h12)
        self.mi = float(mi)
        self.mode = mode
        self.stderr = float(stderr)
        self.stderrs = stderrs or {'h1': 0.0, 'h2': 0.0, 'h12': 0.0}

    def to_dict(self):
        return {
                'h1': self.h1,
                'h2': self.h2,
                'h12': self.h12,
                'mi': self.mi,
                'mode': self.mode,
                'stderr': self.stderr,
                'stderrs': dict(self.stderrs),
                }

    def __repr__(self):
        return ("<EntropyReport {mode} h1={h1:.6f} h2={h2:.6f} "
                "h12={h12:.6f} mi={mi:.6f} stderr={stderr:.3g}>".format(
                    **self.to_dict()))


def _as_pmf(values, name, ndim=None, rows=False):
    """ Return `values` as a read-only float array after checking it is a
        probability mass function, or a stack of them when `rows` is set.
    """
    try:
        pmf = np.array(values, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("{} is not numeric".format(name))
    if ndim is not None and pmf.ndim != ndim:
        raise ValidationError("{} must have {} dimensions, got {}".format(
            name, ndim, pmf.ndim))
    if pmf.size == 0:
        raise ValidationError("{} is empty".format(name))
    if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
        raise ValidationError("{} has negative or non-finite entries".format(
            name))
    sums = pmf.sum(axis=-1) if rows else np.array([pmf.sum()])
    worst = np.max(np.abs(sums - 1.0))
    if worst > PMF_TOL:
        raise ValidationError("{} does not sum to 1 (off by {:.3g})".format(
            name, worst))
    pmf.setflags(write=False)
    return pmf


def positive_int(value, name):
    try:
        valid = not isinstance(value, bool) and int(value) == value and \
            value >= 1
    except (TypeError, ValueError):
        valid = False
    if not valid:
        raise ValidationError("{} must be a positive integer, got {!r}"
                              .format(name, value))
    return int(value)


def _inverse_cdf(cdf, uniforms):
    """ Map uniforms in [0, 1) to indices of the pmf with cumulative sums
        `cdf`. Zero-probability cells are never selected.
    """
    return np.searchsorted(cdf, uniforms * cdf[-1], side='right')


class JointProcessSpec(object):
    """ Base class for the generative model of a matching entry pair.

        Specs are immutable once constructed and can be shared between
        threads and processes.

    """
    variant = None
    discrete = True

    def to_dict(self):
        raise NotImplementedError

    def to_json(self, **kwargs):
        return as_json(self.to_dict(), **kwargs)

    @property
    def spec_id(self):
        """ Short content hash identifying this spec. """
        blob = as_json(self.to_dict(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(blob).hexdigest()[:12]

    @staticmethod
    def from_dict(data):
        """ Return the spec described by `data`, dispatching on its
            ``variant`` key.
        """
        if not isinstance(data, dict):
            raise ValidationError("spec must be a JSON object")
        variant = data.get('variant')
        cls = VARIANTS.get(variant)
        if cls is None:
            raise ValidationError("unknown spec variant {!r}, expected one "
                                  "of {}".format(variant, sorted(VARIANTS)))
        try:
            return cls._from_dict(data)
        except KeyError as err:
            raise ValidationError("spec {} is missing field {}".format(
                variant, err))

    @staticmethod
    def from_json(text):
        try:
            data = from_json(text)
        except ValueError as err:
            raise ValidationError("spec is not valid JSON: {}".format(err))
        return JointProcessSpec.from_dict(data)

    def __eq__(self, other):
        if not isinstance(other, JointProcessSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __hash__(self):
        return hash(self.spec_id)

    def __repr__(self):
        return "<{} {}>".format(type(self).__name__, self.spec_id)

    def min_length(self):
        """ Shortest entry length this spec can generate. """
        return 1

    def sample(self, m, rng):
        """ Return one draw ``(u1, u2)`` of the first `m` coordinates. """
        u1, u2 = self.sample_many(m, [rng])
        return u1[0], u2[0]

    def sample_many(self, m, rngs):
        """ Return arrays ``(U1, U2)`` of shape ``(len(rngs), m)``; row ``k``
            is the draw :meth:`sample` makes with ``rngs[k]``.

            Each row consumes its generator as a prefix-stable stream, so a
            longer draw extends a shorter one from the same seed.
        """
        raise NotImplementedError

    def check_sequence(self, u, side=None):
        """ Return `u` as a validated 1-d array. """
        u = np.asarray(u)
        if u.ndim != 1 or u.shape[0] < 1:
            raise ValidationError("entries must be non-empty vectors")
        return u

    def check_pair(self, u1, u2):
        u1 = self.check_sequence(u1, 1)
        u2 = self.check_sequence(u2, 2)
        if u1.shape != u2.shape:
            raise ValidationError("entry lengths differ: {} != {}".format(
                u1.shape[0], u2.shape[0]))
        if u1.shape[0] < self.min_length():
            raise ValidationError("entries shorter than {}".format(
                self.min_length()))
        return u1, u2

    def log_joint(self, u1, u2):
        raise NotImplementedError

    def log_marginal(self, side, u):
        raise NotImplementedError

    def pairwise_log_joint(self, U1, U2):
        """ Return the matrix ``W`` with ``W[j, i] = log_joint(U1[i], U2[j])``.

            Subclasses vectorize this; the default evaluates pair by pair.
        """
        out = np.empty((len(U2), len(U1)))
        for j in range(len(U2)):
            for i in range(len(U1)):
                out[j, i] = self.log_joint(U1[i], U2[j])
        return out

    def log_marginal_many(self, side, U):
        """ Return ``log_marginal(side, U[k])`` for every row of `U`. """
        return np.array([self.log_marginal(side, u) for u in U])

    def entropy_rates(self):
        raise NotImplementedError


class IIDDiscrete(JointProcessSpec):
    """ Coordinate pairs drawn independently from `joint_pmf`.

        :param joint_pmf: Matrix with rows indexed by symbols of ``U1`` and
                          columns by symbols of ``U2``
    """
    variant = 'iid_discrete'

    def __init__(self, joint_pmf):
        self.joint_pmf = _as_pmf(joint_pmf, 'joint_pmf', ndim=2)
        self.alphabet_sizes = self.joint_pmf.shape
        with np.errstate(divide='ignore'):
            self._log_table = np.log2(self.joint_pmf)
            self._log_marginals = (np.log2(self.joint_pmf.sum(axis=1)),
                                   np.log2(self.joint_pmf.sum(axis=0)))
        self._cdf = np.cumsum(self.joint_pmf.ravel())

    @classmethod
    def _from_dict(cls, data):
        spec = cls(data['joint_pmf'])
        sizes = (data.get('alphabet_size_1', spec.alphabet_sizes[0]),
                 data.get('alphabet_size_2', spec.alphabet_sizes[1]))
        if tuple(sizes) != spec.alphabet_sizes:
            raise ValidationError("alphabet sizes {} do not match joint_pmf "
                                  "shape {}".format(sizes,
                                                    spec.alphabet_sizes))
        return spec

    def to_dict(self):
        return {
                'variant': self.variant,
                'alphabet_size_1': self.alphabet_sizes[0],
                'alphabet_size_2': self.alphabet_sizes[1],
                'joint_pmf': self.joint_pmf.tolist(),
                }

    def check_sequence(self, u, side=None):
        u = super(IIDDiscrete, self).check_sequence(u, side)
        return _check_symbols(u, self.alphabet_sizes, side)

    def sample_many(self, m, rngs):
        m = positive_int(m, 'm')
        uniforms = np.array([rng.random(m) for rng in rngs]).reshape(-1, m)
        cells = _inverse_cdf(self._cdf, uniforms)
        return np.divmod(cells, self.alphabet_sizes[1])

    def log_joint(self, u1, u2):
        u1, u2 = self.check_pair(u1, u2)
        return float(self._log_table[u1, u2].sum())

    def log_marginal(self, side, u):
        u = self.check_sequence(u, _check_side(side))
        return float(self._log_marginals[side - 1][u].sum())

    def log_marginal_many(self, side, U):
        return self._log_marginals[_check_side(side) - 1][np.asarray(U)] \
            .sum(axis=1)

    def pairwise_log_joint(self, U1, U2):
        U1 = np.asarray(U1)
        U2 = np.asarray(U2)
        k1, k2 = self.alphabet_sizes
        out = np.zeros((U2.shape[0], U1.shape[0]))
        impossible = np.zeros(out.shape, dtype=bool)
        hot2 = [(U2 == b).astype(float) for b in range(k2)]
        for a in range(k1):
            hot1 = (U1 == a).astype(float).T
            for b in range(k2):
                weight = self._log_table[a, b]
                if weight == 0:
                    continue
                # counts[j, i] = #{t: U1[i, t] == a and U2[j, t] == b}
                counts = hot2[b].dot(hot1)
                if np.isfinite(weight):
                    out += weight * counts
                else:
                    impossible |= counts > 0
        out[impossible] = -np.inf
        return out

    def entropy_rates(self):
        pmf = self.joint_pmf
        p1 = pmf.sum(axis=1)
        p2 = pmf.sum(axis=0)
        h1 = stats.entropy(p1, base=2)
        h2 = stats.entropy(p2, base=2)
        h12 = stats.entropy(pmf.ravel(), base=2)
        mi = stats.entropy(pmf.ravel(), np.outer(p1, p2).ravel(), base=2)
        return EntropyReport(h1, h2, h12, mi, 'analytic')


class IIDGaussian(JointProcessSpec):
    """ Standard bivariate normal coordinate pairs with correlation `rho`.

        :param float rho: Correlation, strictly inside (-1, 1)
    """
    variant = 'iid_gaussian'
    discrete = False

    def __init__(self, rho):
        try:
            rho = float(rho)
        except (TypeError, ValueError):
            raise ValidationError("rho must be a number, got {!r}".format(rho))
        if not np.isfinite(rho) or abs(rho) >= 1:
            raise ValidationError("rho must lie in (-1, 1), got {!r}".format(
                rho))
        self.rho = rho
        self._var = 1.0 - rho * rho
        self._log_norm = -np.log2(2 * np.pi * np.sqrt(self._var))
        self._log_norm_marginal = -0.5 * np.log2(2 * np.pi)

    @classmethod
    def _from_dict(cls, data):
        return cls(data['rho'])

    def to_dict(self):
        return {'variant': self.variant, 'rho': self.rho}

    def check_sequence(self, u, side=None):
        u = super(IIDGaussian, self).check_sequence(u, side).astype(float)
        if not np.all(np.isfinite(u)):
            raise ValidationError("Gaussian entries must be finite")
        return u

    def sample_many(self, m, rngs):
        m = positive_int(m, 'm')
        z = np.array([rng.standard_normal((m, 2)) for rng in rngs])
        z = z.reshape(-1, m, 2)
        u1 = z[:, :, 0]
        u2 = self.rho * z[:, :, 0] + np.sqrt(self._var) * z[:, :, 1]
        return u1, u2

    def log_joint(self, u1, u2):
        u1, u2 = self.check_pair(u1, u2)
        quad = (u1 * u1 - 2 * self.rho * u1 * u2 + u2 * u2).sum()
        return float(len(u1) * self._log_norm -
                     LOG2E * quad / (2 * self._var))

    def log_marginal(self, side, u):
        _check_side(side)
        u = self.check_sequence(u, side)
        return float(len(u) * self._log_norm_marginal -
                     LOG2E * (u * u).sum() / 2)

    def log_marginal_many(self, side, U):
        _check_side(side)
        U = np.asarray(U, dtype=float)
        return U.shape[1] * self._log_norm_marginal - \
            LOG2E * (U * U).sum(axis=1) / 2

    def pairwise_log_joint(self, U1, U2):
        U1 = np.asarray(U1, dtype=float)
        U2 = np.asarray(U2, dtype=float)
        m = U1.shape[1]
        quad = (U1 * U1).sum(axis=1)[None, :] + \
            (U2 * U2).sum(axis=1)[:, None] - 2 * self.rho * U2.dot(U1.T)
        return m * self._log_norm - LOG2E * quad / (2 * self._var)

    def entropy_rates(self):
        h1 = 0.5 * np.log2(2 * np.pi * np.e)
        h12 = np.log2(2 * np.pi * np.e * np.sqrt(self._var))
        mi = -0.5 * np.log2(self._var)
        return EntropyReport(h1, h1, h12, mi, 'analytic')


class MarkovDiscrete(JointProcessSpec):
    """ Stationary order-`l` Markov chain over pair symbols.

        A pair ``(a, b)`` is encoded as ``a * k2 + b``. A block of ``l``
        pairs is encoded base ``k1 * k2`` with the oldest pair most
        significant. ``kernel[s, c]`` is the probability that pair ``c``
        follows block ``s``.

        :param int order_l: Markov order
        :param pair_alphabet_sizes: ``(k1, k2)``
        :param kernel: Row-stochastic matrix of shape ``(K ** l, K)`` with
                       ``K = k1 * k2``
        :param initial_block: pmf over blocks; must be stationary for the
                              kernel. Computed when omitted.
    """
    variant = 'markov_discrete'

    max_block_states = config.setting('dbmatch.max_block_states', 10 ** 4)

    def __init__(self, order_l, pair_alphabet_sizes, kernel,
                 initial_block=None):
        self.order_l = positive_int(order_l, 'order_l')
        if len(pair_alphabet_sizes) != 2:
            raise ValidationError("pair_alphabet_sizes must be (k1, k2)")
        k1, k2 = [positive_int(k, 'pair alphabet size')
                  for k in pair_alphabet_sizes]
        self.alphabet_sizes = (k1, k2)
        self.pair_states = k1 * k2
        self.block_states = self.pair_states ** self.order_l
        if self.block_states > self.max_block_states:
            raise ValidationError("block state space {} exceeds cap {}"
                                  .format(self.block_states,
                                          self.max_block_states))

        self.kernel = _check_kernel(kernel, self.order_l, self.alphabet_sizes)
        self._next = _next_blocks(self.block_states, self.pair_states)
        self._block_pairs = _block_digits(self.block_states, self.pair_states,
                                          self.order_l)
        self._powers = self.pair_states ** np.arange(self.order_l)[::-1]

        if initial_block is None:
            initial_block = stationary_block_distribution(
                    self.kernel, self.order_l, self.alphabet_sizes)
        self.initial_block = _as_pmf(initial_block, 'initial_block', ndim=1)
        if self.initial_block.shape != (self.block_states,):
            raise ValidationError("initial_block must have {} entries"
                                  .format(self.block_states))
        residual = np.max(np.abs(self.advance(self.initial_block) -
                                 self.initial_block))
        if residual > STATIONARY_CHECK_TOL:
            raise ValidationError("initial_block is not stationary for the "
                                  "kernel (residual {:.3g})".format(residual))

        with np.errstate(divide='ignore'):
            self._log_kernel = np.log2(self.kernel)
            self._log_initial = np.log2(self.initial_block)
        self._kernel_cdf = np.cumsum(self.kernel, axis=1)
        self._initial_cdf = np.cumsum(self.initial_block)
        self._marginal_kernels = {}

    @classmethod
    def _from_dict(cls, data):
        return cls(data['order_l'], data['pair_alphabet_sizes'],
                   data['kernel'], data.get('initial_block'))

    def to_dict(self):
        return {
                'variant': self.variant,
                'order_l': self.order_l,
                'pair_alphabet_sizes': list(self.alphabet_sizes),
                'kernel': self.kernel.tolist(),
                'initial_block': self.initial_block.tolist(),
                }

    def min_length(self):
        return self.order_l

    def advance(self, block_pmf):
        """ Return the block pmf one step after `block_pmf`. """
        mass = block_pmf[:, None] * self.kernel
        return np.bincount(self._next.ravel(), weights=mass.ravel(),
                           minlength=self.block_states)

    def check_sequence(self, u, side=None):
        u = super(MarkovDiscrete, self).check_sequence(u, side)
        return _check_symbols(u, self.alphabet_sizes, side)

    def sample_many(self, m, rngs):
        m = positive_int(m, 'm')
        if m < self.order_l:
            raise ValidationError("m={} is shorter than the Markov order {}"
                                  .format(m, self.order_l))
        steps = m - self.order_l
        uniforms = np.array([rng.random(steps + 1) for rng in rngs])
        uniforms = uniforms.reshape(-1, steps + 1)

        state = _inverse_cdf(self._initial_cdf, uniforms[:, 0])
        pairs = np.empty((uniforms.shape[0], m), dtype=np.int64)
        pairs[:, :self.order_l] = self._block_pairs[state]
        for t in range(steps):
            cdf = self._kernel_cdf[state]
            target = uniforms[:, t + 1] * cdf[:, -1]
            pair = (cdf <= target[:, None]).sum(axis=1)
            pairs[:, self.order_l + t] = pair
            state = self._next[state, pair]
        return np.divmod(pairs, self.alphabet_sizes[1])

    def _blocks(self, pairs):
        """ Block index of every window of `l` consecutive pairs, along the
            last axis.
        """
        windows = sliding_window_view(pairs, self.order_l, axis=-1)
        return windows.dot(self._powers)

    def _log_joint_pairs(self, pairs):
        blocks = self._blocks(pairs)
        steps = self._log_kernel[blocks[..., :-1], pairs[..., self.order_l:]]
        return self._log_initial[blocks[..., 0]] + steps.sum(axis=-1)

    def log_joint(self, u1, u2):
        u1, u2 = self.check_pair(u1, u2)
        return float(self._log_joint_pairs(u1 * self.alphabet_sizes[1] + u2))

    def pairwise_log_joint(self, U1, U2):
        U1 = np.asarray(U1, dtype=np.int64)
        U2 = np.asarray(U2, dtype=np.int64)
        out = np.empty((U2.shape[0], U1.shape[0]))
        for i in range(U1.shape[0]):
            pairs = U1[i][None, :] * self.alphabet_sizes[1] + U2
            out[:, i] = self._log_joint_pairs(pairs)
        return out

    def marginal_kernel(self, side):
        """ Return ``(projection, initial, kernel)`` of the side process when
            it is itself Markov of order `l`, else ``None``.

            The side process is Markov when the conditional law of its next
            symbol depends on the previous block only through the block's
            own side symbols.
        """
        side = _check_side(side)
        if side in self._marginal_kernels:
            return self._marginal_kernels[side]

        k1, k2 = self.alphabet_sizes
        k = self.alphabet_sizes[side - 1]
        cond = self.kernel.reshape(-1, k1, k2).sum(axis=3 - side)
        symbols = self._side_symbols(side, self._block_pairs)
        projection = symbols.dot(k ** np.arange(self.order_l)[::-1])

        reduced = np.full((k ** self.order_l, k), np.nan)
        lumpable = True
        for block in range(self.block_states):
            row = reduced[projection[block]]
            if np.isnan(row[0]):
                row[:] = cond[block]
            elif np.max(np.abs(row - cond[block])) > PMF_TOL:
                lumpable = False
                break

        result = None
        if lumpable:
            initial = np.bincount(projection, weights=self.initial_block,
                                  minlength=k ** self.order_l)
            # Side blocks that never occur keep an arbitrary valid row
            reduced[np.isnan(reduced[:, 0])] = 1.0 / k
            with np.errstate(divide='ignore'):
                result = (np.log2(initial), np.log2(reduced))
        self._marginal_kernels[side] = result
        return result

    def _side_symbols(self, side, pairs):
        k2 = self.alphabet_sizes[1]
        return pairs // k2 if side == 1 else pairs % k2

    def log_marginal(self, side, u):
        side = _check_side(side)
        u = self.check_sequence(u, side)
        if u.shape[0] < self.order_l:
            raise ValidationError("entries shorter than {}".format(
                self.order_l))

        reduced = self.marginal_kernel(side)
        if reduced is not None:
            log_initial, log_kernel = reduced
            k = self.alphabet_sizes[side - 1]
            windows = sliding_window_view(u, self.order_l)
            blocks = windows.dot(k ** np.arange(self.order_l)[::-1])
            return float(log_initial[blocks[0]] +
                         log_kernel[blocks[:-1], u[self.order_l:]].sum())
        return self._forward_log_marginal(side, u)

    def _forward_log_marginal(self, side, u):
        """ Forward algorithm over the hidden coordinate, rescaled at every
            step so the result stays in the log domain.
        """
        block_symbols = self._side_symbols(side, self._block_pairs)
        pair_symbols = self._side_symbols(side, np.arange(self.pair_states))

        alpha = self.initial_block * \
            np.all(block_symbols == u[:self.order_l], axis=1)
        total = alpha.sum()
        if total <= 0:
            return -np.inf
        alpha = alpha / total
        log_total = np.log2(total)
        for symbol in u[self.order_l:]:
            mass = alpha[:, None] * self.kernel * (pair_symbols == symbol)
            alpha = np.bincount(self._next.ravel(), weights=mass.ravel(),
                                minlength=self.block_states)
            total = alpha.sum()
            if total <= 0:
                return -np.inf
            alpha /= total
            log_total += np.log2(total)
        return float(log_total)

    def stationary(self):
        """ Return the unique stationary block pmf, raising
            :exc:`ReducibleChainError` when it is not unique.
        """
        return stationary_block_distribution(self.kernel, self.order_l,
                                             self.alphabet_sizes)

    def entropy_rates(self):
        pi = self.stationary()
        k1, k2 = self.alphabet_sizes
        cond = self.kernel.reshape(-1, k1, k2)
        p1 = cond.sum(axis=2)
        p2 = cond.sum(axis=1)
        h12 = pi.dot(stats.entropy(self.kernel, base=2, axis=1))
        h1 = pi.dot(stats.entropy(p1, base=2, axis=1))
        h2 = pi.dot(stats.entropy(p2, base=2, axis=1))
        product = (p1[:, :, None] * p2[:, None, :]).reshape(self.kernel.shape)
        mi = pi.dot(stats.entropy(self.kernel, product, base=2, axis=1))
        return EntropyReport(h1, h2, h12, mi, 'analytic')


VARIANTS = {
        IIDDiscrete.variant: IIDDiscrete,
        IIDGaussian.variant: IIDGaussian,
        MarkovDiscrete.variant: MarkovDiscrete,
        }


def _check_side(side):
    if side not in (1, 2):
        raise ValidationError("side must be 1 or 2, got {!r}".format(side))
    return side


def _check_symbols(u, sizes, side):
    if not np.issubdtype(u.dtype, np.integer):
        if not np.issubdtype(u.dtype, np.floating) or \
                np.any(u != np.round(u)):
            raise ValidationError("discrete entries must be integers")
        u = u.astype(np.int64)
    limit = sizes[side - 1] if side else min(sizes)
    if np.any(u < 0) or np.any(u >= limit):
        raise ValidationError("symbol outside alphabet of size {}".format(
            limit))
    return u


def _check_kernel(kernel, order_l, sizes):
    pair_states = sizes[0] * sizes[1]
    kernel = _as_pmf(kernel, 'kernel', ndim=2, rows=True)
    if kernel.shape != (pair_states ** order_l, pair_states):
        raise ValidationError("kernel must have shape {}, got {}".format(
            (pair_states ** order_l, pair_states), kernel.shape))
    return kernel


def _next_blocks(block_states, pair_states):
    """ ``next[s, c]`` is the block after appending pair `c` to block `s`. """
    return (np.arange(block_states)[:, None] * pair_states +
            np.arange(pair_states)[None, :]) % block_states


def _block_digits(block_states, pair_states, order_l):
    """ Pairs of every block, oldest first, shape ``(block_states, l)``. """
    powers = pair_states ** np.arange(order_l)[::-1]
    return (np.arange(block_states)[:, None] // powers) % pair_states


def stationary_block_distribution(kernel, order_l, pair_alphabet_sizes,
                                  tol=None, max_iter=None):
    """
    Return the unique stationary pmf over ``l``-blocks of pairs.

    The block chain must have exactly one closed communicating class. The
    fixed point is found by power iteration on the lazy chain
    ``(I + P) / 2``, which has the same fixed point and converges for
    periodic chains too.

    :param kernel: Row-stochastic matrix of shape ``(K ** l, K)``
    :param int order_l: Markov order
    :param pair_alphabet_sizes: ``(k1, k2)``
    :param float tol: Max-norm residual to stop at (default from
                      ``dbmatch.stationary_tol``)
    :param int max_iter: Iteration cap (default from
                         ``dbmatch.stationary_max_iter``)
    :raises: :exc:`ReducibleChainError` unless the chain has exactly one
             closed class, :exc:`StationarityError` if the iteration does
             not converge

    """
    if tol is None:
        tol = config.get('dbmatch.stationary_tol', 1e-12)
    if max_iter is None:
        max_iter = config.get('dbmatch.stationary_max_iter', 10 ** 6)

    order_l = positive_int(order_l, 'order_l')
    sizes = tuple(positive_int(k, 'pair alphabet size')
                  for k in pair_alphabet_sizes)
    kernel = _check_kernel(kernel, order_l, sizes)
    block_states, pair_states = kernel.shape[0], kernel.shape[1]
    nxt = _next_blocks(block_states, pair_states)

    rows, cols = np.nonzero(kernel)
    graph = csr_matrix((np.ones(len(rows)), (rows, nxt[rows, cols])),
                       shape=(block_states, block_states))
    count, labels = connected_components(graph, directed=True,
                                         connection='strong')
    leaving = np.zeros(count, dtype=bool)
    src, dst = labels[rows], labels[nxt[rows, cols]]
    leaving[src[src != dst]] = True
    closed = count - int(leaving.sum())
    if closed != 1:
        raise ReducibleChainError("stationary distribution is not unique: the "
                                  "block chain has {} closed classes"
                                  .format(closed))

    flat_next = nxt.ravel()
    pi = np.full(block_states, 1.0 / block_states)
    residual = np.inf
    for iteration in range(int(max_iter)):
        stepped = np.bincount(flat_next,
                              weights=(pi[:, None] * kernel).ravel(),
                              minlength=block_states)
        stepped = 0.5 * (pi + stepped)
        residual = np.max(np.abs(stepped - pi))
        pi = stepped
        if residual <= tol:
            log.debug("Stationary distribution after %s iterations",
                      iteration + 1)
            break
    else:
        raise StationarityError("power iteration did not converge in {} "
                                "iterations (residual {:.3g})".format(
                                    max_iter, residual), residual)
    return pi / pi.sum()


def sample_pair(spec, m, rng):
    """ Shortcut for :meth:`JointProcessSpec.sample`. """
    return spec.sample(m, rng)


def log_joint_density(spec, u1, u2):
    """ Return ``log2 f_m(u1, u2)``; ``-inf`` on zero-probability input. """
    return spec.log_joint(u1, u2)


def log_marginal_density(spec, side, u):
    """ Return ``log2 f_m(u)`` for coordinate process `side` (1 or 2). """
    return spec.log_marginal(side, u)


def pairwise_log_joint(spec, U1, U2):
    """ Shortcut for :meth:`JointProcessSpec.pairwise_log_joint`. """
    return spec.pairwise_log_joint(U1, U2)


def entropy_rates(spec):
    """ Return the analytic :class:`EntropyReport` of `spec`. """
    return spec.entropy_rates()


def estimate_entropy_rates(spec, m, trials, rng):
    """
    Return a Monte-Carlo :class:`EntropyReport` from `trials` sampled blocks
    of length `m`, averaging ``-(1/m) log2 f_m`` for the joint and both
    marginals.

    :param spec: A :class:`JointProcessSpec`
    :param int m: Block length
    :param int trials: Number of sampled blocks
    :param rng: :class:`numpy.random.Generator`

    """
    m = positive_int(m, 'm')
    trials = positive_int(trials, 'trials')
    samples = np.empty((trials, 3))
    for trial in range(trials):
        u1, u2 = spec.sample(m, rng)
        samples[trial] = (-spec.log_marginal(1, u1) / m,
                          -spec.log_marginal(2, u2) / m,
                          -spec.log_joint(u1, u2) / m)
    mi_samples = samples[:, 0] + samples[:, 1] - samples[:, 2]

    def stderr(values):
        if trials < 2:
            return 0.0
        return float(np.std(values, ddof=1) / np.sqrt(trials))

    means = samples.mean(axis=0)
    return EntropyReport(means[0], means[1], means[2], mi_samples.mean(),
                         'monte_carlo', stderr(mi_samples),
                         {'h1': stderr(samples[:, 0]),
                          'h2': stderr(samples[:, 1]),
                          'h12': stderr(samples[:, 2])})


def marginal_entropy_rates(spec):
    """
    Return the entropy rates ``(h1, h2)`` of the two coordinate processes,
    used for strict typicality.

    IID variants are analytic. For Markov specs the per-side rates of
    :func:`entropy_rates` are conditioned on the joint past, so the true
    marginal rates are estimated by a fixed-seed Monte-Carlo run sized by
    ``dbmatch.marginal_rate_block`` and ``dbmatch.marginal_rate_trials``.

    """
    if not isinstance(spec, MarkovDiscrete):
        report = spec.entropy_rates()
        return report.h1, report.h2

    cached = spec.__dict__.get('_marginal_rates')
    if cached is None:
        block = config.get('dbmatch.marginal_rate_block', 2000)
        trials = config.get('dbmatch.marginal_rate_trials', 50)
        log.info("Estimating marginal entropy rates for %s (m=%s, "
                 "trials=%s)", spec.spec_id, block, trials)
        report = estimate_entropy_rates(spec, max(block, spec.order_l),
                                        trials,
                                        child_rng(0, 'marginal-rates'))
        cached = spec._marginal_rates = (report.h1, report.h2)
    return cached


def load_spec(path):
    """ Return the spec stored as JSON at `path`. """
    with open(path) as stream:
        return JointProcessSpec.from_json(stream.read())


def save_spec(spec, path):
    """ Write `spec` as JSON to `path`. """
    with open(path, 'w') as stream:
        stream.write(spec.to_json(sort_keys=True, indent=2))
        stream.write('\n')


def binary_symmetric(crossover):
    """ Return the IID spec of a uniform bit seen through a binary symmetric
        channel with the given `crossover` probability.
    """
    stay = (1.0 - crossover) / 2
    flip = crossover / 2
    return IIDDiscrete([[stay, flip], [flip, stay]])


def correlated_increments(flip=0.02, both=0.1):
    """
    Return an order-1 pair chain on bits where each coordinate flips with
    probability ``flip + both`` per step and the two flips are correlated:
    both flip together with probability `both`.

    Each coordinate is Markov on its own and is uniform at every time, so
    all of the dependence between the coordinates is in their increments.

    """
    stay = 1.0 - 2 * flip - both
    if stay < 0:
        raise ValidationError("flip probabilities exceed 1")
    # Increment pmf over (z1, z2) in pair encoding z1 * 2 + z2
    increments = np.array([stay, flip, flip, both])
    kernel = np.empty((4, 4))
    for block in range(4):
        for pair in range(4):
            kernel[block, pair] = increments[block ^ pair]
    return MarkovDiscrete(1, (2, 2), kernel, np.full(4, 0.25))


def builtin_specs():
    """ Return the built-in example specs keyed by name. """
    return {
            'point_mass': IIDDiscrete([[1.0, 0.0], [0.0, 0.0]]),
            'uniform': IIDDiscrete([[0.25, 0.25], [0.25, 0.25]]),
            'bsc_0.1': binary_symmetric(0.1),
            'gaussian_0.9': IIDGaussian(0.9),
            'markov_increments': correlated_increments(),
            }
