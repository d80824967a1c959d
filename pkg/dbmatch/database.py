"""
Correlated databases
====================

A database is an ordered list of ``n`` entries of length ``m``. A labeled
database adds the labeling ``theta``: entry ``i`` belongs to member
``theta[i]``. A correlated pair holds two labeled databases whose entries for
the same member were drawn jointly from a :class:`JointProcessSpec`.

Pair files
----------

Little-endian binary layout::

    header     magic "DBMP", version u16, payload kind u8, reserved u8,
               seed u64, m u64, n u64, spec length u32
    spec       JSON blob
    entries    database 1 then database 2, n * m values each
               (u32 symbols for discrete specs, f64 for Gaussian)
    theta1     n x u32
    truth      tag "TRTH", length u32, theta2 as n x u32
    checksum   SHA-256 of everything above

"""
import csv
import struct
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from dbmatch import config
from dbmatch.errors import (ValidationError, ResourceCapError,
                            PairFormatError, VersionMismatchError,
                            TruncatedFileError, ChecksumError)
from dbmatch.process import JointProcessSpec, positive_int
from dbmatch.seeds import check_seed, child_rng


log = logging.getLogger(__name__)

MAGIC = b'DBMP'
TRUTH_TAG = b'TRTH'
FORMAT_VERSION = 1

HEADER = struct.Struct('<4sHBBQQQI')
SECTION = struct.Struct('<4sI')
CHECKSUM_SIZE = 32

# Payload kinds and their on-disk dtypes
SYMBOLS = 0
REALS = 1
PAYLOAD_DTYPES = {SYMBOLS: np.dtype('<u4'), REALS: np.dtype('<f8')}
LABEL_DTYPE = np.dtype('<u4')

# Members drawn per worker task
GENERATION_CHUNK = 256


def max_scalars():
    """ Return the cap on ``n * m`` for generated databases.

        Read from ``DBMATCH_MAX_SCALARS`` in the environment, then the
        ``dbmatch.max_scalars`` setting, defaulting to 10**9.
    """
    return config.as_int(config.env('DBMATCH_MAX_SCALARS', 10 ** 9),
                         'DBMATCH_MAX_SCALARS')


class UnlabeledDatabase(object):
    """ `n` entries of length `m`, stored in order.

        :param entries: Array of shape ``(n, m)``
        :param str spec_id: Id of the generating spec

    """
    def __init__(self, entries, spec_id=None):
        entries = np.array(entries)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ValidationError("entries must be a non-empty n x m array, "
                                  "got shape {}".format(entries.shape))
        entries.setflags(write=False)
        self.entries = entries
        self.spec_id = spec_id

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def m(self):
        return self.entries.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, index):
        return self.entries[index]

    def validate(self, spec, side):
        """ Check every entry against `spec`'s alphabet and minimum length.

            :param side: Coordinate the entries were drawn for, 1 or 2
        """
        spec.check_sequence(self.entries.ravel(), side)
        if self.m < spec.min_length():
            raise ValidationError("entry length {} is below {}".format(
                self.m, spec.min_length()))

    def __eq__(self, other):
        if not isinstance(other, UnlabeledDatabase):
            return NotImplemented
        return (self.spec_id == other.spec_id and
                self.entries.dtype == other.entries.dtype and
                self.entries.shape == other.entries.shape and
                self.entries.tobytes() == other.entries.tobytes())

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return "<UnlabeledDatabase n={} m={} spec={}>".format(
            self.n, self.m, self.spec_id)


def check_permutation(theta, n):
    """ Return `theta` as an int array after checking it is a bijection on
        ``range(n)``.
    """
    theta = np.array(theta, dtype=np.int64)
    if theta.shape != (n,) or \
            not np.array_equal(np.sort(theta), np.arange(n)):
        raise ValidationError("labeling is not a permutation of range({})"
                              .format(n))
    theta.setflags(write=False)
    return theta


class LabeledDatabase(object):
    """ An :class:`UnlabeledDatabase` plus its labeling.

        :param base: The entries
        :param theta: Permutation; ``theta[i]`` is the member of entry ``i``

    """
    def __init__(self, base, theta):
        if not isinstance(base, UnlabeledDatabase):
            base = UnlabeledDatabase(base)
        self.base = base
        self.theta = check_permutation(theta, base.n)

    entries = property(lambda self: self.base.entries)
    n = property(lambda self: self.base.n)
    m = property(lambda self: self.base.m)
    spec_id = property(lambda self: self.base.spec_id)

    def entry_of(self, member):
        """ Return the index of the entry belonging to `member`. """
        return int(np.flatnonzero(self.theta == member)[0])

    def __eq__(self, other):
        if not isinstance(other, LabeledDatabase):
            return NotImplemented
        return self.base == other.base and \
            np.array_equal(self.theta, other.theta)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return "<LabeledDatabase n={} m={} spec={}>".format(
            self.n, self.m, self.spec_id)


class CorrelatedPair(object):
    """ Two labeled databases whose matching entries were drawn jointly.

        :param db1: First labeled database
        :param db2: Second labeled database (its theta is the ground truth)
        :param spec: Generating :class:`JointProcessSpec`
        :param int seed: Root seed the pair was generated from

    """
    def __init__(self, db1, db2, spec, seed):
        if db1.n != db2.n or db1.m != db2.m:
            raise ValidationError("databases differ in shape: {}x{} vs {}x{}"
                                  .format(db1.n, db1.m, db2.n, db2.m))
        self.db1 = db1
        self.db2 = db2
        self.spec = spec
        self.seed = seed

    n = property(lambda self: self.db1.n)
    m = property(lambda self: self.db1.m)

    def __eq__(self, other):
        if not isinstance(other, CorrelatedPair):
            return NotImplemented
        return (self.db1 == other.db1 and self.db2 == other.db2 and
                self.spec == other.spec and self.seed == other.seed)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return "<CorrelatedPair n={} m={} spec={} seed={}>".format(
            self.n, self.m, self.spec.spec_id, self.seed)


class AttackView(object):
    """ What a matcher gets to see: the labeled first database, the entries
        of the second database, and the spec. Ground truth is withheld.
    """
    def __init__(self, db1, db2, spec, seed):
        self.db1 = db1
        self.db2 = db2
        self.spec = spec
        self.seed = seed


def _draw_members(spec, m, seed, start, stop):
    rngs = [child_rng(seed, 'member', member) for member in range(start, stop)]
    return spec.sample_many(m, rngs)


def generate_correlated_pair(spec, m, n, seed, identity_theta1=False,
                             workers=1):
    """
    Return a :class:`CorrelatedPair` of `n` members with entries of length
    `m`.

    Member ``v`` draws its entry pair from its own stream
    ``(seed, 'member', v)``, so a longer `m` extends entries without
    resampling their prefixes. Both labelings are uniform random
    permutations unless `identity_theta1` fixes the first one.

    :param spec: A :class:`JointProcessSpec`
    :param int m: Entry length
    :param int n: Number of members
    :param int seed: Root seed
    :param bool identity_theta1: Use the identity labeling for database 1
    :param int workers: Threads drawing members in parallel
    :raises: :exc:`ResourceCapError` if ``n * m`` exceeds the cap

    """
    seed = check_seed(seed)
    m = positive_int(m, 'm')
    n = positive_int(n, 'n')
    if m < spec.min_length():
        raise ValidationError("m={} is below the spec's minimum length {}"
                              .format(m, spec.min_length()))
    cap = max_scalars()
    if n * m > cap:
        raise ResourceCapError("n*m = {} exceeds the cap of {} scalar values "
                               "(set DBMATCH_MAX_SCALARS to raise it)".format(
                                   n * m, cap))

    log.info("Generating pair spec=%s m=%s n=%s seed=%s", spec.spec_id, m, n,
             seed)
    bounds = [(start, min(start + GENERATION_CHUNK, n))
              for start in range(0, n, GENERATION_CHUNK)]
    if workers and workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(
                lambda b: _draw_members(spec, m, seed, b[0], b[1]), bounds))
    else:
        chunks = [_draw_members(spec, m, seed, start, stop)
                  for start, stop in bounds]
    members1 = np.concatenate([chunk[0] for chunk in chunks])
    members2 = np.concatenate([chunk[1] for chunk in chunks])

    if identity_theta1:
        theta1 = np.arange(n)
    else:
        theta1 = child_rng(seed, 'theta1').permutation(n)
    theta2 = child_rng(seed, 'theta2').permutation(n)

    spec_id = spec.spec_id
    db1 = LabeledDatabase(UnlabeledDatabase(members1[theta1], spec_id), theta1)
    db2 = LabeledDatabase(UnlabeledDatabase(members2[theta2], spec_id), theta2)
    return CorrelatedPair(db1, db2, spec, seed)


def save_pair(pair, path):
    """ Write `pair` to `path` in the binary pair format. """
    kind = SYMBOLS if pair.spec.discrete else REALS
    dtype = PAYLOAD_DTYPES[kind]
    spec_blob = pair.spec.to_json(sort_keys=True).encode('utf-8')

    parts = [
            HEADER.pack(MAGIC, FORMAT_VERSION, kind, 0, pair.seed, pair.m,
                        pair.n, len(spec_blob)),
            spec_blob,
            pair.db1.entries.astype(dtype).tobytes(),
            pair.db2.entries.astype(dtype).tobytes(),
            pair.db1.theta.astype(LABEL_DTYPE).tobytes(),
            SECTION.pack(TRUTH_TAG, pair.n * LABEL_DTYPE.itemsize),
            pair.db2.theta.astype(LABEL_DTYPE).tobytes(),
            ]
    body = b''.join(parts)
    with open(path, 'wb') as stream:
        stream.write(body)
        stream.write(hashlib.sha256(body).digest())
    log.info("Saved pair to %s (%s bytes)", path, len(body) + CHECKSUM_SIZE)


class _PairReader(object):
    """ Checks and slices the sections of an in-memory pair file. """
    def __init__(self, data, path):
        self.data = data
        self.path = path
        if len(data) < HEADER.size:
            raise TruncatedFileError("{}: file ends inside the header"
                                     .format(path))
        (magic, version, kind, _, self.seed, self.m, self.n,
         spec_size) = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise PairFormatError("{}: not a pair file (magic {!r})".format(
                path, magic))
        if version != FORMAT_VERSION:
            raise VersionMismatchError("{}: format version {} is not "
                                       "supported (expected {})".format(
                                           path, version, FORMAT_VERSION))
        if kind not in PAYLOAD_DTYPES:
            raise PairFormatError("{}: unknown payload kind {}".format(
                path, kind))
        self.dtype = PAYLOAD_DTYPES[kind]

        entry_bytes = self.n * self.m * self.dtype.itemsize
        label_bytes = self.n * LABEL_DTYPE.itemsize
        self.offsets = {}
        offset = HEADER.size
        for name, size in (('spec', spec_size), ('entries1', entry_bytes),
                           ('entries2', entry_bytes), ('theta1', label_bytes),
                           ('truth_header', SECTION.size),
                           ('theta2', label_bytes)):
            self.offsets[name] = (offset, offset + size)
            offset += size
        expected = offset + CHECKSUM_SIZE
        if len(data) < expected:
            raise TruncatedFileError("{}: file is {} bytes, expected {}"
                                     .format(path, len(data), expected))
        if len(data) > expected:
            raise PairFormatError("{}: {} unexpected trailing bytes".format(
                path, len(data) - expected))
        if hashlib.sha256(data[:offset]).digest() != data[offset:]:
            raise ChecksumError("{}: checksum mismatch".format(path))

        tag, size = SECTION.unpack(self.section('truth_header'))
        if tag != TRUTH_TAG or size != label_bytes:
            raise PairFormatError("{}: malformed truth section".format(path))

    def section(self, name):
        start, stop = self.offsets[name]
        return self.data[start:stop]

    def spec(self):
        return JointProcessSpec.from_json(self.section('spec').decode('utf-8'))

    def entries(self, name, spec, side):
        values = np.frombuffer(self.section(name), dtype=self.dtype)
        values = values.reshape(self.n, self.m)
        values = values.astype(np.int64 if spec.discrete else np.float64)
        try:
            db = UnlabeledDatabase(values, spec.spec_id)
            db.validate(spec, side)
        except ValidationError as err:
            raise PairFormatError("{}: database {} does not fit its spec: {}"
                                  .format(self.path, side, err))
        return db

    def labels(self, name):
        return np.frombuffer(self.section(name), dtype=LABEL_DTYPE) \
            .astype(np.int64)


def _read_pair_file(path):
    with open(path, 'rb') as stream:
        return _PairReader(stream.read(), path)


def load_pair(path):
    """ Return the :class:`CorrelatedPair` stored at `path`, ground truth
        included.

        :raises: :exc:`VersionMismatchError`, :exc:`TruncatedFileError`,
                 :exc:`ChecksumError` or :exc:`PairFormatError`
    """
    reader = _read_pair_file(path)
    spec = reader.spec()
    db1 = LabeledDatabase(reader.entries('entries1', spec, 1),
                          reader.labels('theta1'))
    db2 = LabeledDatabase(reader.entries('entries2', spec, 2),
                          reader.labels('theta2'))
    return CorrelatedPair(db1, db2, spec, reader.seed)


def load_attack_view(path):
    """ Return an :class:`AttackView` of the pair at `path`; the truth
        section is checksummed but never decoded.
    """
    reader = _read_pair_file(path)
    spec = reader.spec()
    db1 = LabeledDatabase(reader.entries('entries1', spec, 1),
                          reader.labels('theta1'))
    return AttackView(db1, reader.entries('entries2', spec, 2), spec,
                      reader.seed)


def export_csv(pair, path):
    """ Write `pair` as CSV, one entry per row:
        ``database, index, member, u_0 .. u_{m-1}``.
    """
    with open(path, 'w') as stream:
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(['database', 'index', 'member'] +
                        ['u_{}'.format(t) for t in range(pair.m)])
        for number, db in ((1, pair.db1), (2, pair.db2)):
            for index, (member, entry) in enumerate(zip(db.theta.tolist(),
                                                        db.entries.tolist())):
                writer.writerow([number, index, member] + entry)
    log.info("Exported pair to %s", path)
