"""
Child seed derivation.

Every random stream is derived from ``(root seed, stream tag, indices...)``
so generation is reproducible and can be split across workers without
sharing a sequential generator.

"""
import zlib

import numpy as np

from dbmatch.errors import ValidationError


def _tag_code(tag):
    return zlib.crc32(tag.encode('utf-8')) & 0xffffffff


def check_seed(seed):
    """ Return `seed` as an int, raising if it is not a non-negative
        integer.
    """
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValidationError("seed must be an integer, got {!r}".format(seed))
    if seed < 0:
        raise ValidationError("seed must be non-negative, got {}".format(seed))
    return int(seed)


def seed_sequence(root_seed, tag, *indices):
    """ Return the :class:`numpy.random.SeedSequence` for one stream.

        :param int root_seed: Root seed
        :param str tag: Stream tag, e.g. ``'member'``
        :param indices: Stream indices within the tag

    """
    entropy = [check_seed(root_seed), _tag_code(tag)]
    entropy.extend(int(index) for index in indices)
    return np.random.SeedSequence(entropy)


def derive_seed(root_seed, tag, *indices):
    """ Return a derived integer seed, suitable as another root seed. """
    state = seed_sequence(root_seed, tag, *indices).generate_state(
            2, np.uint32)
    # Keep it within 63 bits so it survives JSON and CSV untouched
    return (int(state[0]) << 31) | (int(state[1]) >> 1)


def child_rng(root_seed, tag, *indices):
    """ Return a :class:`numpy.random.Generator` for one stream. """
    return np.random.default_rng(seed_sequence(root_seed, tag, *indices))


def as_rng(rng):
    """ Return `rng` as a generator; integers are taken as root seeds. """
    if isinstance(rng, np.random.Generator):
        return rng
    return child_rng(check_seed(rng), 'root')
