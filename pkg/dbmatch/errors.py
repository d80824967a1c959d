"""
Exceptions raised by dbmatch.

Each one also derives from the closest builtin so callers that only know
about ``ValueError`` or ``IOError`` keep working.

"""


class DBMatchError(Exception):
    """ Base class for all dbmatch errors. """


class ValidationError(DBMatchError, ValueError):
    """ Invalid spec, database, configuration or argument. """


class ResourceCapError(ValidationError):
    """ A database would exceed the configured scalar cap. """


class OracleCapError(ValidationError):
    """ The MAP oracle was asked for more members than it accepts. """


class StationarityError(DBMatchError, RuntimeError):
    """ The stationary distribution of a block chain is not unique or the
        power iteration did not converge.

        :param str message: Reason
        :param float residual: Final max-norm residual, if known

    """
    def __init__(self, message, residual=None):
        super(StationarityError, self).__init__(message)
        self.residual = residual


class ReducibleChainError(StationarityError, ValidationError):
    """ A block chain has more or fewer than one closed class, so its
        kernel cannot define a stationary process.
    """


class UsageError(DBMatchError, ValueError):
    """ Bad command line arguments. """


class SweepRangeError(DBMatchError, ValueError):
    """ A sweep table does not hold enough rate values for an estimate. """


class PairFormatError(DBMatchError, IOError):
    """ A pair file could not be decoded. """


class VersionMismatchError(PairFormatError):
    """ A pair file was written by an unsupported format version. """


class TruncatedFileError(PairFormatError):
    """ A pair file ends before its declared sections do. """


class ChecksumError(PairFormatError):
    """ A pair file's trailing checksum does not match its contents. """


class ReportError(DBMatchError, IOError):
    """ A report could not be written. """
