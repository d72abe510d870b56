"""
multiFAMM exception hierarchy

Each family carries the exit code the command line returns for it.
"""


class FammError(Exception):
    """Base class for every error raised by the package"""
    exit_code = 1


class ConfigError(FammError):
    """Invalid or unknown configuration"""
    exit_code = 2


class DataError(FammError):
    """Malformed, inconsistent or insufficient input data"""
    exit_code = 3


class DomainError(DataError):
    """Evaluation point or time stamp outside the supported domain"""


class NumericError(FammError):
    """Numerical failure during fitting"""
    exit_code = 4


class SingularSystemError(NumericError):
    """Penalized normal equations could not be factorized"""


class RankDeficiencyError(NumericError):
    """Unpenalized part of a design is not identifiable"""
