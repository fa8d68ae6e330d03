"""Exception hierarchy shared by every module."""


class CompetEvoError(Exception):
    """Base class for all package errors."""


class InvalidSpeciesError(CompetEvoError, ValueError):
    pass


class DimensionError(CompetEvoError, ValueError):
    pass


class InvalidValueError(CompetEvoError, ValueError):
    pass


class InvalidMorphError(CompetEvoError, ValueError):
    pass


class ContractViolation(CompetEvoError, RuntimeError):
    """An operation was called outside its precondition."""


class NumericalError(CompetEvoError, ArithmeticError):
    pass


class ConfigError(CompetEvoError, ValueError):
    pass


class CheckpointError(CompetEvoError, OSError):
    pass


class PolicyLookupError(CompetEvoError, LookupError):
    pass
