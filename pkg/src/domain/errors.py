class RSPError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(RSPError):
    """Invalid experiment configuration or unreadable input file."""


# Interaction matrix

class NegativeEntry(RSPError, ValueError):
    pass


class ColumnSumViolation(RSPError, ValueError):
    pass


class NotIrreducible(RSPError, ValueError):
    pass


class NoConvergence(RSPError, ArithmeticError):
    pass


# Reinforcement sequences

class UnknownTail(RSPError, ValueError):
    """Raised when a custom sequence has no declared asymptotic family."""


class UnknownFamily(RSPError, ValueError):
    pass


class ZeroDenominator(RSPError, ZeroDivisionError):
    pass


# Simulation

class InvalidInitialCondition(RSPError, ValueError):
    pass


class HorizonNotAfterSnapshot(RSPError, ValueError):
    pass


InvalidHorizon = HorizonNotAfterSnapshot


# Regime classification

class OutOfTable(RSPError, ValueError):
    pass


# Estimation

class NegativeTail(RSPError, ValueError):
    pass


class DivergentTail(RSPError, ArithmeticError):
    pass


class DivergentMemory(RSPError, ArithmeticError):
    pass


# Confidence intervals

class AllWeightsZero(RSPError, ValueError):
    pass


class LengthMismatch(RSPError, ValueError):
    pass


class MissingRecords(RSPError, ValueError):
    pass
