"""Exception and warning types shared across the package."""


class OrbitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OrbitError, ValueError):
    """Invalid parameter or configuration value."""


class ContractViolation(OrbitError, ValueError):
    """A caller broke an operation's precondition."""


class BudgetError(OrbitError):
    """More pilot calls than the declared upper budget."""


class ProtocolError(OrbitError):
    """Calls arrived in an order the object does not allow."""


class InvalidTailError(OrbitError, ValueError):
    """Tail function is not a valid survival function."""


class AmplitudeError(InvalidTailError):
    """Bump amplitude too large: the perturbed tail stopped being monotone."""


class ConstructionError(OrbitError):
    """A numerical construction step failed."""


class ConvergenceError(OrbitError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NoDataError(OrbitError):
    """A local fit found no samples in its window."""


class NumericalError(OrbitError, ArithmeticError):
    """Numerical breakdown (loss of definiteness, inconsistent oracle, ...)."""


class GeneratorFailure(OrbitError):
    """A refinement generator raised; carries the owning bin."""

    def __init__(self, bin_index, cause):
        super().__init__(f"refinement generator failed in bin {bin_index}: {cause}")
        self.bin_index = bin_index
        self.cause = cause


class AmbiguityWarning(UserWarning):
    """Revenue maximiser is not unique to the requested tolerance."""


class RepetitionError(OrbitError):
    """A module error raised inside one repetition of an experiment."""

    def __init__(self, repetition, T, cause, round_index=None):
        where = f"repetition {repetition}, T={T}"
        if round_index is not None:
            where += f", round {round_index}"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.repetition = repetition
        self.T = T
        self.round_index = round_index
        self.cause = cause
