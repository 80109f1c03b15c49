"""Exception types raised across the package."""


class FedSimError(Exception):
    """Base class for all package errors."""


class IncongruentTrees(FedSimError, ValueError):
    """Two parameter trees differ in structure, keys or leaf shapes."""


class EmptyTermList(FedSimError, ValueError):
    pass


class NonFiniteError(FedSimError, FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class NonFiniteParams(NonFiniteError):
    """Server parameters became non-finite during a round."""

    def __init__(self, round_index: int, message: str = ""):
        self.round_index = round_index
        super().__init__(message or f"non-finite server parameters at round {round_index}")


class EmptyDataset(FedSimError, ValueError):
    pass


class NoBucketFits(FedSimError, ValueError):
    pass


class CohortTooLarge(FedSimError, ValueError):
    pass


class InvalidHyperparameter(FedSimError, ValueError):
    pass


class EmptyCohort(FedSimError, ValueError):
    pass


class ZeroTotalWeight(FedSimError, ValueError):
    pass


class ClientExecutionError(FedSimError, RuntimeError):
    """A client's init/step/final function raised; carries the client id."""

    def __init__(self, client_id: str, cause: BaseException):
        self.client_id = client_id
        self.cause = cause
        super().__init__(f"client {client_id!r} failed: {type(cause).__name__}: {cause}")


class InvalidSpec(FedSimError, ValueError):
    pass


class FormatError(FedSimError, ValueError):
    """A dataset or params file is malformed, truncated or of the wrong version."""


class ConfigError(FedSimError, ValueError):
    """An experiment config field is missing or invalid; ``field`` is its dotted path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
