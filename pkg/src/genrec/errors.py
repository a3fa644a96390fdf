"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError and
FormatError -> 2, NumericsAbort -> 3.
"""


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class UnsupportedOpError(RuntimeError):
    """The computation graph contains a node outside the closed primitive set."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned different values."""


class ConfigError(ValueError):
    """Invalid or unknown configuration keys/values."""


class DataError(ValueError):
    """Problems with input data (unreadable, empty, fully filtered out)."""


class EmptyInputError(DataError):
    """Input contained no usable records."""


class FormatError(ValueError):
    """A serialized container (checkpoint, dataset cache) is invalid."""


class NumericsAbort(RuntimeError):
    """Training hit a non-finite loss; carries diagnostics for the post-mortem."""

    def __init__(self, message: str, *, epoch: int, step: int, batch_uids: list[int],
                 loss_history: list[float]):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.batch_uids = batch_uids
        self.loss_history = loss_history
