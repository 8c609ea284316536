"""Exception taxonomy shared across the toolkit.

Three families, mirrored by the CLI exit codes: ConfigError for bad flags or
hyperparameters (exit 1), DataError for malformed or mismatched data (exit 2),
NumericalError for runaway numerics (exit 3).
"""


class ConfigError(ValueError):
    """A caller-supplied configuration value is invalid."""


class DataError(ValueError):
    """Input data violates a structural precondition."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed to produce finite results."""


# dataset --------------------------------------------------------------

class EmptyDataset(DataError):
    pass


class RaggedRow(DataError):
    """A CSV row has a different column count than the first row."""


class NonNumeric(DataError):
    """A CSV cell could not be parsed as a number."""


class BadFractions(ConfigError):
    pass


class BadK(ConfigError):
    pass


class BadSpec(ConfigError):
    pass


# preprocess -----------------------------------------------------------

class TooFewSamples(DataError):
    pass


class DimMismatch(DataError):
    """Feature dimension differs from what the fitted object expects."""


# classifiers ----------------------------------------------------------

class BadHyperparams(ConfigError):
    pass


# feature extractor ----------------------------------------------------

class BadArch(ConfigError):
    pass


class Divergence(NumericalError):
    """Training loss became non-finite. Carries the offending epoch."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


# cpc ------------------------------------------------------------------

class LengthMismatch(DataError):
    pass


class EmptyPartition(DataError):
    """Both subspaces are empty; nothing to fit."""


class DegenerateModel(DataError):
    """The model has an empty subspace; use the degenerate routing path."""


# harness --------------------------------------------------------------

class LabelOutOfRange(DataError):
    pass
