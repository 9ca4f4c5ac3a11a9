"""Exception hierarchy.

Three top-level categories map onto the CLI exit codes: ``ConfigError`` (2),
``DataError`` (3) and ``NumericalError`` (4).
"""

from __future__ import annotations


class OTDistillError(Exception):
    category = "Error"


class ConfigError(OTDistillError):
    category = "ConfigInvalid"


class DataError(OTDistillError):
    category = "DataError"


class NumericalError(OTDistillError):
    category = "NumericalFailure"


# -- data ------------------------------------------------------------------

class DimensionMismatch(DataError):
    pass


class MissingLabels(DataError):
    pass


class ZeroVarianceFeature(DataError):
    def __init__(self, index: int):
        super().__init__(f"feature {index} is constant over the pooled data")
        self.index = index


class EmptyClass(DataError):
    def __init__(self, label: int):
        super().__init__(f"class {label} has no samples")
        self.label = label


class LabelLengthMismatch(DataError):
    pass


class LabelMixing(DataError):
    pass


class NotSquare(DataError):
    pass


class CapExceeded(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class MultipleUnlabeledDomains(DataError):
    pass


class NoUnlabeledDomain(DataError):
    pass


class InconsistentDim(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class RecordsCorrupt(DataError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


# -- configuration ---------------------------------------------------------

class SimplexViolation(ConfigError):
    pass


class DegenerateBeta(ConfigError):
    pass


# -- numerics --------------------------------------------------------------

class NonFiniteCost(NumericalError):
    pass


class NotConverged(NumericalError):
    """Raised only when a caller asks for strict convergence; carries the plan."""

    def __init__(self, plan, marginal_error: float):
        super().__init__(f"sinkhorn stopped with marginal error {marginal_error:.3g}")
        self.plan = plan
        self.marginal_error = marginal_error


class NotConvergedWarning(RuntimeWarning):
    pass


class ZeroRowMass(NumericalError):
    def __init__(self, row: int):
        super().__init__(f"plan row {row} carries no mass")
        self.row = row


class DegenerateTransport(NumericalError):
    def __init__(self, row: int):
        super().__init__(f"summary row {row} received no transported mass")
        self.row = row


class NonFiniteGradient(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class Diverged(NumericalError):
    pass
