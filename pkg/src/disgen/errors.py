"""Exception hierarchy shared across the package.

The CLI maps these onto machine-readable exit classes, so new error
types should subclass one of the existing categories.
"""


class DisgenError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DisgenError):
    """Operand shapes do not conform for the requested operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(DisgenError):
    """Input outside the mathematical domain of a primitive (e.g. log of x <= 0)."""


class ContractError(DisgenError):
    """A documented precondition was violated by the caller."""


class SingularityError(DisgenError):
    """Normal-equations matrix is numerically singular; advise a positive ridge."""


class FormatError(DisgenError):
    """Malformed dataset file."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SplitError(DisgenError):
    """A class cannot satisfy the split parity requirements."""


class AugmentationError(DisgenError):
    """A view cannot be generated for the given graph."""


class TrainingError(DisgenError):
    """Training diverged; carries the epoch and the last finite parameters."""

    def __init__(self, message, epoch=None, last_good=None):
        self.epoch = epoch
        self.last_good = last_good
        super().__init__(message)


class ProbeError(DisgenError):
    """A numerical probe evaluated to a non-finite value."""


class ConfigError(DisgenError):
    """Run configuration failed schema validation."""


class MissingDependencyError(DisgenError):
    """A required upstream artifact is absent on disk."""
