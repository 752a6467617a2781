"""Exception hierarchy shared by every stage of the pipeline."""


class SigVerifyError(Exception):
    """Base class for all errors raised by this package."""


# -- parsing / datasets ------------------------------------------------------

class ParseError(SigVerifyError):
    """A capture file could not be turned into a signature."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class MalformedHeader(ParseError):
    pass


class FieldCount(ParseError):
    pass


class NonMonotoneTime(ParseError):
    pass


class TooFewPoints(ParseError):
    pass


class EmptyDataset(SigVerifyError):
    pass


class DatasetErrors(SigVerifyError):
    """Several files failed to parse; ``errors`` holds ``(path, exc)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{len(self.errors)} file(s) failed to parse:"]
        lines += [f"  {p}: {e}" for p, e in self.errors]
        super().__init__("\n".join(lines))


# -- model files --------------------------------------------------------------

class ModelFileError(SigVerifyError):
    pass


class VersionMismatch(ModelFileError):
    pass


class CorruptFile(ModelFileError):
    pass


# -- geometry ------------------------------------------------------------------

class DegenerateGeometry(SigVerifyError):
    pass


class DegenerateExtent(SigVerifyError):
    pass


# -- feature learning ----------------------------------------------------------

class PatchTooLarge(SigVerifyError):
    pass


class AlreadyRemoved(SigVerifyError):
    pass


class NumericalFailure(SigVerifyError):
    pass


class DimensionMismatch(SigVerifyError, ValueError):
    pass


class DomainError(SigVerifyError, ValueError):
    pass


class NonFinite(SigVerifyError, FloatingPointError):
    pass


class LineSearchFailure(SigVerifyError):
    """Raised in strict mode; ``result`` keeps the last accepted iterate."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


# -- features / verification / evaluation -----------------------------------

class ImageTooSmall(SigVerifyError):
    pass


class PoolTooFine(SigVerifyError):
    pass


class TooFewSamples(SigVerifyError):
    pass


class EmptyTraining(SigVerifyError):
    pass


class ThresholdUnset(SigVerifyError):
    pass


class EmptyPool(SigVerifyError):
    pass


class InsufficientGenuine(SigVerifyError):
    pass


class ConfigError(SigVerifyError):
    pass
