"""Exception hierarchy shared by every module."""


class PeelError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PeelError, ValueError):
    """Tensor dimensions do not agree with what an operation requires."""


class ValidationError(PeelError, ValueError):
    """Input is malformed: non-finite values, bad parameters, corrupt files."""


class ModelFormatError(ValidationError):
    """A model manifest or weight blob failed validation."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class UnsupportedStructureError(ValidationError):
    """The network contains a layer arrangement this package cannot handle."""


class DivergenceError(PeelError, ArithmeticError):
    """An optimization produced a non-finite objective."""

    def __init__(self, step, value=float("nan"), where=""):
        msg = f"objective became non-finite ({value}) at step {step}"
        if where:
            msg = f"{where}: {msg}"
        super().__init__(msg)
        self.step = step
        self.value = value


class RankDeficientError(PeelError, ArithmeticError):
    def __init__(self, rank, ncols):
        super().__init__(f"matrix is rank deficient: numerical rank {rank} < {ncols} columns")
        self.rank = rank
        self.ncols = ncols
