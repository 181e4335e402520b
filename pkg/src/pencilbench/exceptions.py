"""Exception hierarchy shared by all pencilbench modules."""


class PencilBenchError(Exception):
    """Base class for every error raised by pencilbench."""


class PencilError(PencilBenchError):
    """Invalid pencil data or a failed generalized eigen-decomposition."""


class ModelError(PencilBenchError):
    """Invalid model definition, parameters or equilibrium failure."""


class ModelFormatError(ModelError):
    """A model file could not be parsed."""


class MethodError(PencilBenchError):
    """Unsupported method or a singular method-dependent matrix."""


class NoCrossingError(PencilBenchError):
    """A step-size search found no crossing of its criterion in range."""

    def __init__(self, message, endpoint_values=None, at_lower_end=False):
        super().__init__(message)
        self.endpoint_values = endpoint_values
        self.at_lower_end = at_lower_end


class SimulationError(PencilBenchError):
    """Time-domain integration could not start or proceed."""


class AnnihilatedModeError(PencilBenchError):
    """A discrete multiplier is exactly zero, so no S-plane image exists."""
