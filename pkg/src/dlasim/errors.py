class DlaError(Exception):
    """Base class for every error raised by dlasim."""


class TopologyError(DlaError, ValueError):
    """Malformed or inconsistent topology. ``layer_index`` is None for whole-file problems."""

    def __init__(self, message: str, layer_index: int | None = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


class ShapeError(DlaError, ValueError):
    pass


class InfeasibleConfigError(DlaError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NoFeasiblePointError(DlaError):
    pass


class MissingWeightsError(DlaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing weights"
