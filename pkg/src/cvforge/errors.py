from typing import Any


class CVForgeError(Exception):
    """Base class for every error raised by cvforge."""


class InvalidInputError(CVForgeError, ValueError):
    pass


class InvalidDatasetError(CVForgeError, ValueError):
    pass


class InvalidArgumentError(CVForgeError, ValueError):
    pass


class InvalidArchitectureError(CVForgeError, ValueError):
    pass


class DegenerateFeatureError(CVForgeError, ValueError):
    def __init__(self, column: int, label: str | None = None):
        self.column = column
        name = f"`{label}` " if label else ""
        super().__init__(f"Feature column {column} {name}is constant")


class DegenerateGeometryError(CVForgeError, ValueError):
    pass


class DegenerateModelError(CVForgeError, ValueError):
    def __init__(self, message: str, state: int | None = None):
        self.state = state
        super().__init__(message)


class GridCoverageError(CVForgeError, ValueError):
    pass


class ResolutionError(CVForgeError, ValueError):
    pass


class UnsupportedExportError(CVForgeError, ValueError):
    pass


class ModelLoadError(CVForgeError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        prefix = f"{field}: " if field else ""
        super().__init__(f"{prefix}{message}")


class ExpressionError(CVForgeError, ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class ConfigError(CVForgeError, ValueError):
    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        lines = [f"{path}: {msg}" for path, msg in errors]
        super().__init__("Invalid configuration\n" + "\n".join(lines))

    @property
    def paths(self) -> list[str]:
        return [path for path, _ in self.errors]


class SimulationDivergedError(CVForgeError, RuntimeError):
    def __init__(self, step: int, state: Any, reason: str):
        self.step = step
        self.state = state
        super().__init__(f"Simulation diverged at step {step}: {reason} (q={state})")
