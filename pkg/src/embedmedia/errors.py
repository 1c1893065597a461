"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EmbedError(Exception):
    exit_code = 1


class ConfigError(EmbedError):
    """Malformed input: bad config, grid mismatch, unreadable mesh."""

    exit_code = 2


class MeshError(ConfigError):
    pass


class ResolutionError(ConfigError):
    """Grid too coarse for the wavelength (k * cell_size >= 1)."""


class PhysicsError(EmbedError):
    """Input is well formed but violates a physical admissibility condition."""

    exit_code = 3


class PassivityError(PhysicsError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class RecipeError(PhysicsError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class SmallnessError(PhysicsError):
    pass


class HardParticleError(PhysicsError):
    pass


class SingularImpedanceError(PhysicsError):
    pass


class SolverError(EmbedError):
    exit_code = 4


class ResonanceError(SolverError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EvaluationError(ConfigError):
    """Field requested inside a particle."""
