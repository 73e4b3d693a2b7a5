from __future__ import annotations


class MulticacError(Exception):
    """Root of every error raised by the package."""


class ConfigError(MulticacError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


class ModelError(MulticacError):
    """Runtime failure of the model or one of its numerical kernels."""


class DimensionError(ModelError):
    pass


class EntropyDomainError(ModelError):
    pass


class SeparationError(EntropyDomainError):
    """A concentration reached the evaluation floor of the exact entropy."""

    def __init__(self, message: str, component: int, index: tuple[int, ...] = ()):
        self.component = component
        self.index = tuple(index)
        super().__init__(message)


class ResolventError(ModelError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class CertificationError(ModelError):
    def __init__(self, condition: str, detail: str):
        self.condition = condition
        super().__init__(f"entropy fails {condition}: {detail}")


class SolveError(ModelError):
    pass


class UnsupportedMobilityError(ModelError):
    pass


class DecayFitError(ModelError):
    pass


class CheckpointError(ModelError):
    pass


class InitialConditionError(ModelError):
    """Requested perturbation would leave the Gibbs simplex."""


class InvalidFieldError(ModelError):
    """A phase field violates the pointwise simplex constraint."""
