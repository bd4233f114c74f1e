"""Exception types shared across the package."""


class DomainError(ValueError):
    """Evaluation point lies outside the domain a function is defined on."""


class SingularityError(ValueError):
    """Kernel evaluated at its singular point y = 0."""


class CapabilityError(ValueError):
    """Derivative order (or similar capability) exceeds what is configured."""


class InvertibilityError(ValueError):
    """Operator with a nontrivial kernel applied to data outside its range."""


class StepSizeError(RuntimeError):
    """Time step rejected (CFL violation); caller may retry with smaller dt."""


class GradientPoisonedError(RuntimeError):
    """Optimizer refused a step because the gradient contains NaN/Inf."""


class TimeRangeError(ValueError):
    """Requested time interval is not covered by the reference trajectory."""


class ConfigError(ValueError):
    """Experiment configuration failed schema validation."""
