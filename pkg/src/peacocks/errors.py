"""Exception types shared by the checkers and simulators."""


class InputError(ValueError):
    """Malformed input: bad grids, shapes, parameters or configuration."""


class DomainError(ValueError):
    """Input is well formed but outside the domain where a criterion applies."""


class ExactModeCapError(InputError):
    """Exact enumeration would exceed the trajectory cap; use sample mode."""
