"""Exception types shared across the package."""


class CapascanError(Exception):
    """Base class for all package errors."""


class SceneError(CapascanError):
    """Scene failed validation; carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scene: " + "; ".join(self.violations))


class OutOfDomainError(CapascanError):
    """Electrode footprint (or head position) falls outside the grid."""


class ConvergenceError(CapascanError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message, achieved_residual, iterations):
        self.achieved_residual = achieved_residual
        self.iterations = iterations
        super().__init__(
            f"{message} (residual {achieved_residual:.3e} after {iterations} iterations)"
        )


class FrameError(CapascanError):
    """Sample cannot be represented on the wire."""


class SessionFormatError(CapascanError):
    """Session file is malformed; message names the offending row."""


class ProtocolError(CapascanError):
    """Live-session message violates the protocol."""

    def __init__(self, code, detail=""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
