"""Exception types raised by the simulation library."""


class MpmError(Exception):
    """Base class for all simulation errors."""


class OutOfDomainError(MpmError):
    """A particle left the valid interior of the background grid."""

    def __init__(self, particle, position):
        self.particle = int(particle)
        self.position = tuple(float(c) for c in position)
        super().__init__(
            f"particle {self.particle} at {self.position} is outside the valid interior"
        )


class DegenerateDeformationError(MpmError):
    """A deformation gradient became (near-)singular."""

    def __init__(self, particle, det):
        self.particle = int(particle)
        self.det = float(det)
        super().__init__(
            f"particle {self.particle} has degenerate deformation gradient (det={self.det:g})"
        )


class CgConvergenceError(MpmError):
    """Conjugate gradient failed to reach the requested residual."""

    def __init__(self, iterations, residual, tol):
        self.iterations = int(iterations)
        self.residual = float(residual)
        self.tol = float(tol)
        super().__init__(
            f"CG did not converge in {self.iterations} iterations "
            f"(residual {self.residual:.3e} > tol {self.tol:.3e})"
        )


class EmptySystemError(MpmError):
    """Least-squares assembly found no active grid nodes."""


class CflViolationError(MpmError):
    """Requested substep size exceeds the stable explicit step."""

    def __init__(self, dt, dt_stable):
        self.dt = float(dt)
        self.dt_stable = float(dt_stable)
        super().__init__(
            f"substep dt={self.dt:.6g} exceeds stable dt={self.dt_stable:.6g}"
        )


class SceneValidationError(MpmError):
    """Scene configuration failed validation; message carries the key path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
