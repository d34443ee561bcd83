"""Exception types shared across the hdlo package."""


class HdloError(Exception):
    """Base class for all hdlo-specific errors."""


class AngleNearPi(HdloError):
    """Rotation angle is too close to pi for the SE(3) log to be reliable."""

    def __init__(self, angle, margin):
        self.angle = float(angle)
        self.margin = float(margin)
        super().__init__(
            f"rotation angle {angle:.9g} within {margin:.3g} of pi; "
            "log map is outside its chart"
        )


class SingularTangent(HdloError):
    """Tangent operator of the exponential map is singular (angle near 2*pi)."""


class OutOfRange(HdloError):
    """Query coordinate lies outside the valid interval."""


class RigidLink(HdloError):
    """Operation requires a deformable link but got a rigid one."""


class MalformedAssembly(HdloError):
    """Assembly description violates a structural invariant."""

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class NoConvergence(HdloError):
    """Iterative solver exhausted its budget without meeting tolerance."""

    def __init__(self, iterations, residual_norm):
        self.iterations = int(iterations)
        self.residual_norm = float(residual_norm)
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(residual {residual_norm:.3e})"
        )


class GoalUnreachable(HdloError):
    """Optimizer converged but the task-space goal was not met."""


class DimensionMismatch(HdloError):
    """Inputs have inconsistent shapes."""


class SceneError(HdloError):
    """Scene or goal file failed to parse or validate."""
