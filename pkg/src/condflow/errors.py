"""Exception types shared across the package."""


class CondflowError(Exception):
    """Base class for all errors raised by this package."""


class ExpressionSyntaxError(CondflowError):
    """Malformed expression source. Carries the character position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownVariableError(CondflowError):
    """Expression refers to a variable outside x1..xd."""

    def __init__(self, name, dimension, position):
        super().__init__(
            f"variable {name!r} not available in dimension {dimension} (at position {position})"
        )
        self.name = name
        self.dimension = dimension
        self.position = position


class EvaluationDomainError(CondflowError):
    """Evaluation hit an invalid point (log of a nonpositive value, division by zero)."""


class DomainExitError(CondflowError):
    """A trajectory left the declared box before finishing its task."""

    def __init__(self, message, time=None, point=None, integral=None):
        super().__init__(message)
        self.time = time
        self.point = point
        self.integral = integral


class CertificationError(CondflowError):
    """Gradient lower-bound certification failed on the requested region."""


class HitTimeError(CondflowError):
    """The zero level set (or a target face) was not reached."""


class FacePointError(CondflowError):
    """Evaluation requested at a point lying on a gradient-jump interface."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FanStructureError(CondflowError):
    """Cone fan input violates ordering, continuity, or degeneracy rules."""


class NotRealizableError(CondflowError):
    """The requested conductivity does not exist (sign or split obstruction)."""


class TopologyError(CondflowError):
    """Cell decomposition wiring is inconsistent (bad faces, re-entry, branching)."""


class ScenarioError(CondflowError):
    """Scenario file cannot be parsed (bad JSON, missing or mistyped keys)."""

    exit_code = 2


class ScenarioValidationError(ScenarioError):
    """Scenario parsed but fails semantic validation (bad references, values)."""

    exit_code = 3
