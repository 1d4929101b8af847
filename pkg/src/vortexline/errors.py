"""Exception types raised by vortexline."""


class VortexLineError(Exception):
    """Base class for all library errors."""


class NodeSingularity(VortexLineError):
    """|psi|^2 fell below the safe floor; the point is numerically on a node."""


class NodeImpact(VortexLineError):
    """A trajectory entered the node guard zone and step control could not recover."""


class StepLimitExceeded(VortexLineError):
    pass


class NoConvergence(VortexLineError):
    pass


class DegenerateNode(VortexLineError):
    """grad(psi_R) x grad(psi_I) vanishes, so the tangent and frame are undefined."""


class BranchTooLong(VortexLineError):
    """Continuation hit max_points; the partial line is attached as ``.line``."""

    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class SingularSystem(VortexLineError):
    pass


class ZeroRotation(VortexLineError):
    """The linear rotation rate A vanishes; averaging around the node is undefined."""


class Blowup(VortexLineError):
    """The averaged spiral radius escapes to infinity at a finite angle."""


class DegenerateApproximant(VortexLineError):
    pass


class ConvergedToNode(VortexLineError):
    """Newton for an X-point collapsed onto a nodal point."""


class OutsideTube(VortexLineError):
    pass


class LineLost(VortexLineError):
    pass


class ConfigError(VortexLineError):
    pass
