"""Exception hierarchy shared by every stage of the pipeline."""


class UnimeshError(Exception):
    """Base class for all library errors."""


class MeshError(UnimeshError):
    """Structurally invalid triangulation (bad indices, duplicates, nonmanifold edges)."""


class PreconditionError(UnimeshError):
    """Input violates a documented precondition."""


class RefinementNeededError(PreconditionError):
    """The background mesh is too coarse for the immersed curve."""


class ConformationError(UnimeshError):
    """Conforming the mesh produced inverted or low-quality elements.

    Attributes:
        triangles: ids of the offending triangles.
    """

    def __init__(self, message, triangles=()):
        super().__init__(message)
        self.triangles = list(triangles)


class SolverError(UnimeshError):
    """Iterative solve failed to converge.

    Attributes:
        residuals: relative residual history.
    """

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class ConfigError(UnimeshError):
    """Invalid run configuration."""


class PropagationError(UnimeshError):
    """A stage failed inside the propagation loop.

    Attributes:
        step: index of the failed step.
        ell: crack length at failure.
        record: the partial propagation record.
        stage: ``load``, ``conform``, ``solve``, ``extract``, ``kink`` or ``advance``.
    """

    def __init__(self, message, step, ell, record=None, cause=None, stage=None):
        where = f" [{stage}]" if stage else ""
        super().__init__(f"step {step} (ell={ell:.6g}){where}: {message}")
        self.step = step
        self.ell = ell
        self.record = record
        self.cause = cause
        self.stage = stage
