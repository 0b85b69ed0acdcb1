"""Exception types shared across the package."""


class TmmpError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TmmpError):
    """A parameter value is non-finite or outside its admissible domain."""


class ConditioningError(TmmpError):
    """A matrix factorization failed beyond the allowed jitter budget."""


class GridError(TmmpError):
    """A time grid is empty, unordered, or inconsistent with another grid."""


class ConstraintError(TmmpError):
    """A coefficient vector violates an anchoring constraint."""


class LevelError(TmmpError):
    """A non-stationary projection has no information to pin its level."""


class CoverageError(TmmpError):
    """Required data (covariate, offset, or grid cell) is missing."""


class GroupingError(TmmpError):
    """A population is missing from a hierarchical grouping map."""


class RequiresBoundsError(TmmpError):
    """A prior needs explicit bounds to be proper."""


class NotConjugateError(TmmpError):
    """The model is outside the exactly-solvable linear-Gaussian family."""


class InitializationError(TmmpError):
    """The sampler's starting point has a non-finite log posterior."""


class SpecError(TmmpError):
    """A model specification file failed to parse.

    Carries the list of findings (each with a line number) produced
    while scanning the document.
    """

    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(str(f) for f in self.findings))
