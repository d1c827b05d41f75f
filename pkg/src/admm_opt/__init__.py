"""Mixed continuous-integer black-box optimizer for pipeline configuration.

Alternates continuous hyperparameter optimization, closed-form integer
consensus updates, and combinatorial algorithm selection, with optional
black-box inequality constraints handled through slack variables and
multiplier updates.
"""

from .core import (AdmmState, Budget, Incumbent, Problem, RunResult, Settings,
                   run)
from .space import SearchSpace, ThetaVector, ZAssignment, build_space

__all__ = [
    "AdmmState", "Budget", "Incumbent", "Problem", "RunResult", "Settings",
    "run", "SearchSpace", "ThetaVector", "ZAssignment", "build_space",
]

__version__ = "0.1.0"
