"""Products of conditional expectation operators on finite probability spaces."""

from .prob_space import (
    ProbSpace, RandomVar, SigmaField, SpaceError, classify, completion, cond_exp,
    is_measurable, sigma_join, sigma_meet, sigma_of_rv,
)
from .operators import (
    CondExpOperator, InvariantError, Schedule, ScheduleError, Trajectory, build_operator,
    iterate, limit_predict, moment_track, truncation_bound, two_field_alternation,
)

__version__ = "0.1.0"

__all__ = [
    "CondExpOperator", "InvariantError", "ProbSpace", "RandomVar", "Schedule", "ScheduleError",
    "SigmaField", "SpaceError", "Trajectory", "build_operator", "classify", "completion",
    "cond_exp", "is_measurable", "iterate", "limit_predict", "moment_track", "sigma_join",
    "sigma_meet", "sigma_of_rv", "truncation_bound", "two_field_alternation",
]
