"""Stochastic Friedkin-Johnsen opinion dynamics and receding-horizon nudging."""

from fjnudge.errors import (
    DimensionMismatch,
    EmptyBox,
    EmptyTrajectory,
    OddPopulation,
    SingularSystem,
    ZeroRow,
)
from fjnudge.net import GraphGenParams, Network, check_assumption2, generate_clustered_er, row_normalize

__all__ = [
    "DimensionMismatch",
    "EmptyBox",
    "EmptyTrajectory",
    "GraphGenParams",
    "Network",
    "OddPopulation",
    "SingularSystem",
    "ZeroRow",
    "check_assumption2",
    "generate_clustered_er",
    "row_normalize",
]

__version__ = "0.1.0"
