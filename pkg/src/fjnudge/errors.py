"""Exception types shared across the package."""

import numpy as np


class DimensionMismatch(ValueError):
    pass


class ZeroRow(ValueError):
    """A row of an adjacency matrix has no positive entry."""


class SingularSystem(np.linalg.LinAlgError):
    """``I - [lambda] P`` is not invertible (no path to a node with lambda < 1)."""


class EmptyBox(ValueError):
    pass


class OddPopulation(ValueError):
    pass


class EmptyTrajectory(ValueError):
    pass


def check_len(name, vec, n):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n,):
        raise DimensionMismatch(f"{name} has shape {vec.shape}, expected ({n},)")
    return vec
