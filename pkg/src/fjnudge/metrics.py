"""Quality indicators of a run and a Monte Carlo check of the expected tracking cost."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from fjnudge.errors import EmptyTrajectory


def adopters_fraction(Y) -> float:
    """Percentage of (agent, time) pairs that accepted."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.size == 0:
        raise EmptyTrajectory("acceptance matrix is empty")
    if not np.isin(Y, (0, 1)).all():
        raise ValueError("acceptance matrix must be binary")
    return 100.0 * float(Y.sum()) / Y.size


def control_effort(U) -> float:
    """Total effort ``sum_t ||u(t)||_1``."""
    U = np.asarray(U, dtype=float)
    return float(np.abs(U).sum())


def mean_effort(U) -> float:
    """Average per-step effort ``(1/steps) sum_t ||u(t)||_1``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] == 0:
        return 0.0
    return control_effort(U) / U.shape[0]


def overflow_count(X) -> int:
    """Number of (t, v) entries outside ``[0, 1]``."""
    X = np.asarray(X, dtype=float)
    return int(((X < 0.0) | (X > 1.0)).sum())


def overflow_steps(X) -> int:
    """Number of time instants with at least one entry outside ``[0, 1]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return int(((X < 0.0) | (X > 1.0)).any(axis=1).sum())


def verify_cost_identity(x, samples: int, rng: np.random.Generator,
                         block: int = 100_000) -> tuple[float, float]:
    """Monte Carlo mean of ``||1 - y||^2`` with ``y ~ Bernoulli(x)`` next to ``sum(1 - x)``.

    Samples are drawn elementwise in blocks, each block from its own child stream.
    """
    x = np.asarray(x, dtype=float)
    if ((x < 0) | (x > 1)).any():
        raise ValueError("x must lie in [0, 1]")
    if samples < 1:
        raise ValueError("samples must be positive")
    sizes = [block] * (samples // block) + ([samples % block] if samples % block else [])
    total = 0
    for size, child in zip(sizes, rng.spawn(len(sizes))):
        y = child.random((size, x.size)) < x
        total += int(x.size * size - np.count_nonzero(y))
    return total / samples, float((1.0 - x).sum())


@dataclass(frozen=True)
class MetricsReport:
    gamma_T: float
    delta_u: float
    delta_u_per_step: float
    tau_ob_pairs: int
    tau_ob_steps: int
    adopters: list
    u_l1: list

    @classmethod
    def from_run(cls, x, y, u_c=None) -> "MetricsReport":
        """``x`` holds ``steps + 1`` states, ``y`` and ``u_c`` one row per step."""
        y = np.asarray(y)
        U = np.zeros(y.shape) if u_c is None else np.asarray(u_c, dtype=float)
        return cls(
            gamma_T=adopters_fraction(y),
            delta_u=control_effort(U),
            delta_u_per_step=mean_effort(U),
            tau_ob_pairs=overflow_count(x),
            tau_ob_steps=overflow_steps(x),
            adopters=[int(v) for v in y.sum(axis=1)],
            u_l1=[float(v) for v in np.abs(U).sum(axis=1)],
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_step"] = {"adopters": d.pop("adopters"), "u_l1": d.pop("u_l1")}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        per = d.pop("per_step")
        return cls(**d, adopters=list(per["adopters"]), u_l1=list(per["u_l1"]))
