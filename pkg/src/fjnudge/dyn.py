"""Stochastic opinion dynamics: state updates, disturbances, acceptance and free evolution."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fjnudge.errors import DimensionMismatch, SingularSystem, check_len
from fjnudge.net import Network, check_assumption2

STREAMS = ("graph", "init", "noise", "acceptance")


def make_streams(seed: int, replication: int = 0) -> dict[str, np.random.Generator]:
    """Independent named generators derived from ``(seed, replication)``.

    Turning one source of randomness on or off never shifts the draws of another.
    """
    return {
        name: np.random.default_rng(np.random.SeedSequence([int(seed), int(replication), k]))
        for k, name in enumerate(STREAMS)
    }


@dataclass(frozen=True)
class OpinionState:
    x: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class InputRecord:
    u_c: np.ndarray
    u_nc: np.ndarray
    u_total: np.ndarray

    @classmethod
    def build(cls, u_o, u_c=None, u_nc=None) -> "InputRecord":
        u_o = np.asarray(u_o, dtype=float)
        u_c = np.zeros_like(u_o) if u_c is None else check_len("u_c", u_c, u_o.size)
        u_nc = np.zeros_like(u_o) if u_nc is None else check_len("u_nc", u_nc, u_o.size)
        return cls(u_c, u_nc, u_o + u_c + u_nc)


def step(state: OpinionState, net: Network, u: InputRecord) -> OpinionState:
    """One update ``x' = [lambda] P x + (I - [lambda]) u``. States are not clamped."""
    x = check_len("x", state.x, net.n)
    u_total = check_len("u_total", u.u_total, net.n)
    return OpinionState(net.A @ x + net.b * u_total, state.t + 1)


def sample_noise(u_o, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform disturbance on ``[-delta u_o, delta u_o]`` per agent."""
    u_o = np.asarray(u_o, dtype=float)
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    return delta * u_o * rng.uniform(-1.0, 1.0, size=u_o.shape)


def sample_acceptance(x, rng: np.random.Generator) -> np.ndarray:
    # only the success probability is clamped, the state is left as is
    p = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return (rng.random(p.shape) < p).astype(np.int8)


def mean_step(xbar, net: Network, u_o, u_c=None) -> np.ndarray:
    xbar = check_len("xbar", xbar, net.n)
    u = check_len("u_o", u_o, net.n)
    if u_c is not None:
        u = u + check_len("u_c", u_c, net.n)
    return net.A @ xbar + net.b * u


def fixed_point(net: Network, u_o) -> np.ndarray:
    """Expected long-run inclination ``(I - [lambda] P)^-1 (I - [lambda]) u_o``."""
    u_o = check_len("u_o", u_o, net.n)
    if not check_assumption2(net):
        raise SingularSystem("no path to an agent with lambda < 1 from some node")
    M = np.eye(net.n) - net.A
    try:
        return np.linalg.solve(M, net.b * u_o)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def spectral_radius(net: Network) -> float:
    return float(np.abs(np.linalg.eigvals(net.A)).max())


@dataclass
class Trajectory:
    """Time series of one run. ``x`` has ``steps + 1`` rows, the per-step series ``steps``."""

    x: np.ndarray
    y: np.ndarray
    u_nc: np.ndarray
    u_c: np.ndarray | None = None
    estimate: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.y.shape[0]

    @property
    def cesaro_x(self) -> np.ndarray:
        return cesaro(self.x)

    @property
    def cesaro_y(self) -> np.ndarray:
        return cesaro(self.y)

    def write_csv(self, path) -> None:
        n = self.x.shape[1]
        cols = {"x": self.x, "y": self.y, "unc": self.u_nc}
        if self.u_c is not None:
            cols["uc"] = self.u_c
        cols["cesaro_x"] = self.cesaro_x
        cols["cesaro_y"] = self.cesaro_y
        if self.estimate is not None:
            cols["est"] = self.estimate
        header = ["t"] + [f"{k}_{v + 1}" for k in cols for v in range(n)]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.x.shape[0]):
                row = [t]
                for arr in cols.values():
                    # per-step series are one row shorter than the state
                    if t < arr.shape[0]:
                        row.extend(repr(float(a)) for a in arr[t])
                    else:
                        row.extend([""] * n)
                writer.writerow(row)


def cesaro(series) -> np.ndarray:
    """Running time averages ``(1/(t+1)) sum_{l<=t} a(l)`` of each column."""
    series = np.asarray(series, dtype=float)
    return np.cumsum(series, axis=0) / np.arange(1, series.shape[0] + 1)[:, None]


def simulate_free(net: Network, u_o, delta: float, x0, y0, steps: int,
                  noise_rng: np.random.Generator, acc_rng: np.random.Generator) -> Trajectory:
    """Uncontrolled evolution with disturbances and sampled acceptance."""
    n = net.n
    u_o = check_len("u_o", u_o, n)
    x0 = check_len("x0", x0, n)
    y0 = np.asarray(y0)
    if y0.shape != (n,):
        raise DimensionMismatch("y0 must have length n")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X = np.empty((steps + 1, n))
    Y = np.empty((steps, n), dtype=np.int8)
    U = np.empty((steps, n))
    X[0] = x0
    Y[0] = y0
    A, b = net.A, net.b
    for t in range(steps):
        if t > 0:
            Y[t] = sample_acceptance(X[t], acc_rng)
        U[t] = sample_noise(u_o, delta, noise_rng) if delta > 0 else 0.0
        X[t + 1] = A @ X[t] + b * (u_o + U[t])
    return Trajectory(X, Y, U)
