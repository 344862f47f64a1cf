"""Receding-horizon nudging controllers on the mean opinion dynamics.

Two controllers share one condensed QP: the worst-case law (identity stage
weights) and the time-varying law whose stage weights ``1/(|1 - xbar| + eps)``
come from a preview of the mean trajectory under the previous plan.

Decision vector of every QP: ``[u(0|t), ..., u(T-1|t), s_0, ..., s_{T-1}]``
where ``s_k >= 0`` softens the k-th contraction constraint. Stage ``k`` of the
cost penalizes the state reached by ``u(k|t)``, i.e. ``xbar(k+1|t)``.
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from fjnudge.errors import EmptyBox, check_len
from fjnudge.net import Network
from fjnudge.qpcore import QpProblem, QpSettings, QpSolution, Status, solve_qp

log = logging.getLogger(__name__)


class Kind(str, enum.Enum):
    WC = "WC"
    TV = "TV"


@dataclass(frozen=True)
class PolicyParams:
    T: int = 30
    r: float = 0.1
    alpha: float = 0.99
    epsilon: float = 1e-6
    slack_weight: float = 1e4
    # "inverse": Q = 1/(|1 - xbar| + eps). "proportional": Q = |1 - xbar| + eps, a
    # diagnostic alternative that weights lagging agents more instead of less.
    weight_law: str = "inverse"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if self.r <= 0:
            raise ValueError("input penalty r must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.slack_weight <= 0:
            raise ValueError("slack_weight must be positive")
        if self.weight_law not in ("inverse", "proportional"):
            raise ValueError(f"unknown weight law {self.weight_law!r}")


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, u) -> bool:
        u = np.asarray(u)
        return bool(((u >= self.lower) & (u <= self.upper)).all())

    def clip(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


def feasible_input_set(u_o, delta: float) -> InputBox:
    """Inputs ``[0, 1 - u_o']`` with ``u_o' = u_o + delta u_o / sqrt(3)``.

    The shrinkage is one standard deviation of the uniform disturbance.
    """
    u_o = np.asarray(u_o, dtype=float)
    if ((u_o < 0) | (u_o > 1)).any():
        raise ValueError("biases must lie in [0, 1]")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    upper = 1.0 - u_o - np.sqrt((delta * u_o) ** 2 / 3.0)
    if (upper < 0).any():
        raise EmptyBox(f"agents {np.flatnonzero(upper < 0).tolist()} have no admissible input")
    return InputBox(np.zeros_like(u_o), upper)


@dataclass(frozen=True)
class WeightSchedule:
    """Stage weights, row ``k`` holds the diagonal of ``Q(t+k)``."""

    Q: np.ndarray

    @classmethod
    def uniform(cls, T: int, n: int) -> "WeightSchedule":
        return cls(np.ones((T, n)))


@dataclass(frozen=True)
class StepInfo:
    t: int
    status: str
    iterations: int
    objective: float
    max_slack: float
    u_l1: float


@dataclass(frozen=True)
class ControllerState:
    prev_solution: np.ndarray | None = None  # (T, n) last optimal input plan
    prev_xbar: np.ndarray | None = None
    t: int = 0
    history: tuple = field(default_factory=tuple)


class PredictionModel:
    """Condensed prediction ``xbar(k+1|t) = c_{k+1} + sum_{j<=k} A^(k-j) B u_j``.

    ``Gamma`` stacks the blocks ``A^(k-j) B`` (row block k, column block j),
    ``C_u`` the input part of the linear contraction constraints.
    """

    def __init__(self, net: Network, T: int):
        n = net.n
        self.n, self.T = n, T
        self.A, self.b = net.A, net.b
        blocks = [np.diag(self.b)]
        for _ in range(T - 1):
            blocks.append(self.A @ blocks[-1])
        Gamma = np.zeros((T * n, T * n))
        for k in range(T):
            for j in range(k + 1):
                Gamma[k * n:(k + 1) * n, j * n:(j + 1) * n] = blocks[k - j]
        self.Gamma = Gamma
        self.GtG = Gamma.T @ Gamma
        # column sums of each block row: 1' xbar(k+1|t) depends on u through rowsum[k]
        self.rowsum = np.ones(n) @ Gamma.reshape(T, n, T * n)

    def free_response(self, x0, u_o) -> np.ndarray:
        """States ``c_1..c_T`` reached with zero controlled input, shape (T, n)."""
        out = np.empty((self.T, self.n))
        x = x0
        drive = self.b * u_o
        for k in range(self.T):
            x = self.A @ x + drive
            out[k] = x
        return out

    def contraction_rows(self, alpha: float) -> np.ndarray:
        prev = np.vstack([np.zeros((1, self.T * self.n)), self.rowsum[:-1]])
        return -self.rowsum + alpha * prev


@functools.lru_cache(maxsize=16)
def prediction_model(net: Network, T: int) -> PredictionModel:
    return PredictionModel(net, T)


def _build(xbar_t, net: Network, u_o, box: InputBox, params: PolicyParams, Q: np.ndarray) -> QpProblem:
    n, T = net.n, params.T
    xbar_t = check_len("xbar_t", xbar_t, n)
    u_o = check_len("u_o", u_o, n)
    if Q.shape != (T, n):
        raise ValueError(f"weights must have shape ({T}, {n}), got {Q.shape}")
    model = prediction_model(net, T)
    free = model.free_response(xbar_t, u_o)
    e = (1.0 - free).ravel()
    w = Q.ravel()
    Nu = T * n
    H = np.zeros((Nu + T, Nu + T))
    if np.all(w == 1.0):
        GtWG = model.GtG
    else:
        GtWG = (model.Gamma.T * w) @ model.Gamma
    H[:Nu, :Nu] = 2.0 * GtWG
    H[np.arange(Nu), np.arange(Nu)] += 2.0 * params.r
    f = np.concatenate([-2.0 * model.Gamma.T @ (w * e), np.full(T, params.slack_weight)])

    err = np.concatenate([[n - xbar_t.sum()], n - free.sum(axis=1)])  # 1-norm errors, k = 0..T
    A_in = np.zeros((T, Nu + T))
    A_in[:, :Nu] = model.contraction_rows(params.alpha)
    A_in[:, Nu:] = -np.eye(T)
    b_in = -err[1:] + params.alpha * err[:-1]
    lb = np.zeros(Nu + T)
    ub = np.concatenate([np.tile(box.upper, T), np.full(T, np.inf)])
    return QpProblem(H, f, A_in=A_in, b_in=b_in, lb=lb, ub=ub, offset=float(e @ (w * e)))


def build_wc_problem(xbar_t, net: Network, u_o, box: InputBox, params: PolicyParams) -> QpProblem:
    """Worst-case conservative problem: unit stage weights."""
    return _build(xbar_t, net, u_o, box, params, np.ones((params.T, net.n)))


def build_tv_problem(xbar_t, weights: WeightSchedule, net: Network, u_o, box: InputBox,
                     params: PolicyParams) -> QpProblem:
    Q = np.asarray(weights.Q, dtype=float)
    if (Q <= 0).any():
        raise ValueError("stage weights must be strictly positive")
    return _build(xbar_t, net, u_o, box, params, Q)


def preview_weights(cstate: ControllerState, xbar_t, net: Network, u_o, params: PolicyParams) -> WeightSchedule:
    """Stage weights from the mean trajectory predicted under the shifted previous plan.

    ``Q(t+k) = 1 / (|1 - xp(t+k-1)| + eps)`` where ``xp(t-1)`` is the previous
    measurement and ``xp(t) = xbar(t)``.
    """
    n, T = net.n, params.T
    xbar_t = check_len("xbar_t", xbar_t, n)
    u_o = check_len("u_o", u_o, n)
    candidate = np.zeros((T, n))
    if cstate.prev_solution is not None:
        candidate[:-1] = cstate.prev_solution[1:]
    xp = np.empty((T + 1, n))  # xp[i] = xbar^p(t - 1 + i)
    xp[0] = xbar_t if cstate.prev_xbar is None else cstate.prev_xbar
    xp[1] = xbar_t
    for k in range(T - 1):
        xp[k + 2] = net.A @ xp[k + 1] + net.b * (u_o + candidate[k])
    gap = np.abs(1.0 - xp[:T]) + params.epsilon
    return WeightSchedule(1.0 / gap if params.weight_law == "inverse" else gap)


class CondensedNewton:
    """Structured Newton solves for the condensed MPC problems.

    After eliminating the slacks, the Newton matrix is the Hessian (in the inputs)
    of a linear-quadratic problem along the predicted trajectory: state weights
    ``2 W_k`` on ``x_{k+1}``, input weights ``2r + d_u`` and, for every contraction
    row, a rank-one penalty on ``1'x_{k+1} - alpha 1'x_k``. A Riccati recursion
    factors it in ``O(T n^3)``.
    """

    def __init__(self, model: PredictionModel, Q: np.ndarray, r: float, alpha: float):
        self.model = model
        self.W2 = 2.0 * Q
        self.r2 = 2.0 * r
        self.alpha = alpha
        self.C_u = model.contraction_rows(alpha)

    def __call__(self, d_var, d_in):
        m = self.model
        n, T = m.n, m.T
        Nu = n * T
        A, b = m.A, m.b
        C = self.C_u
        R = (self.r2 + d_var[:Nu]).reshape(T, n)
        d_s = d_var[Nu:]
        theta = 1.0 / (1.0 + d_s / d_in)
        d_eff = d_s * theta
        # contraction row k in terms of (x_k, u_k): c_x' x_k + b' u_k
        c_x = A.sum(axis=0) - self.alpha
        Linv = np.empty((T, n, n))
        gain = np.empty((T, n, n))
        S = np.zeros((n, n))
        diag = np.diag_indices(n)
        for k in range(T - 1, -1, -1):
            St = S
            St[diag] += self.W2[k]
            BS = b[:, None] * St
            L0 = BS * b
            L0[diag] += R[k]
            L0inv = np.linalg.inv(L0)
            M = BS @ A
            G0 = L0inv @ M
            # rank-one contraction term by Sherman-Morrison, stable for large d_eff
            v = L0inv @ b
            gamma = d_eff[k] / (1.0 + d_eff[k] * (b @ v))
            w = c_x - M.T @ v
            Linv[k] = L0inv - gamma * np.outer(v, v)
            gain[k] = G0 + gamma * np.outer(v, w)
            S = A.T @ St @ A - M.T @ G0 + gamma * np.outer(w, w)
            S = 0.5 * (S + S.T)

        def solve_k(g):
            g = g.reshape(T, n)
            ff = np.empty((T, n))
            sv = np.zeros(n)
            for k in range(T - 1, -1, -1):
                qk = b * sv - g[k]
                ff[k] = -Linv[k] @ qk
                sv = A.T @ sv - gain[k].T @ qk
            out = np.empty((T, n))
            x = np.zeros(n)
            for k in range(T):
                u = ff[k] - gain[k] @ x
                out[k] = u
                x = A @ x + b * u
            return out.ravel()

        def solve(rhs):
            r_u, r_s = rhs[:Nu], rhs[Nu:]
            x_u = solve_k(r_u + C.T @ (theta * r_s))
            x_s = theta * (C @ x_u) + r_s / (d_in + d_s)
            return np.concatenate([x_u, x_s])

        return solve


def newton_for(net: Network, Q: np.ndarray, params: PolicyParams) -> CondensedNewton:
    return CondensedNewton(prediction_model(net, params.T), Q, params.r, params.alpha)


# the interior point loses digits in its last iterations on these badly scaled
# problems, a relative gap of 1e-6 is plenty for a control input
MPC_SETTINGS = QpSettings(polish=False, tol_gap=1e-6)


def receding_horizon_step(cstate: ControllerState, measurement, kind: Kind | str, net: Network, u_o,
                          box: InputBox, params: PolicyParams,
                          settings: QpSettings = MPC_SETTINGS) -> tuple[np.ndarray, ControllerState]:
    """Solve the horizon problem from ``measurement`` and return the first input.

    The applied input is clipped onto the box, which only removes interior-point
    round-off. On ``MaxIters`` the best iterate is applied and the step flagged in
    the history; an ``Infeasible`` status raises ``RuntimeError``.
    """
    kind = Kind(kind)
    n, T = net.n, params.T
    xbar_t = check_len("measurement", measurement, n)
    if kind is Kind.TV:
        Q = preview_weights(cstate, xbar_t, net, u_o, params).Q
    else:
        Q = np.ones((T, n))
    prob = _build(xbar_t, net, u_o, box, params, Q)
    sol = solve_qp(prob, settings, newton=newton_for(net, Q, params))
    if sol.status is Status.INFEASIBLE:
        raise RuntimeError(f"controller QP infeasible at t={cstate.t}")
    plan = sol.z_star[:T * n].reshape(T, n)
    plan = np.clip(plan, box.lower, box.upper)
    slack = sol.z_star[T * n:]
    max_slack = float(max(slack.max(), 0.0))
    if sol.status is not Status.OPTIMAL:
        log.warning("t=%d: solver stopped with %s", cstate.t, sol.status.value)
    if max_slack > 1e-6:
        log.info("t=%d: contraction softened, max slack %.3g", cstate.t, max_slack)
    u_now = plan[0].copy()
    info = StepInfo(cstate.t, sol.status.value, sol.iterations, sol.objective + prob.offset, max_slack,
                    float(np.abs(u_now).sum()))
    new_state = replace(cstate, prev_solution=plan, prev_xbar=xbar_t.copy(), t=cstate.t + 1,
                        history=cstate.history + (info,))
    return u_now, new_state


def stage_cost(xbar, Q=None, u=None, r: float = 0.0) -> float:
    """``||1 - xbar||_Q^2 + r ||u||^2`` for a single stage."""
    e = 1.0 - np.asarray(xbar, dtype=float)
    w = np.ones_like(e) if Q is None else np.asarray(Q, dtype=float)
    val = float(e @ (w * e))
    if u is not None:
        val += r * float(np.asarray(u) @ np.asarray(u))
    return val


__all__ = [
    "ControllerState", "InputBox", "Kind", "PolicyParams", "PredictionModel", "QpSolution", "StepInfo",
    "WeightSchedule", "build_tv_problem", "build_wc_problem", "feasible_input_set", "preview_weights",
    "receding_horizon_step", "stage_cost",
]
