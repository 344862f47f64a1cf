"""Dense convex QP solver.

Solves::

    minimize    1/2 z'Hz + f'z
    subject to  A_eq z  = b_eq
                A_in z <= b_in
                lb <= z <= ub

with a primal-dual interior-point method (Mehrotra predictor-corrector).
Box bounds are kept apart from the general inequalities so their contribution
to the Newton matrix stays diagonal. Callers with structured Hessians can pass
their own reduced Newton solver.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from fjnudge.errors import DimensionMismatch


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    INFEASIBLE = "Infeasible"


def _as_matrix(a, cols):
    if a is None:
        return np.zeros((0, cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != cols:
        raise DimensionMismatch(f"constraint matrix has {a.shape[1]} columns, expected {cols}")
    return a


def _as_vector(v, size, fill=0.0):
    if v is None:
        return np.full(size, fill)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (size,):
        raise DimensionMismatch(f"vector has shape {v.shape}, expected ({size},)")
    return v


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    offset: float = 0.0  # constant added to the objective by callers, not used by the solver

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        m = self.H.shape[0]
        if self.H.shape != (m, m):
            raise DimensionMismatch(f"H must be square, got {self.H.shape}")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(self.H).max(initial=0.0)):
            raise ValueError("H is not symmetric")
        self.f = _as_vector(self.f, m)
        self.A_eq = _as_matrix(self.A_eq, m)
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0])
        self.A_in = _as_matrix(self.A_in, m)
        self.b_in = _as_vector(self.b_in, self.A_in.shape[0])
        self.lb = _as_vector(self.lb, m, -np.inf)
        self.ub = _as_vector(self.ub, m, np.inf)
        if (self.lb > self.ub).any():
            raise ValueError("lb > ub for some component")

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def to_json(self) -> str:
        """Debug dump for regression capture (infinite bounds become null)."""

        def enc(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)] if a.ndim == 1 else a.tolist()

        return json.dumps({
            "H": self.H.tolist(), "f": enc(self.f),
            "A_eq": self.A_eq.tolist(), "b_eq": enc(self.b_eq),
            "A_in": self.A_in.tolist(), "b_in": enc(self.b_in),
            "lb": enc(self.lb), "ub": enc(self.ub), "offset": self.offset,
        })

    @classmethod
    def from_json(cls, text: str) -> "QpProblem":
        doc = json.loads(text)
        m = len(doc["f"])

        def dec(v, fill):
            return np.array([fill if a is None else a for a in v], dtype=float)

        return cls(
            H=np.array(doc["H"], dtype=float).reshape(m, m), f=dec(doc["f"], 0.0),
            A_eq=np.array(doc["A_eq"], dtype=float).reshape(-1, m), b_eq=dec(doc["b_eq"], 0.0),
            A_in=np.array(doc["A_in"], dtype=float).reshape(-1, m), b_in=dec(doc["b_in"], 0.0),
            lb=dec(doc["lb"], -np.inf), ub=dec(doc["ub"], np.inf), offset=doc.get("offset", 0.0),
        )


@dataclass
class QpSettings:
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.995
    polish: bool = True
    # dual magnitude (relative to problem scale) treated as a certificate of infeasibility
    divergence: float = 1e10


@dataclass
class QpSolution:
    """``primal_residual`` and ``dual_residual`` are scaled by ``1 + data size``."""

    z_star: np.ndarray
    objective: float
    status: Status
    primal_residual: float
    dual_residual: float
    iterations: int
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_in: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


# newton(d_var, d_in) -> solve, where solve(rhs) returns the solution of
# (H + diag(d_var) + A_in' diag(d_in) A_in) dz = rhs
NewtonFactory = Callable[[np.ndarray, np.ndarray], Callable[[np.ndarray], np.ndarray]]


def dense_newton(p: QpProblem) -> NewtonFactory:
    H, A = p.H, p.A_in
    m = p.size
    reg = 1e-13 * max(1.0, np.abs(H).max(initial=0.0))

    def factor(d_var, d_in):
        M = H + (A.T * d_in) @ A
        M[np.diag_indices(m)] += d_var + reg
        try:
            c = sla.cho_factor(M, check_finite=False)
            return lambda rhs: sla.cho_solve(c, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            lu = sla.lu_factor(M, check_finite=False)
            return lambda rhs: sla.lu_solve(lu, rhs, check_finite=False)

    return factor


def _kkt_solver(p: QpProblem, d_var, d_in):
    """LU-factored KKT system for problems with equality constraints."""
    m, k = p.size, p.A_eq.shape[0]
    K = np.zeros((m + k, m + k))
    K[:m, :m] = p.H + (p.A_in.T * d_in) @ p.A_in
    K[np.arange(m), np.arange(m)] += d_var
    K[:m, m:] = p.A_eq.T
    K[m:, :m] = p.A_eq
    # tiny dual regularization keeps redundant equality rows factorable
    K[np.arange(m, m + k), np.arange(m, m + k)] = -1e-14
    lu = sla.lu_factor(K, check_finite=False)
    return lambda rhs: sla.lu_solve(lu, rhs, check_finite=False)


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _equalities_consistent(p: QpProblem) -> bool:
    if p.A_eq.shape[0] == 0:
        return True
    z, *_ = np.linalg.lstsq(p.A_eq, p.b_eq, rcond=None)
    scale = 1.0 + np.abs(p.b_eq).max()
    return np.abs(p.A_eq @ z - p.b_eq).max() <= 1e-9 * scale


def solve_qp(p: QpProblem, settings: QpSettings | None = None, newton: NewtonFactory | None = None,
             z0: np.ndarray | None = None) -> QpSolution:
    """Solve a convex QP to first-order optimality.

    ``newton`` replaces the dense reduced Newton solve; it is only honoured when the
    problem has no equality constraints. ``z0`` is an optional starting point.
    Identical inputs always yield bit-identical iterates.
    """
    return _InteriorPoint(p, settings or QpSettings(), newton).run(z0)


class _InteriorPoint:
    def __init__(self, p: QpProblem, settings: QpSettings, newton: NewtonFactory | None):
        self.p = p
        self.st = settings
        m = p.size
        self.m = m
        self.L = np.flatnonzero(np.isfinite(p.lb))
        self.U = np.flatnonzero(np.isfinite(p.ub))
        self.lbL, self.ubU = p.lb[self.L], p.ub[self.U]
        self.k_eq, self.k_in = p.A_eq.shape[0], p.A_in.shape[0]
        self.k_l, self.k_u = self.L.size, self.U.size
        self.n_ineq = self.k_in + self.k_l + self.k_u
        if self.k_eq and newton is not None:
            raise ValueError("custom Newton solvers require a problem without equalities")
        self.factory = newton if newton is not None else (None if self.k_eq else dense_newton(p))
        self.refine = newton is not None
        self.h = np.concatenate([p.b_in, -self.lbL, self.ubU])
        finite = [np.abs(v) for v in (p.b_eq, p.b_in, self.lbL, self.ubU) if v.size]
        self.scale_p = 1.0 + max((float(v.max()) for v in finite), default=0.0)
        self.scale_data = 1.0 + max(np.abs(p.f).max(initial=0.0), np.abs(p.H).max(initial=0.0))

    # inequality operator G = [A_in; -I_L; I_U] and its transpose
    def G(self, z):
        return np.concatenate([self.p.A_in @ z, -z[self.L], z[self.U]])

    def Gt(self, v):
        k_in, k_l = self.k_in, self.k_l
        out = self.p.A_in.T @ v[:k_in]
        out[self.L] -= v[k_in:k_in + k_l]
        out[self.U] += v[k_in + k_l:]
        return out

    def violation(self, z) -> float:
        p = self.p
        parts = [np.abs(p.A_eq @ z - p.b_eq), p.A_in @ z - p.b_in, self.lbL - z[self.L], z[self.U] - self.ubU]
        return max([0.0] + [float(v.max()) for v in parts if v.size]) / self.scale_p

    def dual_residual(self, z, y, lam) -> float:
        p = self.p
        Hz, Gtl, Ety = p.H @ z, self.Gt(lam), p.A_eq.T @ y
        scale_d = 1.0 + max(np.abs(Hz).max(initial=0.0), np.abs(p.f).max(initial=0.0),
                            np.abs(Gtl).max(initial=0.0), np.abs(Ety).max(initial=0.0))
        return float(np.abs(Hz + p.f + Ety + Gtl).max(initial=0.0)) / scale_d

    def start(self, z0):
        """Least-squares starting point shifted into the positive orthant.

        Solves the KKT system with unit scaling, i.e. ``(H + G'G) z = -f + G'h``
        (plus equalities), then sets ``s = h - Gz``, ``lam = Gz - h`` and shifts
        both so they are strictly positive.
        """
        p = self.p
        ones_in = np.ones(self.k_in)
        d_var = np.zeros(self.m)
        d_var[self.L] += 1.0
        d_var[self.U] += 1.0
        rhs = -p.f + self.Gt(self.h)
        if z0 is not None:
            z = np.array(z0, dtype=float)
            y = np.zeros(self.k_eq)
        elif self.factory is not None:
            z = self.factory(d_var, ones_in)(rhs)
            y = np.zeros(self.k_eq)
        else:
            sol = _kkt_solver(p, d_var, ones_in)(np.concatenate([rhs, p.b_eq]))
            z, y = sol[:self.m], sol[self.m:]
        if not np.all(np.isfinite(z)):
            z = np.zeros(self.m)
        s = self.h - self.G(z)
        lam = -s.copy()
        for v in (s, lam):
            if v.size:
                shift = -float(v.min())
                if shift >= 0:
                    v += 1.0 + shift
        return z, y, lam, s

    def run(self, z0) -> QpSolution:
        p, st = self.p, self.st
        if not _equalities_consistent(p):
            z = np.linalg.lstsq(p.A_eq, p.b_eq, rcond=None)[0]
            return QpSolution(z, p.objective(z), Status.INFEASIBLE, self.violation(z), np.inf, 0)

        z, y, lam, s = self.start(z0)
        n_ineq = self.n_ineq
        best = None
        status = Status.MAX_ITERS
        it = 0
        for it in range(st.max_iter + 1):
            r_d = p.H @ z + p.f + p.A_eq.T @ y + self.Gt(lam)
            r_eq = p.A_eq @ z - p.b_eq
            r_g = self.G(z) + s - self.h
            prim = self.violation(z)
            dual = self.dual_residual(z, y, lam)
            slack_res = float(np.abs(r_g).max(initial=0.0)) / self.scale_p
            mu = float(s @ lam) / n_ineq if n_ineq else 0.0
            gap_ok = mu * max(n_ineq, 1) <= st.tol_gap * (1.0 + abs(p.objective(z)))
            merit = max(prim / st.tol_primal, slack_res / st.tol_primal, dual / st.tol_dual)
            if best is None or merit < best[0]:
                best = (merit, z.copy(), y.copy(), lam.copy(), prim, dual)
            if max(prim, slack_res) <= st.tol_primal and dual <= st.tol_dual and gap_ok:
                status = Status.OPTIMAL
                break
            if best[0] <= 1.0 and merit > 1e4:
                break  # residuals met once and rounding now dominates the steps: stalled
            dual_size = max(np.abs(lam).max(initial=0.0), np.abs(y).max(initial=0.0))
            if max(prim, slack_res) > st.tol_primal and dual_size > st.divergence * self.scale_data:
                status = Status.INFEASIBLE
                break
            if it == st.max_iter:
                break
            z, y, lam, s = self.iterate(z, y, lam, s, r_d, r_eq, r_g, mu)
            if not (np.isfinite(z).all() and np.isfinite(lam).all() and np.isfinite(s).all()):
                break  # numerical breakdown, fall back to the best iterate

        if status is Status.OPTIMAL:
            z, y, lam = self.polish(z, y, lam, s)
            return QpSolution(z, p.objective(z), status, self.violation(z), self.dual_residual(z, y, lam),
                              it, y, lam[:self.k_in])
        if status is Status.INFEASIBLE:
            return QpSolution(z, p.objective(z), status, prim, dual, it, y, lam[:self.k_in])
        _, zb, yb, lamb, primb, dualb = best
        return QpSolution(zb, p.objective(zb), status, primb, dualb, it, yb, lamb[:self.k_in])

    def iterate(self, z, y, lam, s, r_d, r_eq, r_g, mu):
        p, n_ineq, k_in, k_l = self.p, self.n_ineq, self.k_in, self.k_l
        D = lam / s
        d_var = np.zeros(self.m)
        d_var[self.L] += D[k_in:k_in + k_l]
        d_var[self.U] += D[k_in + k_l:]
        if self.factory is not None:
            solve_red = self.factory(d_var, D[:k_in])
            if self.refine:
                solve_red = self._refined(solve_red, d_var, D[:k_in])

            def newton_dir(r_c):
                return solve_red(-r_d - self.Gt((r_c + lam * r_g) / s)), np.zeros(0)
        else:
            solve_kkt = _kkt_solver(p, d_var, D[:k_in])

            def newton_dir(r_c):
                sol = solve_kkt(np.concatenate([-r_d - self.Gt((r_c + lam * r_g) / s), -r_eq]))
                return sol[:self.m], sol[self.m:]

        def direction(r_c):
            dz, dy = newton_dir(r_c)
            ds = -r_g - self.G(dz)
            return dz, dy, ds, (r_c - lam * ds) / s

        if n_ineq:
            dz, dy, ds, dlam = direction(-s * lam)
            a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / n_ineq
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dz, dy, ds, dlam = direction(-s * lam - ds * dlam + sigma * mu)
            a = self.st.step_fraction * min(_max_step(s, ds), _max_step(lam, dlam))
        else:
            dz, dy, ds, dlam = direction(np.zeros(0))
            a = 1.0
        z = z + a * dz
        y = y + a * dy
        # keep strictly positive; exact zeros would break the next scaling
        s = np.maximum(s + a * ds, 1e-300)
        lam = np.maximum(lam + a * dlam, 1e-300)
        return z, y, lam, s

    def _refined(self, solve, d_var, d_in):
        """One step of iterative refinement against the explicit Newton matrix."""
        A = self.p.A_in
        H = self.p.H

        def matvec(x):
            return H @ x + d_var * x + A.T @ (d_in * (A @ x))

        def refined(rhs):
            x = solve(rhs)
            return x + solve(rhs - matvec(x))

        return refined

    def polish(self, z, y, lam, s):
        """Re-solve the equality-constrained QP on the guessed active set.

        Interior-point iterates sit a distance ~sqrt(mu) off weakly active
        constraints; the polished point is exact when the active set is right.
        It is kept only if it is feasible, dual feasible and no worse.
        """
        p, st = self.p, self.st
        if not self.st.polish or self.n_ineq == 0 and self.k_eq == 0:
            return z, y, lam
        active = np.flatnonzero(lam > s)
        rows = []
        for i in active:
            if i < self.k_in:
                rows.append(p.A_in[i])
            else:
                e = np.zeros(self.m)
                j = i - self.k_in
                if j < self.k_l:
                    e[self.L[j]] = -1.0
                else:
                    e[self.U[j - self.k_l]] = 1.0
                rows.append(e)
        C = np.vstack([p.A_eq] + ([np.array(rows)] if rows else []))
        d = np.concatenate([p.b_eq, self.h[active]])
        k = C.shape[0]
        K = np.block([[p.H, C.T], [C, np.zeros((k, k))]])
        rhs = np.concatenate([-p.f, d])
        try:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            return z, y, lam
        zp = sol[:self.m]
        yp = sol[self.m:self.m + self.k_eq]
        lp = np.zeros(self.n_ineq)
        lp[active] = sol[self.m + self.k_eq:]
        if (lp < -st.tol_dual).any():
            return z, y, lam
        lp = np.maximum(lp, 0.0)
        ok = (self.violation(zp) <= st.tol_primal and self.dual_residual(zp, yp, lp) <= st.tol_dual
              and p.objective(zp) <= p.objective(z) + st.tol_gap * (1.0 + abs(p.objective(z))))
        return (zp, yp, lp) if ok else (z, y, lam)
