"""Dense strictly convex QP for the per-agent safety filter.

Minimizes the deviation from the nominal joint acceleration subject to
affine barrier rows, torque-feasibility constraints, and an optional
penalized slack shared by the event-triggered rows:

    min  1/2 ||z - z_nom||^2  (+ p * slack^2)
    s.t. a_k . z (+ slack if row k is slackable) >= b_k,   z_lo <= z <= z_hi

The solver is a dual active-set method: it starts from the unconstrained
optimum and adds violated constraints one at a time, taking partial steps
that drop working-set rows whose multipliers would turn negative. No
feasible starting point is required, every step increases the dual
objective, and the working set stays linearly independent, so termination
is guaranteed for strictly convex problems. Ties break on the lowest row
index to keep runs bitwise deterministic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control_core import bias_torque, mass_matrix
from .kinematics import ManipulatorModel
from .safety import BarrierRow

_VIOL_TOL = 1e-10
_STEP_TOL = 1e-12


class SingularInertiaError(ValueError):
    pass


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    SLACK_ACTIVE = "slack_active"
    INFEASIBLE = "infeasible"


@dataclass(eq=False)
class QpProblem:
    """Least-deviation program over the joint acceleration."""

    z_nom: np.ndarray
    rows: list = field(default_factory=list)
    box: tuple | None = None          # (z_lo, z_hi), entries may be +-inf
    slack_penalty: float | None = None

    def __post_init__(self):
        self.z_nom = np.ascontiguousarray(self.z_nom, dtype=float)
        if self.box is not None:
            lo = np.ascontiguousarray(self.box[0], dtype=float)
            hi = np.ascontiguousarray(self.box[1], dtype=float)
            if np.any(lo > hi):
                raise ValueError("box lower bound exceeds upper bound")
            self.box = (lo, hi)
        if self.slack_penalty is not None and self.slack_penalty <= 0:
            raise ValueError("slack penalty must be strictly positive")

    @property
    def n(self) -> int:
        return self.z_nom.shape[0]

    def constraint_table(self):
        """All constraints as (A, b, slackable, labels) over z.

        Order: barrier rows, box lower bounds, box upper bounds. Infinite
        box entries are omitted.
        """
        n = self.n
        extra = []
        if self.box is not None:
            lo, hi = self.box
            for i in range(n):
                if np.isfinite(lo[i]):
                    extra.append((i, 1.0, lo[i], ("box_lo", i)))
            for i in range(n):
                if np.isfinite(hi[i]):
                    extra.append((i, -1.0, -hi[i], ("box_hi", i)))
        m = len(self.rows) + len(extra)
        a_mat = np.zeros((m, n))
        b_vec = np.empty(m)
        s_vec = np.zeros(m, dtype=bool)
        labels = []
        for idx, row in enumerate(self.rows):
            a_mat[idx] = row.a
            b_vec[idx] = row.b_lo
            s_vec[idx] = row.slackable
            labels.append(("row", idx) + tuple(row.source))
        for k, (i, sign, b, label) in enumerate(extra):
            r = len(self.rows) + k
            a_mat[r, i] = sign
            b_vec[r] = b
            labels.append(label)
        return a_mat, b_vec, s_vec, labels


@dataclass(eq=False)
class QpSolution:
    z: np.ndarray
    slack: float
    active_set: tuple
    status: QpStatus
    iterations: int
    multipliers: dict = field(default_factory=dict)


def solve(problem: QpProblem, warm_start: Sequence[int] = ()) -> QpSolution:
    """Solve the safety-filter QP to its unique KKT point.

    The slack is a feasibility fallback: the problem is first solved with
    every row hard, and only an infeasible outcome re-solves with the
    penalized slack attached to the slackable rows. `warm_start` lists
    constraint indices (into the problem's constraint table) to examine
    first when hunting violated rows.
    """
    if problem.slack_penalty is not None:
        hard = QpProblem(z_nom=problem.z_nom, rows=problem.rows, box=problem.box,
                         slack_penalty=None)
        sol = _solve_fixed(hard, warm_start, force_slack=False)
        if sol.status is not QpStatus.INFEASIBLE:
            return sol
        return _solve_fixed(problem, warm_start, force_slack=True)
    return _solve_fixed(problem, warm_start, force_slack=False)


def _solve_fixed(problem: QpProblem, warm_start: Sequence[int] = (),
                 force_slack: bool = False) -> QpSolution:
    n = problem.n
    a_mat, b_vec, slackable, _ = problem.constraint_table()
    use_slack = force_slack and problem.slack_penalty is not None and bool(np.any(slackable))
    if use_slack:
        dim = n + 1
        h_inv = np.ones(dim)
        h_inv[n] = 1.0 / (2.0 * problem.slack_penalty)
        a_full = np.hstack([a_mat, slackable[:, None].astype(float)])
        # slack >= 0 as the final internal constraint
        slack_row = np.zeros(dim)
        slack_row[n] = 1.0
        a_full = np.vstack([a_full, slack_row])
        b_full = np.concatenate([b_vec, [0.0]])
        x0 = np.concatenate([problem.z_nom, [0.0]])
    else:
        dim = n
        h_inv = np.ones(dim)
        a_full = a_mat
        b_full = b_vec
        x0 = problem.z_nom.copy()

    x = x0.copy()
    working: list[int] = []
    u: list[float] = []
    m_rows = a_full.shape[0]
    max_iter = 50 * (m_rows + 5)
    iterations = 0
    scale = 1.0 + np.abs(b_full).max(initial=0.0)

    warm = [k for k in warm_start if 0 <= k < m_rows]

    while True:
        iterations += 1
        if iterations > max_iter:
            raise RuntimeError("active-set iteration limit exceeded")
        slacks = a_full @ x - b_full
        threshold = -_VIOL_TOL * scale
        candidate = -1
        worst = threshold
        # previously-active rows first: re-adding them usually ends the hunt
        for k in warm:
            if k not in working and slacks[k] < worst:
                worst = slacks[k]
                candidate = k
        if candidate < 0:
            worst = threshold
            for k in range(m_rows):
                if k not in working and slacks[k] < worst:
                    worst = slacks[k]
                    candidate = k
        if candidate < 0:
            break
        a = a_full[candidate]
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise RuntimeError("active-set iteration limit exceeded")
            curvature = float(a @ (h_inv * a))
            if working:
                a_w = a_full[working]
                g = a_w * h_inv @ a_w.T
                rhs = a_w * h_inv @ a
                try:
                    r = np.linalg.solve(g, rhs)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(g, rhs, rcond=None)[0]
                z_dir = h_inv * (a - a_w.T @ r)
            else:
                r = np.zeros(0)
                z_dir = h_inv * a
            denom = float(a @ z_dir)
            s_p = float(a @ x - b_full[candidate])
            # dependence test is relative to the unprojected curvature so a
            # nearly-dependent row cannot sneak in with a tiny positive denom
            if denom > 1e-9 * max(curvature, _STEP_TOL):
                t2 = -s_p / denom
            else:
                t2 = np.inf
            t1 = np.inf
            drop = -1
            for pos, k in enumerate(working):
                if r[pos] > _STEP_TOL:
                    ratio = u[pos] / r[pos]
                    if ratio < t1 - 1e-15 or (abs(ratio - t1) <= 1e-15 and (drop < 0 or k < working[drop])):
                        t1 = ratio
                        drop = pos
            t = min(t1, t2)
            if not np.isfinite(t):
                return QpSolution(z=x[:n].copy(), slack=float(x[n]) if use_slack else 0.0,
                                  active_set=tuple(sorted(working)),
                                  status=QpStatus.INFEASIBLE, iterations=iterations,
                                  multipliers=dict(zip(working, u)))
            if np.isfinite(t2):
                x = x + t * z_dir
            for pos in range(len(working)):
                u[pos] -= t * r[pos]
            u_p += t
            if t2 <= t1:
                working.append(candidate)
                u.append(u_p)
                break
            del working[drop]
            del u[drop]

    slack_val = float(x[n]) if use_slack else 0.0
    status = QpStatus.SLACK_ACTIVE if slack_val > 1e-9 else QpStatus.OPTIMAL
    mults = {k: float(v) for k, v in zip(working, u)}
    active = tuple(sorted(k for k in working if not use_slack or k < m_rows - 1))
    return QpSolution(z=x[:n].copy(), slack=slack_val, active_set=active,
                      status=status, iterations=iterations, multipliers=mults)


class QpSolver:
    """Per-agent solver instance carrying warm-start state between ticks."""

    def __init__(self):
        self._last_active: tuple = ()

    def solve(self, problem: QpProblem) -> QpSolution:
        sol = solve(problem, warm_start=self._last_active)
        self._last_active = sol.active_set if sol.status != QpStatus.INFEASIBLE else ()
        return sol


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Max of stationarity, primal feasibility, dual feasibility, and
    complementary-slackness residuals at the reported solution.

    Solutions from the hard stage (slack == 0) answer the hard system;
    the slack-augmented system applies only when the fallback engaged.
    """
    a_mat, b_vec, slackable, _ = problem.constraint_table()
    use_slack = (problem.slack_penalty is not None and bool(np.any(slackable))
                 and solution.slack > 0.0)
    if use_slack:
        x = np.concatenate([solution.z, [solution.slack]])
        a_full = np.hstack([a_mat, slackable[:, None].astype(float)])
        slack_row = np.zeros(problem.n + 1)
        slack_row[problem.n] = 1.0
        a_full = np.vstack([a_full, slack_row])
        b_vec = np.concatenate([b_vec, [0.0]])
        grad = np.concatenate([solution.z - problem.z_nom,
                               [2.0 * problem.slack_penalty * solution.slack]])
    else:
        x = solution.z
        a_full = a_mat
        grad = solution.z - problem.z_nom
    lam = np.zeros(a_full.shape[0])
    for k, v in solution.multipliers.items():
        if k < a_full.shape[0]:
            lam[k] = v
    slacks = a_full @ x - b_vec if a_full.size else np.zeros(0)
    stationarity = grad - (a_full.T @ lam if a_full.size else 0.0)
    res = float(np.max(np.abs(stationarity))) if np.size(stationarity) else 0.0
    if slacks.size:
        res = max(res, float(np.max(np.maximum(0.0, -slacks))))
        res = max(res, float(np.max(np.abs(lam * slacks))))
        res = max(res, float(np.max(np.maximum(0.0, -lam))))
    return res


def torque_polytope_rows(m: np.ndarray, bias: np.ndarray,
                         tau_min: np.ndarray, tau_max: np.ndarray) -> list[BarrierRow]:
    """Exact torque-limit constraints as 2n affine rows on the acceleration."""
    rows = []
    n = m.shape[0]
    for r in range(n):
        if np.isfinite(tau_min[r]):
            rows.append(BarrierRow(a=m[r], b_lo=float(tau_min[r] - bias[r]),
                                   source=("torque_lo", r)))
        if np.isfinite(tau_max[r]):
            rows.append(BarrierRow(a=-m[r], b_lo=float(bias[r] - tau_max[r]),
                                   source=("torque_hi", r)))
    return rows


def torque_box(model: ManipulatorModel, q, qd) -> tuple[np.ndarray, np.ndarray]:
    """Conservative interval bounds on the acceleration from the torque limits.

    Anchored at zero acceleration: the diagonal-only interval is shrunk
    uniformly until every torque row holds over the whole box, so the box is
    a subset of the exact torque-feasible polytope.
    """
    m = mass_matrix(model, q)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularInertiaError("inertia matrix is not positive definite")
    bias = bias_torque(model, q, qd)
    slack_hi = model.tau_max - bias
    slack_lo = model.tau_min - bias
    if np.all(np.isinf(model.tau_max)) and np.all(np.isinf(model.tau_min)):
        n = model.n_joints
        return np.full(n, -np.inf), np.full(n, np.inf)
    if np.any(slack_hi < 0) or np.any(slack_lo > 0):
        raise ValueError("bias torque already violates the torque limits")
    big = 1e12
    hi0 = np.minimum(slack_hi / np.diag(m), big)
    lo0 = np.maximum(slack_lo / np.diag(m), -big)
    upper = np.where(m > 0, m * hi0[None, :], m * lo0[None, :]).sum(axis=1)
    lower = np.where(m > 0, m * lo0[None, :], m * hi0[None, :]).sum(axis=1)
    s = 1.0
    for r in range(model.n_joints):
        if upper[r] > slack_hi[r]:
            s = min(s, slack_hi[r] / upper[r])
        if lower[r] < slack_lo[r]:
            s = min(s, slack_lo[r] / lower[r])
    return s * lo0, s * hi0
