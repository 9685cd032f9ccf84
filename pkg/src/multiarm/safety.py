"""Barrier functions and their reduction to affine constraint rows on the
joint-acceleration decision variable.

Position-dependent barriers have relative degree two under the
double-integrator task dynamics; their cascaded condition with linear
class-K slopes gamma1/gamma2 reduces to a single affine row

    (dh/dq) z >= -(d hdot/dq) qd - gamma1*hdot - gamma2*(hdot + gamma1*h).

The joint-velocity barrier has relative degree one and differentiates once.
Non-smooth minima (body clearance, self collision) use the active-pair
selection with deterministic tie-breaking; the second-order drift term is
computed by central finite differences of hdot along the current flow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import _kernels
from .coordination import TriggerState
from .kinematics import (
    EmptyObstacleSetError,
    FrameSet,
    ManipulatorModel,
    ObstacleSnapshot,
    capsule_segment,
    forward_kinematics,
    geometric_jacobian,
    min_body_clearance,
    self_collision_distance,
    sphere_center_jacobian,
)

_FD_STEP = 1e-6


class CoincidentEndEffectorsError(ValueError):
    pass


class DegreeMismatchError(ValueError):
    pass


class BarrierKind(enum.Enum):
    ENV = "env"
    INTER = "inter"
    JOINT_POS_LO = "joint_pos_lo"
    JOINT_POS_HI = "joint_pos_hi"
    JOINT_VEL = "joint_vel"
    SELF_COLLISION = "self_collision"


RELATIVE_DEGREE = {
    BarrierKind.ENV: 2,
    BarrierKind.INTER: 2,
    BarrierKind.JOINT_POS_LO: 2,
    BarrierKind.JOINT_POS_HI: 2,
    BarrierKind.JOINT_VEL: 1,
    BarrierKind.SELF_COLLISION: 2,
}


@dataclass(frozen=True, eq=False)
class BarrierEval:
    """One barrier sampled at the current state.

    `hddot_drift` is the part of the barrier's second time derivative that
    does not depend on the commanded joint acceleration (zero for barriers
    affine in q).
    """

    h: float
    grad_q: np.ndarray
    hdot: float
    kind: BarrierKind
    hddot_drift: float = 0.0
    indices: tuple = ()


@dataclass(frozen=True, eq=False)
class BarrierRow:
    """Affine inequality a . z >= b_lo on the joint acceleration."""

    a: np.ndarray
    b_lo: float
    source: tuple
    slackable: bool = False

    def __post_init__(self):
        a = self.a if isinstance(self.a, np.ndarray) else np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        # finite iff the sum is finite: cheap enough for the per-tick path
        if not math.isfinite(float(a.sum()) + self.b_lo):
            raise ValueError(f"non-finite constraint row from {self.source}")


@dataclass(frozen=True)
class ClassKParams:
    """Linear class-K-infinity slopes for the cascaded barrier condition."""

    gamma1: float = 5.0
    gamma2: float = 5.0

    def __post_init__(self):
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("class-K slopes must be strictly positive")


@dataclass(frozen=True)
class MarginSet:
    """Trigger geometry for one barrier family: margin < alert, with hysteresis."""

    margin: float
    alert: float
    hyst: float = 0.02


@dataclass(frozen=True)
class SafetyMargins:
    env: MarginSet
    inter: MarginSet
    delta_self: float = 0.02
    eps_sens: float = 0.0
    r_form_bound: float = 0.0
    # sampled-data compensation: constraint rows enforce this much inside the
    # reported margins so an equality ride cannot cross zero between ticks
    discretization_buffer: float = 5e-4

    def validate(self) -> list[str]:
        problems = []
        if not (self.env.alert >= self.env.margin):
            problems.append("env alert distance must be >= env margin")
        if not (self.env.margin > self.r_form_bound + self.eps_sens):
            problems.append("env margin must exceed formation radius bound plus sensing slack")
        if self.env.hyst <= 0:
            problems.append("env hysteresis must be > 0")
        if not (self.inter.alert >= self.inter.margin > 0):
            problems.append("inter alert must be >= inter margin > 0")
        if self.inter.hyst <= 0:
            problems.append("inter hysteresis must be > 0")
        if self.delta_self <= 0:
            problems.append("self-collision margin must be > 0")
        if self.discretization_buffer < 0:
            problems.append("discretization buffer must be >= 0")
        return problems


# ------------------------------------------------------------------ environmental

def _env_hdot(model: ManipulatorModel, q: np.ndarray, qd: np.ndarray,
              k: int, o_center: np.ndarray, o_vel: np.ndarray) -> float:
    """hdot of the active sphere/obstacle pair at a (possibly shifted) state."""
    from .kinematics import _frames_raw
    r_all, p_all, _ = _frames_raw(model, q)
    link = int(model.sphere_link[k])
    c = p_all[link] + r_all[link] @ model.sphere_local[k]
    diff = c - o_center
    dist = np.linalg.norm(diff)
    n_hat = diff / max(dist, 1e-12)
    jac = _kernels.point_jacobian(r_all, p_all, link, c)
    return float(n_hat @ (jac @ qd - o_vel))


# pairs within this distance of the minimizing pair also get constraint rows,
# so the barrier keeps holding when the nonsmooth minimum switches selections
ACTIVE_PAIR_BAND = 0.02


def _env_eval_for_pair(model: ManipulatorModel, q, qd, obstacles: ObstacleSnapshot,
                       d_margin_env: float, fs: FrameSet, k: int, o: int,
                       clearance: float) -> BarrierEval:
    c = fs.sphere_centers[k]
    diff = c - obstacles.centers[o]
    n_hat = diff / max(np.linalg.norm(diff), 1e-12)
    jac_c = sphere_center_jacobian(model, fs, k)
    grad_q = jac_c.T @ n_hat
    o_vel = obstacles.velocities[o]
    hdot = float(n_hat @ (jac_c @ qd - o_vel))
    e = _FD_STEP
    hd_plus = _env_hdot(model, q + e * qd, qd, k, obstacles.centers[o] + e * o_vel, o_vel)
    hd_minus = _env_hdot(model, q - e * qd, qd, k, obstacles.centers[o] - e * o_vel, o_vel)
    drift = (hd_plus - hd_minus) / (2 * e)
    return BarrierEval(h=clearance - d_margin_env, grad_q=grad_q, hdot=hdot,
                       kind=BarrierKind.ENV, hddot_drift=drift, indices=(k, o))


def eval_env_barrier(model: ManipulatorModel, q, qd, obstacles: ObstacleSnapshot,
                     d_margin_env: float, fs: FrameSet | None = None) -> BarrierEval:
    """Environmental barrier h = d_body - margin with active-pair gradient.

    Obstacle motion enters hdot and the drift term through the snapshot
    velocities.
    """
    if obstacles.count == 0:
        raise EmptyObstacleSetError("obstacle set is empty")
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if fs is None:
        fs = forward_kinematics(model, q)
    d, k, o = min_body_clearance(model, q, obstacles, fs=fs)
    return _env_eval_for_pair(model, q, qd, obstacles, d_margin_env, fs, k, o, d)


def eval_env_barriers(model: ManipulatorModel, q, qd, obstacles: ObstacleSnapshot,
                      d_margin_env: float, fs: FrameSet | None = None,
                      band: float = ACTIVE_PAIR_BAND) -> list[BarrierEval]:
    """Environmental barriers for the minimizing pair and every pair within
    `band` of it, ordered by clearance (ties by pair index)."""
    if obstacles.count == 0:
        raise EmptyObstacleSetError("obstacle set is empty")
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if fs is None:
        fs = forward_kinematics(model, q)
    gaps = (np.linalg.norm(fs.sphere_centers[:, None, :] - obstacles.centers[None, :, :],
                           axis=2)
            - model.sphere_radius[:, None] - obstacles.radii[None, :])
    d_min = float(gaps.min())
    ks, os_ = np.nonzero(gaps <= d_min + band)
    order = np.lexsort((os_, ks, gaps[ks, os_]))
    return [_env_eval_for_pair(model, q, qd, obstacles, d_margin_env, fs,
                               int(ks[i]), int(os_[i]), float(gaps[ks[i], os_[i]]))
            for i in order]


# ------------------------------------------------------------------ inter-agent

def _inter_hdot(model: ManipulatorModel, q: np.ndarray, qd: np.ndarray,
                p_other: np.ndarray, v_other: np.ndarray) -> float:
    from .kinematics import _frames_raw
    r_all, p_all, p_ee = _frames_raw(model, q)
    jac = _kernels.geometric_jacobian(r_all, p_all, p_ee)
    diff = p_ee - p_other
    n_hat = diff / max(np.linalg.norm(diff), 1e-12)
    return float(n_hat @ (jac[:3] @ qd - v_other))


def eval_inter_barrier(model: ManipulatorModel, q, qd, p_other, v_other,
                       d_margin_inter: float, fs: FrameSet | None = None,
                       jac: np.ndarray | None = None) -> BarrierEval:
    """Pairwise end-effector separation barrier, evaluated for the own side.

    The drift term assumes the neighbor keeps its current velocity (its
    acceleration contribution is resolved by the symmetric split at row
    assembly).
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    p_other = np.asarray(p_other, dtype=float)
    v_other = np.asarray(v_other, dtype=float)
    if fs is None:
        fs = forward_kinematics(model, q)
    if jac is None:
        jac = geometric_jacobian(model, q, fs)
    diff = fs.p - p_other
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise CoincidentEndEffectorsError("end effectors coincide")
    n_hat = diff / dist
    h = dist - d_margin_inter
    grad_q = jac[:3].T @ n_hat
    v_own = jac[:3] @ qd
    hdot = float(n_hat @ (v_own - v_other))
    e = _FD_STEP
    hd_plus = _inter_hdot(model, q + e * qd, qd, p_other + e * v_other, v_other)
    hd_minus = _inter_hdot(model, q - e * qd, qd, p_other - e * v_other, v_other)
    drift = (hd_plus - hd_minus) / (2 * e)
    return BarrierEval(h=h, grad_q=grad_q, hdot=hdot, kind=BarrierKind.INTER,
                       hddot_drift=drift)


# ------------------------------------------------------------------ intrinsic

def _capsule_endpoints_raw(model: ManipulatorModel, r_all, p_all, link: int):
    a = p_all[link]
    if link < model.n_joints:
        b = p_all[link + 1]
    else:
        b = p_all[link] + r_all[link] @ model.ee_offset[:3, 3]
    return a, b


def _self_collision_grad(model: ManipulatorModel, q: np.ndarray,
                         pair: tuple, fs: FrameSet | None = None) -> tuple[float, np.ndarray]:
    if fs is None:
        from .kinematics import _frames_raw
        r_all, p_all, _ = _frames_raw(model, q)
    else:
        r_all, p_all = fs.joint_rotations, fs.joint_origins
    i, j = pair
    a0, a1 = _capsule_endpoints_raw(model, r_all, p_all, i)
    b0, b1 = _capsule_endpoints_raw(model, r_all, p_all, j)
    _, s, t = _kernels.segment_closest(a0, a1, b0, b1)
    pa = a0 + s * (a1 - a0)
    pb = b0 + t * (b1 - b0)
    diff = pa - pb
    dist = np.linalg.norm(diff)
    n_hat = diff / max(dist, 1e-12)
    jac_a = _kernels.point_jacobian(r_all, p_all, i, pa)
    jac_b = _kernels.point_jacobian(r_all, p_all, j, pb)
    return float(dist), (jac_a - jac_b).T @ n_hat


_BASIS_CACHE: dict = {}


def _basis(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cached (+I, -I, 0) gradient rows for the joint-limit barriers."""
    if n not in _BASIS_CACHE:
        eye = np.eye(n)
        eye.setflags(write=False)
        neg = -np.eye(n)
        neg.setflags(write=False)
        zero = np.zeros(n)
        zero.setflags(write=False)
        _BASIS_CACHE[n] = (eye, neg, zero)
    return _BASIS_CACHE[n]


def eval_intrinsic_barriers(model: ManipulatorModel, q, qd, delta_self: float,
                            fs: FrameSet | None = None) -> list[BarrierEval]:
    """Always-active barriers: 2n joint position, one velocity, one
    self-collision (when non-adjacent pairs are configured)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    n = model.n_joints
    eye, neg_eye, zero = _basis(n)
    out = []
    for k in range(n):
        out.append(BarrierEval(h=q[k] - model.q_min[k], grad_q=eye[k],
                               hdot=qd[k], kind=BarrierKind.JOINT_POS_LO,
                               indices=(k,)))
    for k in range(n):
        out.append(BarrierEval(h=model.q_max[k] - q[k], grad_q=neg_eye[k],
                               hdot=-qd[k], kind=BarrierKind.JOINT_POS_HI,
                               indices=(k,)))
    h_v = model.qd_max**2 - float(qd @ qd)
    out.append(BarrierEval(h=h_v, grad_q=zero, hdot=0.0,
                           kind=BarrierKind.JOINT_VEL))
    if model.nonadjacent_pairs:
        if fs is None:
            fs = forward_kinematics(model, q)
        d_min, _ = self_collision_distance(model, q, fs=fs)
        for pair in _near_min_self_pairs(model, fs, d_min):
            d, grad = _self_collision_grad(model, q, pair, fs=fs)
            h = d - model.capsule_radius[pair[0]] - model.capsule_radius[pair[1]] - delta_self
            hdot = float(grad @ qd)
            e = _FD_STEP
            _, g_plus = _self_collision_grad(model, q + e * qd, pair)
            _, g_minus = _self_collision_grad(model, q - e * qd, pair)
            drift = float((g_plus - g_minus) @ qd) / (2 * e)
            out.append(BarrierEval(h=h, grad_q=grad, hdot=hdot,
                                   kind=BarrierKind.SELF_COLLISION,
                                   hddot_drift=drift, indices=pair))
    return out


def _near_min_self_pairs(model: ManipulatorModel, fs: FrameSet, d_min: float,
                         band: float = ACTIVE_PAIR_BAND) -> list[tuple]:
    """Configured link pairs within `band` of the minimum capsule distance,
    minimum first; the nonsmooth minimum needs every near-active selection
    constrained, as with the environmental pairs."""
    scored = []
    for pair in model.nonadjacent_pairs:
        i, j = pair
        a0, a1 = capsule_segment(model, fs, i)
        b0, b1 = capsule_segment(model, fs, j)
        d, _, _ = _kernels.segment_closest(a0, a1, b0, b1)
        d = float(d) - model.capsule_radius[i] - model.capsule_radius[j]
        if d <= d_min + band:
            scored.append((d, pair))
    scored.sort(key=lambda x: (x[0], x[1]))
    return [pair for _, pair in scored]


# ------------------------------------------------------------------ rows

def hocbf_row(ev: BarrierEval, qd, params: ClassKParams,
              relative_degree: int) -> BarrierRow:
    """Reduce one barrier to its affine row on the joint acceleration."""
    if RELATIVE_DEGREE[ev.kind] != relative_degree:
        raise DegreeMismatchError(
            f"{ev.kind.value} barrier has relative degree {RELATIVE_DEGREE[ev.kind]}, "
            f"got {relative_degree}")
    qd = np.asarray(qd, dtype=float)
    slackable = ev.kind in (BarrierKind.ENV, BarrierKind.INTER)
    if relative_degree == 1:
        a = -2.0 * qd
        b_lo = -params.gamma1 * ev.h
    else:
        a = ev.grad_q
        b = ev.hdot + params.gamma1 * ev.h
        b_lo = -ev.hddot_drift - params.gamma1 * ev.hdot - params.gamma2 * b
    return BarrierRow(a=a, b_lo=float(b_lo), source=(ev.kind.value,) + ev.indices,
                      slackable=slackable)


def assemble_constraints(agent: int, model: ManipulatorModel, q, qd,
                         triggers: TriggerState, leader: int,
                         obstacles: ObstacleSnapshot | None,
                         neighbor_ee: Mapping[int, tuple],
                         margins: SafetyMargins, params: ClassKParams,
                         fs: FrameSet | None = None, with_evals: bool = False):
    """Constraint rows for one agent at the current tick.

    Intrinsic rows always; the environmental row only on the triggered
    leader; one half-responsibility inter row per latched edge at this
    agent. `neighbor_ee` maps neighbor id to its (p, v) for latched edges.
    With `with_evals`, returns (rows, barrier evaluations) for telemetry.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if fs is None:
        fs = forward_kinematics(model, q)
    buf = margins.discretization_buffer
    rows = []
    evals = eval_intrinsic_barriers(model, q, qd, margins.delta_self + buf, fs=fs)
    for ev in evals:
        rows.append(hocbf_row(ev, qd, params, RELATIVE_DEGREE[ev.kind]))
    if agent == leader and triggers.env.get(agent, 0) and obstacles is not None:
        for ev in eval_env_barriers(model, q, qd, obstacles, margins.env.margin + buf, fs=fs):
            evals = evals + [ev]
            rows.append(hocbf_row(ev, qd, params, 2))
    for edge in triggers.active_edges():
        if agent not in edge:
            continue
        other = edge[0] if edge[1] == agent else edge[1]
        if other not in neighbor_ee:
            continue
        p_j, v_j = neighbor_ee[other]
        ev = eval_inter_barrier(model, q, qd, p_j, v_j, margins.inter.margin + buf, fs=fs)
        evals = evals + [ev]
        row = hocbf_row(ev, qd, params, 2)
        # symmetric half-split of the shared requirement across the pair
        rows.append(replace(row, b_lo=row.b_lo / 2.0,
                            source=row.source + (min(edge), max(edge))))
    if with_evals:
        return rows, evals
    return rows


def formation_radius_bound(models: Mapping[int, ManipulatorModel],
                           offsets_to_reference: Mapping[int, np.ndarray]) -> float:
    """Conservative offline bound on the formation envelope around any leader.

    For every leader choice, every other agent's spheres stay within
    (formation offset + reach envelope + sphere slack) of the leader's
    nearest sphere; the maximum over agents and leaders is returned.
    """
    reach = {}
    for i, m in models.items():
        span = float(np.sum(np.abs(m.mdh[:, 1])) + np.sum(np.abs(m.mdh[:, 2])))
        span += float(np.linalg.norm(m.ee_offset[:3, 3]))
        sphere_extent = float(np.max(np.linalg.norm(m.sphere_local, axis=1) + m.sphere_radius))
        reach[i] = span + sphere_extent
    agents = sorted(models)
    best = 0.0
    for lead in agents:
        r_min_lead = float(np.min(models[lead].sphere_radius))
        for j in agents:
            if j == lead:
                continue
            d = float(np.linalg.norm(np.asarray(offsets_to_reference[j], float)
                                     - np.asarray(offsets_to_reference[lead], float)))
            r_max_j = float(np.max(models[j].sphere_radius))
            best = max(best, d + reach[j] + r_max_j - r_min_lead)
    return best
