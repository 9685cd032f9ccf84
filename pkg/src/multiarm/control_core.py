"""Nominal control pipeline: task-space consensus laws, damped-least-squares
acceleration mapping, null-space regulation, and inverse-dynamics torque.

The consensus laws treat each end effector as a double integrator in task
space; the mapping layer realizes the commanded task acceleration on the
joint-space plant through the regularized differential kinematics and the
rigid-body inverse dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .kinematics import ManipulatorModel, _check_q, forward_kinematics, geometric_jacobian, jacobian_dot
from .so3 import log_map_any


class MissingNeighborStateError(KeyError):
    pass


class MissingReferenceError(ValueError):
    pass


class TaskSpaceState(NamedTuple):
    """End-effector state: position, linear velocity, rotation, angular velocity."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class ConsensusGains:
    k_p: float = 3.0
    k_d: float = 1.0
    k_theta: float = 3.0
    k_omega: float = 0.5
    k_null: float = 1.0

    def __post_init__(self):
        for name in ("k_p", "k_d", "k_theta", "k_omega", "k_null"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


class ReferenceSample(NamedTuple):
    """Reference trajectory state available to agents with direct access."""

    p0: np.ndarray
    pd0: np.ndarray
    pdd0: np.ndarray
    R0: np.ndarray
    w0: np.ndarray
    wd0: np.ndarray


@dataclass(frozen=True, eq=False)
class FormationSpec:
    """Formation geometry: desired displacements and reference access flags.

    `offsets_to_reference[i]` is the desired displacement of agent i from
    the reference point; pairwise offsets follow as their differences, and
    an explicit per-edge override map may pin them directly.
    """

    offsets_to_reference: Mapping[int, np.ndarray]
    reference_access: Mapping[int, int]
    edge_offsets: Mapping[tuple, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        d0 = {int(i): np.asarray(v, dtype=float) for i, v in self.offsets_to_reference.items()}
        object.__setattr__(self, "offsets_to_reference", d0)
        object.__setattr__(self, "reference_access",
                           {int(i): int(v) for i, v in self.reference_access.items()})
        object.__setattr__(self, "edge_offsets",
                           {(int(a), int(b)): np.asarray(v, dtype=float)
                            for (a, b), v in self.edge_offsets.items()})

    def offset(self, i: int, j: int) -> np.ndarray:
        """Desired displacement p_i - p_j at the formation equilibrium."""
        if (i, j) in self.edge_offsets:
            return self.edge_offsets[(i, j)]
        if (j, i) in self.edge_offsets:
            return -self.edge_offsets[(j, i)]
        return self.offsets_to_reference[i] - self.offsets_to_reference[j]

    def validate(self) -> list[str]:
        problems = []
        if not any(self.reference_access.values()):
            problems.append("at least one agent must have reference access")
        for (a, b), v in self.edge_offsets.items():
            want = self.offsets_to_reference[a] - self.offsets_to_reference[b]
            if np.linalg.norm(v - want) > 1e-9:
                problems.append(
                    f"edge offset ({a},{b}) inconsistent with reference offsets")
        return problems


def consensus_accel(i: int, own: TaskSpaceState,
                    neighbor_states: Mapping[int, TaskSpaceState],
                    neighbors: Sequence[int],
                    spec: FormationSpec,
                    gains: ConsensusGains,
                    reference: Optional[ReferenceSample] = None,
                    has_reference: Optional[bool] = None) -> np.ndarray:
    """Distributed PD-like task acceleration for agent i.

    Uses only agent i's state, its listed neighbors, and (when the agent has
    reference access) the reference sample. Returns the stacked 6-vector
    (linear, angular).
    """
    if has_reference is None:
        has_reference = bool(spec.reference_access.get(i, 0))
    u_pos = np.zeros(3)
    u_ori = np.zeros(3)
    for j in neighbors:
        if j not in neighbor_states:
            raise MissingNeighborStateError(f"state of neighbor {j} not provided")
        other = neighbor_states[j]
        d_ij = spec.offset(i, j)
        u_pos -= gains.k_p * ((own.p - other.p) - d_ij) + gains.k_d * (own.v - other.v)
        # near-pi relative rotations fall back to the fixed-convention branch
        theta_ij = log_map_any(own.R @ other.R.T)
        u_ori -= gains.k_theta * theta_ij + gains.k_omega * (own.w - other.w)
    if has_reference:
        if reference is None:
            raise MissingReferenceError(f"agent {i} has reference access but no sample")
        d_0i = spec.offsets_to_reference[i]
        u_pos -= (gains.k_p * (own.p - reference.p0 - d_0i)
                  + gains.k_d * (own.v - reference.pd0)
                  - reference.pdd0)
        theta_0i = log_map_any(own.R @ reference.R0.T)
        u_ori -= (gains.k_theta * theta_0i
                  + gains.k_omega * (own.w - reference.w0)
                  - reference.wd0)
    return np.concatenate([u_pos, u_ori])


def damped_pinv(jac: np.ndarray, lam: float) -> np.ndarray:
    """Tikhonov-regularized right pseudoinverse J^T (J J^T + lam^2 I)^-1."""
    m = jac.shape[0]
    return jac.T @ np.linalg.inv(jac @ jac.T + lam**2 * np.eye(m))


def dls_from_jacobian(jac: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve the regularized task-tracking problem for a precomputed Jacobian."""
    m = jac.shape[0]
    y = np.linalg.solve(jac @ jac.T + lam**2 * np.eye(m), rhs)
    return jac.T @ y


def dls_accel_map(model: ManipulatorModel, q, qd, u: np.ndarray, lam: float) -> np.ndarray:
    """Joint acceleration tracking the task acceleration u through the damped
    pseudoinverse; bounded for all q including singular configurations."""
    if lam <= 0:
        raise ValueError("damping factor must be > 0")
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    jac = geometric_jacobian(model, q)
    drift = jacobian_dot(model, q, qd) @ qd
    return dls_from_jacobian(jac, np.asarray(u, dtype=float) - drift, lam)


def nullspace_projector(jac: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """I - J^+ J with the exact (lam=0) or damped pseudoinverse."""
    n = jac.shape[1]
    if lam > 0:
        pinv = damped_pinv(jac, lam)
    else:
        pinv = np.linalg.pinv(jac)
    return np.eye(n) - pinv @ jac


def nullspace_accel(model: ManipulatorModel, q, q_nom, k_null: float,
                    lam: float = 0.0) -> np.ndarray:
    """Self-motion acceleration pulling q toward the shared nominal branch,
    projected so the end-effector task is untouched."""
    q = _check_q(model, q)
    q_nom = _check_q(model, q_nom)
    jac = geometric_jacobian(model, q)
    return nullspace_projector(jac, lam) @ (k_null * (q_nom - q))


def inverse_dynamics_torque(model: ManipulatorModel, q, qd, qdd_cmd) -> np.ndarray:
    """Joint torque realizing qdd_cmd: M(q) qdd + C(q, qd) qd + g(q)."""
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    qdd_cmd = _check_q(model, qdd_cmd)
    return _kernels.rnea(model.mdh, model.mass, model.com, model.inertia,
                         q, qd, qdd_cmd, model._g_base)


def mass_matrix(model: ManipulatorModel, q) -> np.ndarray:
    """Joint-space inertia matrix M(q)."""
    q = _check_q(model, q)
    return _kernels.mass_matrix(model.mdh, model.mass, model.com, model.inertia, q)


def bias_torque(model: ManipulatorModel, q, qd) -> np.ndarray:
    """Velocity and gravity bias C(q, qd) qd + g(q)."""
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    return _kernels.rnea(model.mdh, model.mass, model.com, model.inertia,
                         q, qd, np.zeros_like(q), model._g_base)


def gravity_torque(model: ManipulatorModel, q) -> np.ndarray:
    """Gravity load g(q)."""
    q = _check_q(model, q)
    zero = np.zeros_like(q)
    return _kernels.rnea(model.mdh, model.mass, model.com, model.inertia,
                         q, zero, zero, model._g_base)


def coriolis_torque(model: ManipulatorModel, q, qd) -> np.ndarray:
    """Velocity-dependent torque C(q, qd) qd, computed with gravity off."""
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    return _kernels.rnea(model.mdh, model.mass, model.com, model.inertia,
                         q, qd, np.zeros_like(q), np.zeros(3))


def task_space_state(model: ManipulatorModel, q, qd) -> TaskSpaceState:
    """Derive the end-effector task state from the joint state."""
    fs = forward_kinematics(model, q)
    twist = geometric_jacobian(model, q, fs) @ np.asarray(qd, dtype=float)
    return TaskSpaceState(p=fs.p, v=twist[:3], R=fs.R, w=twist[3:])
