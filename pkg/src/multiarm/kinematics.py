"""Serial-chain kinematics: forward kinematics, Jacobians, bounding spheres,
body clearances, and self-collision distances.

Chain description uses modified Denavit-Hartenberg rows (alpha_{i-1},
a_{i-1}, d_i, theta_offset_i), revolute joints only. Link index 0 is the
base link, link i the body after joint i; bounding spheres and capsules are
attached to links in their local frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels


class DimensionMismatchError(ValueError):
    pass


class EmptyObstacleSetError(ValueError):
    pass


class NoPairsConfiguredError(ValueError):
    pass


class ObstacleSnapshot(NamedTuple):
    """Instantaneous obstacle spheres: world centers, radii, velocities."""

    centers: np.ndarray    # (m, 3)
    radii: np.ndarray      # (m,)
    velocities: np.ndarray  # (m, 3)

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def shifted(self, dt: float) -> "ObstacleSnapshot":
        """Snapshot with centers advanced along their velocities by dt."""
        return ObstacleSnapshot(self.centers + dt * self.velocities, self.radii, self.velocities)


def _arr(x, shape=None) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=float)
    if shape is not None and a.shape != shape:
        raise DimensionMismatchError(f"expected shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class ManipulatorModel:
    """Kinematic and inertial description of one serial-chain arm.

    All SI units. `base_rotation`/`base_position` place the chain in the
    world; `ee_offset` is the constant transform from the last joint frame
    to the controlled end-effector (grasp) frame.
    """

    mdh: np.ndarray                  # (n, 4)
    mass: np.ndarray                 # (n,)
    com: np.ndarray                  # (n, 3) link frame
    inertia: np.ndarray              # (n, 3, 3) about COM, link frame
    sphere_link: np.ndarray          # (K,) int
    sphere_local: np.ndarray         # (K, 3)
    sphere_radius: np.ndarray        # (K,)
    q_min: np.ndarray                # (n,)
    q_max: np.ndarray                # (n,)
    qd_max: float
    tau_min: np.ndarray              # (n,)
    tau_max: np.ndarray              # (n,)
    nonadjacent_pairs: tuple = ()    # ((link_i, link_j), ...)
    ee_offset: np.ndarray = field(default_factory=lambda: np.eye(4))
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    capsule_radius: np.ndarray | None = None  # (n+1,) per-link, derived if None

    def __post_init__(self):
        n = np.asarray(self.mdh).shape[0]
        object.__setattr__(self, "mdh", _arr(self.mdh, (n, 4)))
        object.__setattr__(self, "mass", _arr(self.mass, (n,)))
        object.__setattr__(self, "com", _arr(self.com, (n, 3)))
        object.__setattr__(self, "inertia", _arr(self.inertia, (n, 3, 3)))
        k = np.asarray(self.sphere_link).shape[0]
        object.__setattr__(self, "sphere_link", np.ascontiguousarray(self.sphere_link, dtype=np.int64))
        object.__setattr__(self, "sphere_local", _arr(self.sphere_local, (k, 3)))
        object.__setattr__(self, "sphere_radius", _arr(self.sphere_radius, (k,)))
        object.__setattr__(self, "q_min", _arr(self.q_min, (n,)))
        object.__setattr__(self, "q_max", _arr(self.q_max, (n,)))
        object.__setattr__(self, "qd_max", float(self.qd_max))
        object.__setattr__(self, "tau_min", _arr(self.tau_min, (n,)))
        object.__setattr__(self, "tau_max", _arr(self.tau_max, (n,)))
        object.__setattr__(self, "nonadjacent_pairs",
                           tuple((int(a), int(b)) for a, b in self.nonadjacent_pairs))
        object.__setattr__(self, "ee_offset", _arr(self.ee_offset, (4, 4)))
        object.__setattr__(self, "base_rotation", _arr(self.base_rotation, (3, 3)))
        object.__setattr__(self, "base_position", _arr(self.base_position, (3,)))
        object.__setattr__(self, "gravity", _arr(self.gravity, (3,)))
        if self.capsule_radius is None:
            object.__setattr__(self, "capsule_radius", self._default_capsule_radii())
        else:
            object.__setattr__(self, "capsule_radius", _arr(self.capsule_radius, (n + 1,)))
        object.__setattr__(self, "_g_base", self.base_rotation.T @ self.gravity)

    @property
    def n_joints(self) -> int:
        return self.mdh.shape[0]

    @property
    def n_links(self) -> int:
        return self.n_joints + 1

    @property
    def n_spheres(self) -> int:
        return self.sphere_link.shape[0]

    def _default_capsule_radii(self) -> np.ndarray:
        radii = np.full(self.n_links, 0.05)
        for link, r in zip(self.sphere_link, self.sphere_radius):
            radii[link] = max(radii[link], r)
        return radii

    def validate(self) -> list[str]:
        """Invariant violations as human-readable strings (empty when valid)."""
        problems = []
        if self.n_joints < 2:
            problems.append(f"n_joints must be >= 2, got {self.n_joints}")
        if not np.all(self.q_min < self.q_max):
            problems.append("q_min must be < q_max elementwise")
        if not np.all(self.sphere_radius > 0):
            problems.append("all sphere radii must be > 0")
        if np.any(self.sphere_link < 0) or np.any(self.sphere_link >= self.n_links):
            problems.append(f"sphere link indices must be in [0, {self.n_links})")
        for a, b in self.nonadjacent_pairs:
            if abs(a - b) < 2:
                problems.append(f"nonadjacent pair ({a}, {b}) includes consecutive links")
            if not (0 <= a < self.n_links and 0 <= b < self.n_links):
                problems.append(f"nonadjacent pair ({a}, {b}) out of link range")
        if self.qd_max <= 0:
            problems.append("qd_max must be > 0")
        if not np.all(self.tau_min < self.tau_max):
            problems.append("tau_min must be < tau_max elementwise")
        return problems


@dataclass(frozen=True, eq=False)
class FrameSet:
    """World-frame kinematics snapshot at one joint configuration."""

    p: np.ndarray                 # (3,) end-effector position
    R: np.ndarray                 # (3, 3) end-effector rotation
    sphere_centers: np.ndarray    # (K, 3)
    joint_rotations: np.ndarray   # (n+1, 3, 3) base + every joint frame
    joint_origins: np.ndarray     # (n+1, 3)


def _check_q(model: ManipulatorModel, q) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=float)
    if q.shape != (model.n_joints,):
        raise DimensionMismatchError(
            f"q has shape {q.shape}, model has {model.n_joints} joints")
    return q


def forward_kinematics(model: ManipulatorModel, q) -> FrameSet:
    """End-effector pose, sphere centers, and all joint frames at q."""
    q = _check_q(model, q)
    r_all, p_all = _kernels.frames(model.mdh, model.base_rotation, model.base_position, q)
    centers = _kernels.sphere_centers(r_all, p_all, model.sphere_link, model.sphere_local)
    r_last, p_last = r_all[model.n_joints], p_all[model.n_joints]
    r_ee = r_last @ model.ee_offset[:3, :3]
    p_ee = p_last + r_last @ model.ee_offset[:3, 3]
    return FrameSet(p=p_ee, R=r_ee, sphere_centers=centers,
                    joint_rotations=r_all, joint_origins=p_all)


def _frames_raw(model: ManipulatorModel, q: np.ndarray):
    """Joint frames and end-effector point without the FrameSet wrapper."""
    r_all, p_all = _kernels.frames(model.mdh, model.base_rotation,
                                   model.base_position, q)
    r_last = r_all[model.n_joints]
    p_ee = p_all[model.n_joints] + r_last @ model.ee_offset[:3, 3]
    return r_all, p_all, p_ee


def geometric_jacobian(model: ManipulatorModel, q, fs: FrameSet | None = None) -> np.ndarray:
    """6xn geometric Jacobian of the end-effector frame (linear over angular)."""
    q = _check_q(model, q)
    if fs is None:
        r_all, p_all, p_ee = _frames_raw(model, q)
        return _kernels.geometric_jacobian(r_all, p_all, p_ee)
    return _kernels.geometric_jacobian(fs.joint_rotations, fs.joint_origins, fs.p)


def jacobian_dot(model: ManipulatorModel, q, qd, step: float = 1e-6) -> np.ndarray:
    """Time derivative of the Jacobian along the flow q(t), by central
    differences of J at q +/- step*qd."""
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    j_plus = geometric_jacobian(model, q + step * qd)
    j_minus = geometric_jacobian(model, q - step * qd)
    return (j_plus - j_minus) / (2.0 * step)


def sphere_center_jacobian(model: ManipulatorModel, fs: FrameSet, k: int) -> np.ndarray:
    """3xn Jacobian of bounding-sphere center k."""
    link = int(model.sphere_link[k])
    return _kernels.point_jacobian(fs.joint_rotations, fs.joint_origins,
                                   link, fs.sphere_centers[k])


def min_body_clearance(model: ManipulatorModel, q, obstacles: ObstacleSnapshot,
                       fs: FrameSet | None = None) -> tuple[float, int, int]:
    """Smallest signed distance from any bounding sphere to any obstacle.

    Obstacle spheres are treated as points with their radius added to the
    agent sphere radius. Ties resolve to the lowest (sphere, obstacle) pair.
    """
    if obstacles.count == 0:
        raise EmptyObstacleSetError("obstacle set is empty")
    if fs is None:
        fs = forward_kinematics(model, q)
    d, k, o = _kernels.min_sphere_obstacle(
        fs.sphere_centers, model.sphere_radius, obstacles.centers, obstacles.radii)
    return float(d), int(k), int(o)


def capsule_segment(model: ManipulatorModel, fs: FrameSet, link: int) -> tuple[np.ndarray, np.ndarray]:
    """World endpoints of the capsule spanning the given link."""
    a = fs.joint_origins[link]
    if link < model.n_joints:
        b = fs.joint_origins[link + 1]
    else:
        b = fs.joint_origins[link] + fs.joint_rotations[link] @ model.ee_offset[:3, 3]
    return a, b


def capsule_distance(a0, a1, ra: float, b0, b1, rb: float) -> float:
    """Signed distance between two capsules (negative when penetrating)."""
    d, _, _ = _kernels.segment_closest(
        np.asarray(a0, float), np.asarray(a1, float),
        np.asarray(b0, float), np.asarray(b1, float))
    return float(d) - ra - rb


def self_collision_distance(model: ManipulatorModel, q,
                            fs: FrameSet | None = None) -> tuple[float, tuple[int, int]]:
    """Minimum capsule-capsule distance over the configured non-adjacent
    link pairs; returns (distance, pair). Negative means penetration."""
    if not model.nonadjacent_pairs:
        raise NoPairsConfiguredError("no non-adjacent link pairs configured")
    if fs is None:
        fs = forward_kinematics(model, q)
    best = np.inf
    best_pair = model.nonadjacent_pairs[0]
    for (i, j) in model.nonadjacent_pairs:
        a0, a1 = capsule_segment(model, fs, i)
        b0, b1 = capsule_segment(model, fs, j)
        d, _, _ = _kernels.segment_closest(a0, a1, b0, b1)
        d = float(d) - model.capsule_radius[i] - model.capsule_radius[j]
        if d < best:
            best = d
            best_pair = (i, j)
    return best, best_pair


def self_collision_closest_points(model: ManipulatorModel, fs: FrameSet,
                                  pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Closest points (world) and segment parameters for one link pair."""
    i, j = pair
    a0, a1 = capsule_segment(model, fs, i)
    b0, b1 = capsule_segment(model, fs, j)
    _, s, t = _kernels.segment_closest(a0, a1, b0, b1)
    return a0 + s * (a1 - a0), b0 + t * (b1 - b0), s, t
