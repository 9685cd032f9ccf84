"""Closed-loop world: obstacle motion, the per-tick control pipeline
(consensus -> acceleration mapping -> safety filter -> inverse dynamics),
fixed-step integration, metrics, and the Monte Carlo driver.

Tick order: obstacle update, clearance computation, leader/trigger update
with message accounting, per-agent control and QP filtering, inverse
dynamics, semi-implicit Euler integration. All per-tick telemetry lands in
a columnar Trace; wall-clock timings are kept apart from the deterministic
columns so traces reproduce bitwise under a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import PerturbationConfig, ScenarioConfig, parse_scenario
from .control_core import (
    FormationSpec,
    ReferenceSample,
    TaskSpaceState,
    bias_torque,
    consensus_accel,
    mass_matrix,
)
from .coordination import (
    LeaderRecord,
    TriggerState,
    broadcast_round,
    reset_env_trigger_on_switch,
    select_leader,
    step_env_trigger,
    step_inter_trigger,
)
from .kinematics import (
    ObstacleSnapshot,
    forward_kinematics,
    geometric_jacobian,
    jacobian_dot,
    min_body_clearance,
)
from .qp import QpProblem, QpSolver, QpStatus, torque_box, torque_polytope_rows
from .safety import BarrierKind, assemble_constraints
from .so3 import AngleNearPiError, log_map, log_map_any


class NumericalBlowupError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(eq=False)
class ObstacleSet:
    """Static spheres plus circular-path dynamic spheres."""

    static_centers: np.ndarray
    static_radii: np.ndarray
    dyn_path_center: np.ndarray
    dyn_path_radius: np.ndarray
    dyn_angular_speed: np.ndarray
    dyn_radius: np.ndarray
    dyn_phase: np.ndarray

    @classmethod
    def from_config(cls, obs) -> "ObstacleSet":
        return cls(obs.static_centers.copy(), obs.static_radii.copy(),
                   obs.dyn_path_center.copy(), obs.dyn_path_radius.copy(),
                   obs.dyn_angular_speed.copy(), obs.dyn_radius.copy(),
                   obs.dyn_phase.copy())

    def at(self, t: float) -> ObstacleSnapshot:
        """Snapshot at time t; static obstacles first, then dynamic."""
        n_dyn = self.dyn_path_center.shape[0]
        if n_dyn == 0:
            return ObstacleSnapshot(self.static_centers, self.static_radii,
                                    np.zeros_like(self.static_centers))
        ang = self.dyn_angular_speed * t + self.dyn_phase
        offs = np.stack([self.dyn_path_radius * np.cos(ang),
                         self.dyn_path_radius * np.sin(ang),
                         np.zeros(n_dyn)], axis=1)
        centers = self.dyn_path_center + offs
        vel = np.stack([-self.dyn_path_radius * self.dyn_angular_speed * np.sin(ang),
                        self.dyn_path_radius * self.dyn_angular_speed * np.cos(ang),
                        np.zeros(n_dyn)], axis=1)
        all_centers = np.vstack([self.static_centers, centers])
        all_radii = np.concatenate([self.static_radii, self.dyn_radius])
        all_vel = np.vstack([np.zeros_like(self.static_centers), vel])
        return ObstacleSnapshot(all_centers, all_radii, all_vel)


def reference_sample(cfg: ScenarioConfig, p_start: np.ndarray, t: float) -> ReferenceSample:
    """Reference state at time t: constant-speed line or station keeping."""
    eye = np.eye(3)
    zero = np.zeros(3)
    if cfg.reference.kind == "station":
        return ReferenceSample(p_start, zero, zero, eye, zero, zero)
    goal = cfg.reference.p_goal
    span = goal - p_start
    length = float(np.linalg.norm(span))
    if length < 1e-12:
        return ReferenceSample(p_start, zero, zero, eye, zero, zero)
    direction = span / length
    t_line = length / cfg.reference.speed
    if t < t_line:
        return ReferenceSample(p_start + direction * cfg.reference.speed * t,
                               direction * cfg.reference.speed, zero, eye, zero, zero)
    return ReferenceSample(goal, zero, zero, eye, zero, zero)


def formation_errors(states: list, spec: FormationSpec) -> tuple[float, float]:
    """Averaged pairwise formation errors over ordered pairs (i != j)."""
    n = len(states)
    if n < 2:
        raise ValueError("formation errors need at least two agents")
    e_p = 0.0
    e_theta = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d_ij = spec.offset(i, j)
            e_p += 2.0 * float(np.linalg.norm((states[i].p - states[j].p) - d_ij))
            try:
                ang = float(np.linalg.norm(log_map(states[i].R @ states[j].R.T)))
            except AngleNearPiError as exc:
                ang = float(np.linalg.norm(exc.axis_angle))
            e_theta += 2.0 * ang
    return e_p / n, e_theta / n


def completion_time(times: np.ndarray, centers: np.ndarray, goal: np.ndarray,
                    tol: float) -> float:
    """First time the formation center stays within tol of the goal for the
    remainder of the trace; +inf when it never settles."""
    dist = np.linalg.norm(centers - goal[None, :], axis=1)
    outside = np.nonzero(dist > tol)[0]
    if outside.size == 0:
        return float(times[0])
    last_out = outside[-1]
    if last_out == len(times) - 1:
        return np.inf
    return float(times[last_out + 1])


@dataclass(eq=False)
class Trace:
    """Columnar per-tick telemetry for one run."""

    dt: float
    n_agents: int
    n_joints: int
    edges: tuple
    t: np.ndarray = None
    q: np.ndarray = None            # (ticks, agents, n)
    qd: np.ndarray = None
    p: np.ndarray = None            # (ticks, agents, 3)
    rot: np.ndarray = None          # (ticks, agents, 9)
    e_p: np.ndarray = None
    e_theta: np.ndarray = None
    h_min: np.ndarray = None
    h_intrinsic_min: np.ndarray = None
    h_inter_min: np.ndarray = None
    leader: np.ndarray = None
    env_bits: np.ndarray = None
    inter_bits: np.ndarray = None
    messages: np.ndarray = None
    messages_state: np.ndarray = None
    active_event_rows: np.ndarray = None
    slack_max: np.ndarray = None
    qp_iterations: np.ndarray = None
    qp_time: np.ndarray = None
    control_time: np.ndarray = None
    leader_history: tuple = ()

    @classmethod
    def allocate(cls, ticks: int, n_agents: int, n_joints: int, dt: float,
                 edges: tuple) -> "Trace":
        tr = cls(dt=dt, n_agents=n_agents, n_joints=n_joints, edges=edges)
        tr.t = np.zeros(ticks)
        tr.q = np.zeros((ticks, n_agents, n_joints))
        tr.qd = np.zeros((ticks, n_agents, n_joints))
        tr.p = np.zeros((ticks, n_agents, 3))
        tr.rot = np.zeros((ticks, n_agents, 9))
        tr.e_p = np.zeros(ticks)
        tr.e_theta = np.zeros(ticks)
        tr.h_min = np.zeros(ticks)
        tr.h_intrinsic_min = np.zeros(ticks)
        tr.h_inter_min = np.zeros(ticks)
        tr.leader = np.zeros(ticks, dtype=np.int64)
        tr.env_bits = np.zeros(ticks, dtype=np.int64)
        tr.inter_bits = np.zeros(ticks, dtype=np.int64)
        tr.messages = np.zeros(ticks, dtype=np.int64)
        tr.messages_state = np.zeros(ticks, dtype=np.int64)
        tr.active_event_rows = np.zeros(ticks, dtype=np.int64)
        tr.slack_max = np.zeros(ticks)
        tr.qp_iterations = np.zeros(ticks, dtype=np.int64)
        tr.qp_time = np.zeros(ticks)
        tr.control_time = np.zeros(ticks)
        return tr

    @property
    def ticks(self) -> int:
        return self.t.shape[0]

    def truncate(self, ticks: int) -> "Trace":
        for name in ("t", "q", "qd", "p", "rot", "e_p", "e_theta", "h_min",
                     "h_intrinsic_min", "h_inter_min", "leader", "env_bits",
                     "inter_bits", "messages", "messages_state",
                     "active_event_rows", "slack_max", "qp_iterations",
                     "qp_time", "control_time"):
            setattr(self, name, getattr(self, name)[:ticks])
        return self

    def centers(self) -> np.ndarray:
        return self.p.mean(axis=1)

    def header(self) -> list[str]:
        cols = ["t"]
        for a in range(self.n_agents):
            cols += [f"a{a}_q{k}" for k in range(self.n_joints)]
            cols += [f"a{a}_qd{k}" for k in range(self.n_joints)]
            cols += [f"a{a}_p{ax}" for ax in "xyz"]
            cols += [f"a{a}_R{r}{c}" for r in range(3) for c in range(3)]
        cols += ["E_p", "E_theta", "h_min", "h_intrinsic_min", "h_inter_min",
                 "leader", "env_bits", "inter_bits", "messages", "messages_state",
                 "active_event_rows", "slack_max", "qp_iterations"]
        return cols

    def matrix(self) -> np.ndarray:
        ticks = self.ticks
        parts = [self.t[:, None]]
        for a in range(self.n_agents):
            parts += [self.q[:, a, :], self.qd[:, a, :], self.p[:, a, :],
                      self.rot[:, a, :]]
        parts += [self.e_p[:, None], self.e_theta[:, None], self.h_min[:, None],
                  self.h_intrinsic_min[:, None], self.h_inter_min[:, None],
                  self.leader[:, None].astype(float), self.env_bits[:, None].astype(float),
                  self.inter_bits[:, None].astype(float), self.messages[:, None].astype(float),
                  self.messages_state[:, None].astype(float),
                  self.active_event_rows[:, None].astype(float),
                  self.slack_max[:, None], self.qp_iterations[:, None].astype(float)]
        return np.hstack(parts).reshape(ticks, -1)

    def to_csv(self, path) -> None:
        """Deterministic columns only; timings go to a separate file."""
        header = ",".join(self.header())
        np.savetxt(path, self.matrix(), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    def timings_to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.qp_time, self.control_time])
        np.savetxt(path, data, delimiter=",",
                   header="t,qp_time_s,control_time_s", comments="", fmt="%.9g")

    def summary(self) -> dict:
        tail = slice(int(self.ticks * 0.75), None)
        switches = max(len(self.leader_history) - 1, 0)
        gaps = [b - a for (a, _), (b, _) in zip(self.leader_history,
                                                self.leader_history[1:])]
        return {
            "ticks": int(self.ticks),
            "duration": float(self.t[-1] + self.dt) if self.ticks else 0.0,
            "E_p_final_mean": float(self.e_p[tail].mean()),
            "E_p_max": float(self.e_p.max()),
            "E_theta_final_mean": float(self.e_theta[tail].mean()),
            "E_theta_max": float(self.e_theta.max()),
            "h_min_min": float(self.h_min.min()),
            "h_intrinsic_min_min": float(self.h_intrinsic_min.min()),
            "h_inter_min_min": float(self.h_inter_min.min()),
            "leader_switches": int(switches),
            "min_switch_gap": float(min(gaps)) if gaps else np.inf,
            "messages_total": int(self.messages.sum()),
            "messages_state_total": int(self.messages_state.sum()),
            "active_event_rows_total": int(self.active_event_rows.sum()),
            "slack_max": float(self.slack_max.max()) if self.ticks else 0.0,
            "safety_pass": bool(self.h_min.min() > 0.0
                                and self.h_intrinsic_min.min() >= -1e-6),
            "qp_time_mean_ms": float(self.qp_time.mean() * 1e3),
            "qp_time_max_ms": float(self.qp_time.max() * 1e3),
            "control_time_mean_ms": float(self.control_time.mean() * 1e3),
            "control_time_max_ms": float(self.control_time.max() * 1e3),
        }


class World:
    """One running scenario instance."""

    def __init__(self, config: ScenarioConfig, mode: str = "event"):
        if mode not in ("event", "always-on"):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config
        self.mode = mode
        self.obstacles = ObstacleSet.from_config(config.obstacles)
        self.models = [a.model for a in config.agents]
        self.q = [a.q0.copy() for a in config.agents]
        self.qd = [np.zeros(m.n_joints) for m in self.models]
        self.solvers = [QpSolver() for _ in self.models]
        self.triggers = TriggerState.initial(config.graph)
        self.record: Optional[LeaderRecord] = None
        self.t = 0.0
        self.tick = 0
        self.teleop_cmd = np.zeros(3)
        self._neighbors = [config.graph.neighbors(i) for i in range(config.n_agents)]
        positions = [forward_kinematics(m, q).p for m, q in zip(self.models, self.q)]
        if config.reference.p_start is not None:
            self.p_start = config.reference.p_start.copy()
        else:
            self.p_start = np.mean(positions, axis=0)
        scale = 1.0 + config.inertia_error
        self._plant_scale = scale
        self.last_states: list[TaskSpaceState] = []
        self.last_h_env: list[float] = []

    # -------------------------------------------------------------- stepping

    def step(self, trace: Trace | None = None,
             teleop_cmd: Optional[np.ndarray] = None) -> None:
        cfg = self.config
        n_agents = cfg.n_agents
        dt = cfg.dt
        for i in range(n_agents):
            if not (np.all(np.isfinite(self.q[i])) and np.all(np.isfinite(self.qd[i]))
                    and np.max(np.abs(self.q[i])) < 1e9):
                raise NumericalBlowupError(
                    f"agent {i} state non-finite at t={self.t:.3f}", trace=trace)
        obs = self.obstacles.at(self.t)
        if teleop_cmd is not None:
            self.teleop_cmd = np.asarray(teleop_cmd, dtype=float)

        frames = []
        jacobians = []
        states = []
        clearances = {}
        for i, model in enumerate(self.models):
            fs = forward_kinematics(model, self.q[i])
            jac = geometric_jacobian(model, self.q[i], fs)
            twist = jac @ self.qd[i]
            frames.append(fs)
            jacobians.append(jac)
            states.append(TaskSpaceState(p=fs.p, v=twist[:3], R=fs.R, w=twist[3:]))
            clearances[i] = min_body_clearance(model, self.q[i], obs, fs=fs)[0]
        states_map = dict(enumerate(states))

        prev_leader = self.record.leader if self.record is not None else None
        self.record = select_leader(clearances, range(n_agents), self.record,
                                    self.t, cfg.tau_min_dwell, cfg.margins.env.margin)
        leader = self.record.leader
        if self.mode == "always-on":
            for i in range(n_agents):
                self.triggers.env[i] = 1
            for e in self.triggers.inter:
                self.triggers.inter[e] = 1
        else:
            for i in range(n_agents):
                if i != leader:
                    self.triggers.env[i] = 0
            if leader != prev_leader:
                reset_env_trigger_on_switch(self.triggers, leader, clearances[leader],
                                            cfg.margins.env.alert, cfg.margins.env.hyst)
            else:
                self.triggers.env[leader] = step_env_trigger(
                    self.triggers.env[leader], clearances[leader],
                    cfg.margins.env.alert, cfg.margins.env.hyst)
            for (a, b) in cfg.graph.edges:
                self.triggers.inter[(a, b)] = step_inter_trigger(
                    self.triggers.inter[(a, b)], states[a].p, states[b].p,
                    cfg.margins.inter.alert, cfg.margins.inter.hyst)
        _, messages = broadcast_round(clearances, self.triggers)
        messages_state = 2 * sum(self.triggers.inter.values())

        reference = reference_sample(cfg, self.p_start, self.t)
        teleop_active = teleop_cmd is not None or np.any(self.teleop_cmd != 0.0)

        taus = []
        inertias = []
        biases = []
        tick_qp_time = 0.0
        tick_control_time = 0.0
        slack_max = 0.0
        qp_iters = 0
        event_rows = 0
        h_intr_min = np.inf
        h_env_list = []
        for i, model in enumerate(self.models):
            t0 = time.perf_counter()
            if cfg.reference_to_leader:
                has_ref = i == leader
            else:
                has_ref = bool(cfg.formation.reference_access.get(i, 0))
            if teleop_active and i == leader:
                # the velocity command replaces only the positional reference
                # bracket; the orientation law stays anchored to the reference
                u = consensus_accel(i, states[i], states_map, self._neighbors[i],
                                    cfg.formation, cfg.gains, reference=None,
                                    has_reference=False)
                u[:3] += cfg.teleop_gain * (self.teleop_cmd - states[i].v)
                theta_ref = log_map_any(states[i].R @ reference.R0.T)
                u[3:] -= (cfg.gains.k_theta * theta_ref
                          + cfg.gains.k_omega * (states[i].w - reference.w0)
                          - reference.wd0)
            else:
                u = consensus_accel(i, states[i], states_map, self._neighbors[i],
                                    cfg.formation, cfg.gains,
                                    reference=reference if has_ref else None,
                                    has_reference=has_ref)
            jac = jacobians[i]
            drift = jacobian_dot(model, self.q[i], self.qd[i]) @ self.qd[i]
            lam = cfg.lambda_dls
            gram = jac @ jac.T + lam**2 * np.eye(6)
            qdd_task = jac.T @ np.linalg.solve(gram, u - drift)
            # the self-motion branch uses a near-exact projector: damping here
            # would leak the regulation term into the task space
            gram_null = jac @ jac.T + 1e-12 * np.eye(6)
            pinv = jac.T @ np.linalg.inv(gram_null)
            nullspace = np.eye(model.n_joints) - pinv @ jac
            z_nom = qdd_task + nullspace @ (cfg.gains.k_null * (cfg.q_nom - self.q[i]))

            neighbor_ee = {}
            for edge in self.triggers.active_edges():
                if i in edge:
                    other = edge[0] if edge[1] == i else edge[1]
                    neighbor_ee[other] = (states[other].p, states[other].v)
            rows, evals = assemble_constraints(
                i, model, self.q[i], self.qd[i], self.triggers,
                leader if self.mode == "event" else i,
                obs, neighbor_ee, cfg.margins, cfg.class_k, fs=frames[i],
                with_evals=True)
            for ev in evals:
                if ev.kind in (BarrierKind.JOINT_POS_LO, BarrierKind.JOINT_POS_HI,
                               BarrierKind.JOINT_VEL, BarrierKind.SELF_COLLISION):
                    h_intr_min = min(h_intr_min, ev.h)
            event_rows += sum(1 for r in rows if r.slackable)
            inertia = mass_matrix(model, self.q[i])
            bias = bias_torque(model, self.q[i], self.qd[i])
            box = None
            if cfg.torque_constraint == "polytope":
                rows = rows + torque_polytope_rows(inertia, bias, model.tau_min,
                                                   model.tau_max)
            else:
                box = torque_box(model, self.q[i], self.qd[i])
            problem = QpProblem(z_nom=z_nom, rows=rows, box=box,
                                slack_penalty=cfg.slack_penalty)
            t_qp = time.perf_counter()
            sol = self.solvers[i].solve(problem)
            tick_qp_time += time.perf_counter() - t_qp
            if sol.status is QpStatus.INFEASIBLE:
                raise NumericalBlowupError(
                    f"agent {i} safety filter infeasible at t={self.t:.3f}",
                    trace=trace)
            slack_max = max(slack_max, sol.slack)
            qp_iters += sol.iterations
            tau = inertia @ sol.z + bias
            tick_control_time += time.perf_counter() - t0
            taus.append(tau)
            inertias.append(inertia)
            biases.append(bias)
            h_env_list.append(clearances[i] - cfg.margins.env.margin)

        for i, model in enumerate(self.models):
            scale = self._plant_scale
            qdd = np.linalg.solve(scale * inertias[i], taus[i] - scale * biases[i])
            self.qd[i] = self.qd[i] + dt * qdd
            self.q[i] = self.q[i] + dt * self.qd[i]
            if not (np.all(np.isfinite(self.q[i])) and np.all(np.isfinite(self.qd[i]))
                    and np.max(np.abs(self.q[i])) < 1e9):
                raise NumericalBlowupError(
                    f"agent {i} state non-finite at t={self.t:.3f}", trace=trace)

        e_p, e_theta = formation_errors(states, cfg.formation)
        h_inter_min = np.inf
        for (a, b) in cfg.graph.edges:
            sep = float(np.linalg.norm(states[a].p - states[b].p))
            h_inter_min = min(h_inter_min, sep - cfg.margins.inter.margin)

        if trace is not None:
            k = self.tick
            trace.t[k] = self.t
            for i in range(n_agents):
                trace.q[k, i] = self.q[i]
                trace.qd[k, i] = self.qd[i]
                trace.p[k, i] = states[i].p
                trace.rot[k, i] = states[i].R.reshape(-1)
            trace.e_p[k] = e_p
            trace.e_theta[k] = e_theta
            trace.h_min[k] = min(h_env_list)
            trace.h_intrinsic_min[k] = h_intr_min
            trace.h_inter_min[k] = h_inter_min
            trace.leader[k] = leader
            trace.env_bits[k] = sum(self.triggers.env[i] << i for i in range(n_agents))
            trace.inter_bits[k] = sum(self.triggers.inter[e] << j
                                      for j, e in enumerate(sorted(self.triggers.inter)))
            trace.messages[k] = messages
            trace.messages_state[k] = messages_state
            trace.active_event_rows[k] = event_rows
            trace.slack_max[k] = slack_max
            trace.qp_iterations[k] = qp_iters
            trace.qp_time[k] = tick_qp_time
            trace.control_time[k] = tick_control_time

        self.last_states = states
        self.last_h_env = h_env_list
        self.t += dt
        self.tick += 1

    def run(self, duration: Optional[float] = None,
            teleop_fn: Optional[Callable[[float], np.ndarray]] = None,
            on_tick: Optional[Callable[["World"], None]] = None) -> Trace:
        cfg = self.config
        total = duration if duration is not None else cfg.duration
        ticks = int(round(total / cfg.dt))
        trace = Trace.allocate(ticks, cfg.n_agents, self.models[0].n_joints,
                               cfg.dt, cfg.graph.edges)
        for _ in range(ticks):
            cmd = teleop_fn(self.t) if teleop_fn is not None else None
            self.step(trace=trace, teleop_cmd=cmd)
            if on_tick is not None:
                on_tick(self)
        trace.leader_history = self.record.history if self.record else ()
        return trace

    def snapshot(self) -> dict:
        """Telemetry frame for streaming: positions, barriers, triggers."""
        cfg = self.config
        states = self.last_states
        e_p, e_theta = formation_errors(states, cfg.formation) if states else (0.0, 0.0)
        return {
            "type": "state",
            "t": round(self.t, 6),
            "agents": [{
                "id": i,
                "p": [float(x) for x in states[i].p],
                "R": [float(x) for x in states[i].R.reshape(-1)],
                "h_env": float(self.last_h_env[i]),
            } for i in range(len(states))],
            "leader": int(self.record.leader) if self.record else 0,
            "h_min": float(min(self.last_h_env)) if self.last_h_env else 0.0,
            "triggers": {
                "env": [int(self.triggers.env[i]) for i in range(cfg.n_agents)],
                "inter": [int(self.triggers.inter[e])
                          for e in sorted(self.triggers.inter)],
            },
            "E_p": float(e_p),
            "E_theta": float(e_theta),
            "obstacles": [{"c": [float(x) for x in c], "r": float(r)}
                          for c, r in zip(self.obstacles.at(self.t).centers,
                                          self.obstacles.at(self.t).radii)],
        }


def run_scenario(config: ScenarioConfig, mode: str = "event",
                 duration: Optional[float] = None) -> Trace:
    return World(config, mode=mode).run(duration=duration)


def perturbed_document(doc: dict, pert: PerturbationConfig,
                       rng: np.random.Generator) -> dict:
    """Scenario document with the Monte Carlo draws applied: reference start
    (initial formation-center condition), goal, and every obstacle center."""
    import copy
    out = copy.deepcopy(doc)
    ref = out["reference"]
    d_center = rng.uniform(-pert.center, pert.center, 3)
    if ref.get("p_start") is not None:
        ref["p_start"] = [float(v + d) for v, d in zip(ref["p_start"], d_center)]
    if ref.get("p_goal") is not None:
        d_goal = rng.uniform(-pert.goal, pert.goal, 3)
        ref["p_goal"] = [float(v + d) for v, d in zip(ref["p_goal"], d_goal)]
    for obs in out.get("obstacles", {}).get("static", []):
        d_obs = rng.uniform(-pert.obstacle, pert.obstacle, 3)
        obs["center"] = [float(v + d) for v, d in zip(obs["center"], d_obs)]
    for obs in out.get("obstacles", {}).get("dynamic", []):
        d_obs = rng.uniform(-pert.obstacle, pert.obstacle, 3)
        obs["path_center"] = [float(v + d) for v, d in zip(obs["path_center"], d_obs)]
    return out


def _run_trial(args) -> dict:
    raw, pert, seed, k, mode = args
    rng = np.random.default_rng([seed, k])
    doc = perturbed_document(raw, pert, rng)
    cfg = parse_scenario(doc)
    trace = World(cfg, mode=mode).run()
    summary = trace.summary()
    goal = cfg.reference.p_goal
    if goal is not None:
        summary["completion_time"] = completion_time(
            trace.t, trace.centers(), goal, cfg.completion_tol)
    summary["trial"] = k
    return summary


def monte_carlo_workers() -> int:
    import os
    raw = os.environ.get("MULTIARM_WORKERS", "")
    if raw.strip():
        return max(1, int(raw))
    return max(1, min(4, (os.cpu_count() or 1)))


def run_monte_carlo(config: ScenarioConfig, n_trials: int, seed: int,
                    mode: str = "event", workers: Optional[int] = None) -> dict:
    """Per-trial summaries plus aggregate statistics.

    Trial k draws from an independent stream seeded by (seed, k), so the
    same seed reproduces the batch bitwise regardless of worker count, and
    the draws can be reused across compared modes.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if workers is None:
        workers = monte_carlo_workers()
    jobs = [(config.raw, config.perturbation, seed, k, mode) for k in range(n_trials)]
    if workers > 1 and n_trials > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(j) for j in jobs]

    def agg(key):
        vals = np.array([t[key] for t in trials if np.isfinite(t[key])])
        if vals.size == 0:
            return {"median": np.inf, "mean": np.inf, "range": 0.0}
        return {"median": float(np.median(vals)), "mean": float(vals.mean()),
                "range": float((vals.max() - vals.min()) / 2.0)}

    aggregate = {
        "E_p_final_mean": agg("E_p_final_mean"),
        "E_theta_final_mean": agg("E_theta_final_mean"),
        "control_time_mean_ms": agg("control_time_mean_ms"),
        "safety_pass_rate": float(np.mean([t["safety_pass"] for t in trials])),
    }
    if all("completion_time" in t for t in trials):
        aggregate["completion_time"] = agg("completion_time")
    return {"n_trials": n_trials, "seed": seed, "mode": mode,
            "trials": trials, "aggregate": aggregate}
