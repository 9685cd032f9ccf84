"""Scenario configuration: JSON schema, loading, validation, content hashing.

A scenario document fully describes a run: per-agent arm models and base
poses, the communication graph and formation, controller gains, safety
margins, the reference trajectory, obstacles, and experiment settings.
Validation returns every violated invariant with its config key path so the
CLI can report them all at once.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .control_core import ConsensusGains, FormationSpec
from .coordination import Graph
from .kinematics import ManipulatorModel, forward_kinematics
from .safety import ClassKParams, MarginSet, SafetyMargins

SCHEMA_VERSION = 1


class ConfigParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigValidationError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(eq=False)
class AgentConfig:
    model: ManipulatorModel
    q0: np.ndarray


@dataclass(eq=False)
class ReferenceConfig:
    kind: str                       # "line" or "station"
    p_start: np.ndarray | None      # None: initial formation center
    p_goal: np.ndarray | None
    speed: float = 0.05


@dataclass(eq=False)
class ObstacleConfig:
    static_centers: np.ndarray      # (s, 3)
    static_radii: np.ndarray        # (s,)
    dyn_path_center: np.ndarray     # (d, 3)
    dyn_path_radius: np.ndarray     # (d,)
    dyn_angular_speed: np.ndarray   # (d,)
    dyn_radius: np.ndarray          # (d,)
    dyn_phase: np.ndarray           # (d,)

    @property
    def count(self) -> int:
        return self.static_centers.shape[0] + self.dyn_path_center.shape[0]


@dataclass(eq=False)
class PerturbationConfig:
    center: float = 0.04
    goal: float = 0.02
    obstacle: float = 0.02


@dataclass(eq=False)
class ScenarioConfig:
    name: str
    dt: float
    duration: float
    agents: list
    graph: Graph
    formation: FormationSpec
    reference_to_leader: bool
    gains: ConsensusGains
    class_k: ClassKParams
    margins: SafetyMargins
    lambda_dls: float
    tau_min_dwell: float
    q_nom: np.ndarray
    reference: ReferenceConfig
    obstacles: ObstacleConfig
    slack_penalty: float
    torque_constraint: str = "polytope"
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    teleop_v_max: float = 0.6
    teleop_gain: float = 10.0
    inertia_error: float = 0.0
    completion_tol: float = 0.01
    eps_ori: float = 0.05
    raw: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.agents)


def shipped_scenario_path(name: str) -> Path:
    """Path of a packaged scenario (dual_arm, monte_carlo, four_arm)."""
    base = resources.files("multiarm") / "scenarios" / f"{name}.json"
    return Path(str(base))


def _vec(x, n=3):
    return np.asarray(x, dtype=float).reshape(n)


def _build_model(arm: dict, agent: dict, gravity) -> ManipulatorModel:
    mdh = np.asarray(arm["mdh"], dtype=float)
    n = mdh.shape[0]
    ee = np.eye(4)
    if "ee_offset_translation" in arm:
        ee[:3, 3] = _vec(arm["ee_offset_translation"])
    if "ee_offset_rotation" in arm:
        ee[:3, :3] = np.asarray(arm["ee_offset_rotation"], dtype=float)
    inertia = np.zeros((n, 3, 3))
    raw_inertia = np.asarray(arm["inertia_diag"], dtype=float)
    for i in range(n):
        inertia[i] = np.diag(raw_inertia[i])
    spheres = list(arm["spheres"]) + list(agent.get("extra_spheres", []))
    sphere_link = np.array([int(s[0]) for s in spheres], dtype=np.int64)
    sphere_local = np.array([s[1:4] for s in spheres], dtype=float)
    sphere_radius = np.array([s[4] for s in spheres], dtype=float)
    yaw = np.deg2rad(float(agent.get("base_yaw_deg", 0.0)))
    base_r = np.array([
        [np.cos(yaw), -np.sin(yaw), 0.0],
        [np.sin(yaw), np.cos(yaw), 0.0],
        [0.0, 0.0, 1.0],
    ])
    return ManipulatorModel(
        mdh=mdh,
        mass=np.asarray(arm["mass"], dtype=float),
        com=np.asarray(arm["com"], dtype=float),
        inertia=inertia,
        sphere_link=sphere_link,
        sphere_local=sphere_local,
        sphere_radius=sphere_radius,
        q_min=np.asarray(arm["q_min"], dtype=float),
        q_max=np.asarray(arm["q_max"], dtype=float),
        qd_max=float(arm["qd_max"]),
        tau_min=np.asarray(arm["tau_min"], dtype=float),
        tau_max=np.asarray(arm["tau_max"], dtype=float),
        nonadjacent_pairs=tuple((int(a), int(b)) for a, b in arm.get("nonadjacent_pairs", [])),
        ee_offset=ee,
        base_rotation=base_r,
        base_position=_vec(agent["base_position"]),
        gravity=np.asarray(gravity, dtype=float),
    )


def _align_grasp_frames(agents: list[AgentConfig]) -> None:
    """Fold each agent's initial end-effector orientation into its constant
    grasp offset so the controlled frames coincide at the start pose."""
    for a in agents:
        fs = forward_kinematics(a.model, a.q0)
        ee = a.model.ee_offset.copy()
        ee[:3, :3] = ee[:3, :3] @ fs.R.T
        object.__setattr__(a.model, "ee_offset", ee)


def parse_scenario(doc: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed JSON document."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigParseError(
            f"schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    gravity = doc.get("gravity", [0.0, 0.0, -9.81])
    arm = doc["arm"]
    agents = []
    for spec in doc["agents"]:
        model = _build_model(arm, spec, gravity)
        q0 = np.asarray(spec.get("q0", doc.get("q0", np.zeros(model.n_joints))), dtype=float)
        agents.append(AgentConfig(model=model, q0=q0))
    if doc.get("align_grasp_frames", True):
        _align_grasp_frames(agents)

    graph = Graph(n=len(agents), edges=tuple(tuple(e) for e in doc["graph_edges"]))

    formation_doc = doc.get("formation", {})
    offsets_raw = formation_doc.get("reference_offsets", "auto")
    if offsets_raw == "auto":
        positions = [forward_kinematics(a.model, a.q0).p for a in agents]
        center = np.mean(positions, axis=0)
        offsets = {i: positions[i] - center for i in range(len(agents))}
    else:
        offsets = {int(k): _vec(v) for k, v in offsets_raw.items()}
    access_raw = formation_doc.get("reference_access", "leader")
    reference_to_leader = access_raw == "leader"
    if reference_to_leader:
        access = {i: 0 for i in range(len(agents))}
    else:
        access = {int(k): int(v) for k, v in access_raw.items()}
        for i in range(len(agents)):
            access.setdefault(i, 0)
    edge_offsets = {}
    for item in formation_doc.get("edge_offsets", []):
        edge_offsets[(int(item[0]), int(item[1]))] = _vec(item[2])
    formation = FormationSpec(offsets_to_reference=offsets, reference_access=access,
                              edge_offsets=edge_offsets)

    g = doc.get("gains", {})
    gains = ConsensusGains(
        k_p=float(g.get("k_p", 3.0)), k_d=float(g.get("k_d", 1.0)),
        k_theta=float(g.get("k_theta", 3.0)), k_omega=float(g.get("k_omega", 0.5)),
        k_null=float(g.get("k_null", 1.0)))
    ck = doc.get("class_k", {})
    class_k = ClassKParams(gamma1=float(ck.get("gamma1", 5.0)),
                           gamma2=float(ck.get("gamma2", 5.0)))
    m = doc["margins"]
    margins = SafetyMargins(
        env=MarginSet(float(m["env"]["margin"]), float(m["env"]["alert"]),
                      float(m["env"].get("hyst", 0.02))),
        inter=MarginSet(float(m["inter"]["margin"]), float(m["inter"]["alert"]),
                        float(m["inter"].get("hyst", 0.02))),
        delta_self=float(m.get("delta_self", 0.02)),
        eps_sens=float(m.get("eps_sens", 0.0)),
        r_form_bound=float(m.get("r_form_bound", 0.0)),
        discretization_buffer=float(m.get("discretization_buffer", 5e-4)))

    ref_doc = doc.get("reference", {"type": "station"})
    reference = ReferenceConfig(
        kind=ref_doc.get("type", "station"),
        p_start=_vec(ref_doc["p_start"]) if ref_doc.get("p_start") is not None else None,
        p_goal=_vec(ref_doc["p_goal"]) if ref_doc.get("p_goal") is not None else None,
        speed=float(ref_doc.get("speed", 0.05)))

    obs_doc = doc.get("obstacles", {})
    statics = obs_doc.get("static", [])
    dyns = obs_doc.get("dynamic", [])
    obstacles = ObstacleConfig(
        static_centers=np.array([s["center"] for s in statics], dtype=float).reshape(-1, 3),
        static_radii=np.array([s["radius"] for s in statics], dtype=float),
        dyn_path_center=np.array([d["path_center"] for d in dyns], dtype=float).reshape(-1, 3),
        dyn_path_radius=np.array([d["path_radius"] for d in dyns], dtype=float),
        dyn_angular_speed=np.array([d["angular_speed"] for d in dyns], dtype=float),
        dyn_radius=np.array([d["radius"] for d in dyns], dtype=float),
        dyn_phase=np.array([d.get("phase", 0.0) for d in dyns], dtype=float))

    pert_doc = doc.get("perturbation", {})
    perturbation = PerturbationConfig(
        center=float(pert_doc.get("center", 0.04)),
        goal=float(pert_doc.get("goal", 0.02)),
        obstacle=float(pert_doc.get("obstacle", 0.02)))

    teleop = doc.get("teleop", {})
    q_nom = np.asarray(doc.get("q_nom", agents[0].q0), dtype=float)
    return ScenarioConfig(
        name=doc.get("name", "scenario"),
        dt=float(doc.get("dt", 1e-3)),
        duration=float(doc.get("duration", 10.0)),
        agents=agents,
        graph=graph,
        formation=formation,
        reference_to_leader=reference_to_leader,
        gains=gains,
        class_k=class_k,
        margins=margins,
        lambda_dls=float(doc.get("lambda_dls", 0.05)),
        tau_min_dwell=float(doc.get("tau_min_dwell", 0.15)),
        q_nom=q_nom,
        reference=reference,
        obstacles=obstacles,
        slack_penalty=float(doc.get("slack_penalty", 1e6)),
        torque_constraint=doc.get("torque_constraint", "polytope"),
        perturbation=perturbation,
        teleop_v_max=float(teleop.get("v_max", 0.6)),
        teleop_gain=float(teleop.get("k_v", 10.0)),
        inertia_error=float(doc.get("inertia_error", 0.0)),
        completion_tol=float(doc.get("completion_tol", 0.01)),
        eps_ori=float(doc.get("epsilons", {}).get("ori", 0.05)),
        raw=doc)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises on any violation."""
    doc = read_scenario_document(path)
    config = parse_scenario(doc)
    problems = validate_scenario(config)
    if problems:
        raise ConfigValidationError(problems)
    return config


def read_scenario_document(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(str(exc), line=exc.lineno, column=exc.colno) from exc


def validate_scenario(config: ScenarioConfig) -> list[str]:
    """Every violated invariant as 'key.path: problem' strings."""
    problems = []
    if config.dt <= 0:
        problems.append("dt: must be > 0")
    if config.duration <= 0:
        problems.append("duration: must be > 0")
    for i, agent in enumerate(config.agents):
        for p in agent.model.validate():
            problems.append(f"agents[{i}].model: {p}")
        if agent.q0.shape != (agent.model.n_joints,):
            problems.append(f"agents[{i}].q0: wrong length")
        elif not np.all((agent.q0 >= agent.model.q_min) & (agent.q0 <= agent.model.q_max)):
            problems.append(f"agents[{i}].q0: outside joint limits")
    for p in config.graph.validate():
        problems.append(f"graph_edges: {p}")
    if config.reference_to_leader:
        if config.graph.n > 1 and not config.graph.is_connected():
            problems.append("graph_edges: reference-to-leader propagation requires a "
                            "connected graph (spanning tree from any leader)")
    else:
        roots = [i for i, b in config.formation.reference_access.items() if b]
        if not config.graph.has_spanning_tree_from(roots):
            problems.append("formation.reference_access: reference-informed agents do "
                            "not span the graph (no spanning tree)")
    for p in config.formation.validate():
        if config.reference_to_leader and "reference access" in p:
            continue
        problems.append(f"formation: {p}")
    for p in config.margins.validate():
        problems.append(f"margins: {p}")
    if config.obstacles.count == 0:
        problems.append("obstacles: at least one obstacle is required")
    if np.any(config.obstacles.static_radii <= 0) or np.any(config.obstacles.dyn_radius <= 0):
        problems.append("obstacles: radii must be > 0")
    if config.lambda_dls <= 0:
        problems.append("lambda_dls: must be > 0")
    if config.tau_min_dwell <= 0:
        problems.append("tau_min_dwell: must be > 0")
    if config.slack_penalty <= 0:
        problems.append("slack_penalty: must be > 0")
    if config.torque_constraint not in ("polytope", "box"):
        problems.append("torque_constraint: must be 'polytope' or 'box'")
    if config.reference.kind not in ("line", "station"):
        problems.append("reference.type: must be 'line' or 'station'")
    if config.reference.kind == "line" and config.reference.p_goal is None:
        problems.append("reference.p_goal: required for line references")
    n0 = config.agents[0].model.n_joints if config.agents else 0
    if config.q_nom.shape != (n0,):
        problems.append("q_nom: wrong length")
    return problems


def content_hash(doc: dict) -> str:
    """Stable hash of the effective configuration document."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
