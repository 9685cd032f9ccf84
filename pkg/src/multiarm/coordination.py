"""Distributed coordination layer: communication graph, scalar clearance
broadcast accounting, risk-aware leader selection with dwell time, and the
environmental / inter-agent trigger state machines with hysteresis.

Everything here is deterministic: identical input sequences produce
bitwise-identical trigger and leader traces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class MissingClearanceError(KeyError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected communication graph over agents 0..n-1."""

    n: int
    edges: tuple

    def __post_init__(self):
        norm = []
        seen = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self edge ({a},{b}) not allowed")
            e = (min(a, b), max(a, b))
            if e not in seen:
                seen.add(e)
                norm.append(e)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def neighbors(self, i: int) -> list[int]:
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def is_connected(self) -> bool:
        if self.n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            cur = stack.pop()
            for nb in self.neighbors(cur):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n

    def has_spanning_tree_from(self, roots: Sequence[int]) -> bool:
        """True when every agent is reachable from some reference-informed root."""
        seen = set(int(r) for r in roots)
        stack = list(seen)
        while stack:
            cur = stack.pop()
            for nb in self.neighbors(cur):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n and len(roots) > 0

    def validate(self) -> list[str]:
        problems = []
        if self.n < 1:
            problems.append("graph must have at least one agent")
        for a, b in self.edges:
            if not (0 <= a < self.n and 0 <= b < self.n):
                problems.append(f"edge ({a},{b}) references unknown agent")
        if self.n > 1 and not self.is_connected():
            problems.append("graph is not connected")
        return problems


@dataclass
class TriggerState:
    """Latched trigger bits: env per agent, inter per graph edge."""

    env: dict = field(default_factory=dict)
    inter: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, graph: Graph) -> "TriggerState":
        return cls(env={i: 0 for i in range(graph.n)},
                   inter={e: 0 for e in graph.edges})

    def copy(self) -> "TriggerState":
        return TriggerState(env=dict(self.env), inter=dict(self.inter))

    def active_edges(self) -> list[tuple]:
        return [e for e in sorted(self.inter) if self.inter[e]]


@dataclass(frozen=True)
class LeaderRecord:
    """Current leader, the time it took office, and the switch history."""

    leader: int
    since: float
    history: tuple = ()
    blocked_candidate: int = -1   # last infeasible switch target, for log dedup

    def validate_dwell(self, tau_min: float) -> bool:
        times = [t for t, _ in self.history]
        return all(b - a >= tau_min - 1e-12 for a, b in zip(times, times[1:]))


def _argmin_clearance(clearances: Mapping[int, float], agents: Sequence[int]) -> int:
    """Smallest clearance wins; ties resolve to the lowest agent index."""
    best = None
    best_d = np.inf
    for i in sorted(int(a) for a in agents):
        if i not in clearances:
            raise MissingClearanceError(f"no clearance for agent {i}")
        d = float(clearances[i])
        if not np.isfinite(d):
            raise MissingClearanceError(f"clearance for agent {i} is not finite")
        if d < best_d:
            best_d = d
            best = i
    return best


def select_leader(clearances: Mapping[int, float], agents: Sequence[int],
                  current: LeaderRecord | None, t: float, tau_min: float,
                  d_margin_env: float) -> LeaderRecord:
    """Risk-aware leader update.

    The agent with the smallest body clearance is the candidate; a switch is
    applied only after the dwell time has elapsed and only if the incoming
    leader starts with a non-negative environmental barrier. Otherwise the
    current leader is retained.
    """
    candidate = _argmin_clearance(clearances, agents)
    if current is None:
        return LeaderRecord(leader=candidate, since=t, history=((t, candidate),))
    if candidate == current.leader:
        if current.blocked_candidate != -1:
            return replace(current, blocked_candidate=-1)
        return current
    if t - current.since < tau_min:
        return current
    if clearances[candidate] - d_margin_env < 0.0:
        if current.blocked_candidate != candidate:
            log.warning("leader switch to %d blocked at t=%.3f: incoming barrier %.4f < 0",
                        candidate, t, clearances[candidate] - d_margin_env)
            return replace(current, blocked_candidate=candidate)
        return current
    return LeaderRecord(leader=candidate, since=t,
                        history=current.history + ((t, candidate),))


def step_env_trigger(state: int, d_body: float, d_alert: float, hyst: float) -> int:
    """Hysteresis trigger on the body clearance against the alert distance."""
    f = d_body - d_alert
    if state == 0:
        return 1 if f <= 0.0 else 0
    return 0 if f >= hyst else 1


def step_inter_trigger(state: int, p_i, p_j, d_alert_inter: float, hyst: float) -> int:
    """Hysteresis trigger on end-effector separation; symmetric in (i, j)."""
    g = float(np.linalg.norm(np.asarray(p_i, float) - np.asarray(p_j, float))) - d_alert_inter
    if state == 0:
        return 1 if g <= 0.0 else 0
    return 0 if g >= hyst else 1


def reset_env_trigger_on_switch(triggers: TriggerState, new_leader: int,
                                d_body: float, d_alert: float, hyst: float) -> None:
    """Incoming leader's env trigger is cleared, then immediately re-evaluated."""
    triggers.env[new_leader] = 0
    triggers.env[new_leader] = step_env_trigger(0, d_body, d_alert, hyst)


def broadcast_round(clearances: Mapping[int, float],
                    triggers: TriggerState) -> tuple[dict, int]:
    """Account one communication round.

    Every agent broadcasts its scalar body clearance (one message each);
    every inter-trigger-active edge additionally carries two full-state
    exchanges. Returns the clearance map and the message count for the tick.
    """
    count = len(clearances) + 2 * sum(1 for e in triggers.inter if triggers.inter[e])
    return dict(clearances), count
