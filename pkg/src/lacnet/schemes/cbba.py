"""Consensus-Based Bundle Algorithm over a random geometric communication graph.

Each epoch the currently free aircraft run synchronous CBBA rounds on the
open tasks: a greedy bundle-build phase followed by one hop of consensus on
winning bids using the usual update/reset/leave decision rules. One round
costs one message hop on the link.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..engine import EventKind
from ..world import transfer_time
from .base import Allocator

NONE = -1


class NonConvergence(RuntimeError):
    pass


@dataclass
class CbbaAgentState:
    id: int
    # score(agent, task_index, path) -> marginal score of appending the task
    score: Callable[["CbbaAgentState", int, list], float]
    bundle_limit: int = 1
    bundle: list = field(default_factory=list)
    path: list = field(default_factory=list)
    neighbors: list = field(default_factory=list)
    # winning_bids: task index -> (bid, agent)
    y: list = field(default_factory=list)
    z: list = field(default_factory=list)

    @property
    def winning_bids(self) -> dict:
        return {j: (self.y[j], self.z[j]) for j in range(len(self.z)) if self.z[j] != NONE}


def _outbids(y1, z1, y2, z2) -> bool:
    """Bid ``(y1, z1)`` beats ``(y2, z2)``; equal bids go to the lower agent id."""
    if z2 == NONE:
        return z1 != NONE
    return y1 > y2 or (y1 == y2 and z1 < z2)


def build_bundle(agent: CbbaAgentState, n_tasks: int) -> None:
    while len(agent.bundle) < agent.bundle_limit:
        best_j, best_c = None, None
        for j in range(n_tasks):
            if j in agent.bundle:
                continue
            c = agent.score(agent, j, agent.path)
            if c <= 0:
                continue
            if agent.z[j] != NONE and not _outbids(c, agent.id, agent.y[j], agent.z[j]):
                continue
            if best_c is None or c > best_c:
                best_j, best_c = j, c
        if best_j is None:
            return
        agent.bundle.append(best_j)
        agent.path.append(best_j)
        agent.y[best_j] = best_c
        agent.z[best_j] = agent.id


def _resolve(i, k, yi, zi, yk, zk, s_prev, pos, plausible, j):
    """Decision for receiver i given sender k's view of one task.

    Returns "update", "reset" or "leave".
    """
    if zk != NONE and not plausible(yk, zk, j):
        return "leave"
    pi, pk = pos[i], pos[k]

    def newer(m):
        return s_prev[pk, pos[m]] > s_prev[pi, pos[m]]

    if zk == k:
        if zi == i:
            return "update" if _outbids(yk, zk, yi, zi) else "leave"
        if zi == k:
            return "update"
        if zi == NONE:
            return "update"
        return "update" if (newer(zi) or _outbids(yk, zk, yi, zi)) else "leave"
    if zk == i:
        if zi == i or zi == NONE:
            return "leave"
        if zi == k:
            return "reset"
        return "reset" if newer(zi) else "leave"
    if zk != NONE:
        m = zk
        if zi == i:
            return "update" if (newer(m) and _outbids(yk, zk, yi, zi)) else "leave"
        if zi == k:
            return "update" if newer(m) else "reset"
        if zi == m:
            return "update" if newer(m) else "leave"
        if zi == NONE:
            return "update" if newer(m) else "leave"
        n = zi
        if newer(m) and newer(n):
            return "update"
        if newer(m) and _outbids(yk, zk, yi, zi):
            return "update"
        if newer(n) and s_prev[pi, pos[m]] > s_prev[pk, pos[m]]:
            return "reset"
        return "leave"
    # sender believes nobody holds the task
    if zi == i or zi == NONE:
        return "leave"
    if zi == k:
        return "update"
    return "update" if newer(zi) else "leave"


def cbba_round(agents: list[CbbaAgentState], n_tasks: int, stamps: np.ndarray, rnd: int,
               plausible=lambda y, z, j: True) -> bool:
    """One synchronous round; returns True if any belief or bundle changed."""
    before = [(list(a.y), list(a.z), list(a.bundle)) for a in agents]
    for a in agents:
        build_bundle(a, n_tasks)
    sent = [(list(a.y), list(a.z)) for a in agents]
    pos = {a.id: idx for idx, a in enumerate(agents)}
    s_prev = stamps.copy()
    for idx, a in enumerate(agents):
        i = a.id
        for k in a.neighbors:
            yk, zk = sent[pos[k]]
            for j in range(n_tasks):
                if zk[j] == a.z[j] and yk[j] == a.y[j]:
                    continue
                action = _resolve(i, k, a.y[j], a.z[j], yk[j], zk[j], s_prev, pos, plausible, j)
                if action == "update":
                    a.y[j], a.z[j] = yk[j], zk[j]
                elif action == "reset":
                    a.y[j], a.z[j] = 0.0, NONE
        if a.neighbors:
            nb = [pos[k] for k in a.neighbors]
            stamps[idx] = np.maximum(s_prev[idx], s_prev[nb].max(axis=0))
            stamps[idx, nb] = rnd
        stamps[idx, idx] = rnd
    # release everything after the first task this agent was outbid on
    for a in agents:
        for n, j in enumerate(a.bundle):
            if a.z[j] != a.id:
                for later in a.bundle[n + 1:]:
                    if a.z[later] == a.id:
                        a.y[later], a.z[later] = 0.0, NONE
                del a.bundle[n:]
                a.path = [t for t in a.path if t in a.bundle]
                break
        for j in range(n_tasks):
            if a.z[j] == a.id and j not in a.bundle:
                a.y[j], a.z[j] = 0.0, NONE
    after = [(a.y, a.z, a.bundle) for a in agents]
    return any(b != (list(y), list(z), list(bd)) for b, (y, z, bd) in zip(before, after))


def graph_diameter(adj: dict[int, list[int]]) -> int:
    best = 0
    for src in adj:
        dist = {src: 0}
        q = deque([src])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        if len(dist) < len(adj):
            return math.inf
        best = max(best, max(dist.values()))
    return best


@dataclass
class CbbaOutcome:
    rounds: int
    converged: bool
    assignment: dict  # task index -> agent id
    agents: list


def run_cbba(agents: list[CbbaAgentState], n_tasks: int, max_rounds: int | None = None,
             plausible=lambda y, z, j: True) -> CbbaOutcome:
    """Iterate rounds until no winning bid changes.

    The default round budget is ``2 * diameter * n_tasks``; exceeding it
    yields ``converged=False`` with an empty assignment.
    """
    for a in agents:
        a.y = [0.0] * n_tasks
        a.z = [NONE] * n_tasks
        a.bundle, a.path = [], []
    if n_tasks == 0 or not agents:
        return CbbaOutcome(0, True, {}, agents)
    if max_rounds is None:
        diam = graph_diameter({a.id: a.neighbors for a in agents})
        max_rounds = 2 * max(1, diam) * n_tasks
    stamps = np.zeros((len(agents), len(agents)))
    rnd = 0
    while rnd < max_rounds:
        rnd += 1
        if not cbba_round(agents, n_tasks, stamps, rnd, plausible):
            return CbbaOutcome(rnd, True, dict(_agreed(agents, n_tasks)), agents)
    return CbbaOutcome(rnd, False, {}, agents)


def _agreed(agents, n_tasks):
    for j in range(n_tasks):
        w = agents[0].z[j]
        if w != NONE:
            yield j, w


def geometric_graph(points: dict[int, tuple[float, float]], radius: float) -> dict[int, list[int]]:
    ids = sorted(points)
    adj = {i: [] for i in ids}
    r2 = radius * radius
    for a_idx, i in enumerate(ids):
        xi, yi = points[i]
        for j in ids[a_idx + 1:]:
            xj, yj = points[j]
            if (xi - xj) ** 2 + (yi - yj) ** 2 <= r2:
                adj[i].append(j)
                adj[j].append(i)
    return adj


def largest_component(adj: dict[int, list[int]]) -> list[int]:
    seen, best = set(), []
    for src in sorted(adj):
        if src in seen:
            continue
        comp, q = [src], deque([src])
        seen.add(src)
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.append(v)
                    q.append(v)
        if len(comp) > len(best):
            best = comp
    return sorted(best)


class CbbaAllocator(Allocator):
    name = "cbba"

    def __init__(self, world):
        super().__init__(world)
        self.open: list = []
        self.epochs = 0
        self.rounds_total = 0
        self.nonconverged = 0
        self.agreement_violations = 0

    def start(self) -> None:
        self.sim.schedule(self.cfg.cbba.epoch_s, EventKind.CBBA_ROUND, None, self._epoch)

    def on_task_arrival(self, rec) -> None:
        self.open.append(rec)

    def _agents(self, now: float, tasks: list):
        cfg = self.cfg
        link = self.world.link
        tv = cfg.cbba.time_value
        free = [n for n in self.world.nodes if not n.delivering(now)]
        adj = geometric_graph({n.id: n.position for n in free}, cfg.cbba.radius_m)
        members = largest_component(adj)
        keep = set(members)
        by_id = {n.id: n for n in free}

        def exec_time(node, task):
            return transfer_time(task.data_size, link) + task.flop_load / node.compute_capacity

        def bound(node, j):
            # best claim a node of this class could make: idle, true capacity
            task = tasks[j]
            return task.max_payment - tv * exec_time(node, task)

        def honest_score(agent, j, path):
            node = by_id[agent.id]
            t = node.backlog(now) + sum(exec_time(node, tasks[p]) for p in path)
            task = tasks[j]
            return task.max_payment - tv * (t + exec_time(node, task))

        def liar_score(agent, j, path):
            # claims as much as neighbours will accept, whatever it holds
            return bound(by_id[agent.id], j)

        agents = []
        for nid in members:
            node = by_id[nid]
            agents.append(CbbaAgentState(
                nid, honest_score if node.honest else liar_score, cfg.cbba.bundle_limit,
                neighbors=[k for k in adj[nid] if k in keep]))

        def plausible(y, z, j):
            task = tasks[j]
            if y > task.max_payment:
                return False
            return y <= bound(by_id[z], j) + 1e-9

        return agents, plausible

    def _epoch(self, event) -> None:
        now = event.fire_at
        cfg = self.cfg
        nxt = now + cfg.cbba.epoch_s
        if nxt <= cfg.horizon_s:
            self.sim.schedule(nxt, EventKind.CBBA_ROUND, None, self._epoch)
        pending = []
        for rec in self.open:
            if rec.done:
                continue
            if now >= rec.task.due:
                self.world.fail(rec, now, "expired")
                continue
            pending.append(rec)
        self.open = pending
        if not pending:
            return
        tasks = [r.task for r in pending]
        agents, plausible = self._agents(now, tasks)
        if not agents:
            return
        self.epochs += 1
        out = run_cbba(agents, len(tasks), plausible=plausible)
        self.rounds_total += out.rounds
        hop = self.world.link.base_latency + 128 * len(tasks) / self.world.link.bandwidth
        decided = now + out.rounds * hop
        if not out.converged:
            self.nonconverged += 1
            for rec in pending:
                self.world.fail(rec, decided, "nonconvergence")
            self.open = []
            return
        if any(a.z != agents[0].z for a in agents):
            self.agreement_violations += 1
        plan = []
        assigned = set()
        for a in agents:
            for j in a.path:
                if out.assignment.get(j) == a.id:
                    plan.append((pending[j], a.id))
                    assigned.add(j)
        self.open = [r for j, r in enumerate(pending) if j not in assigned]
        if plan:
            self.sim.schedule(decided, EventKind.MESSAGE_DELIVERY, plan, self._dispatch)

    def _dispatch(self, event) -> None:
        for rec, nid in event.payload:
            rec.delays["allocation"] = event.fire_at - rec.task.arrival_time
            self.world.dispatch(rec, self.world.nodes[nid], event.fire_at)

    def diagnostics(self) -> dict:
        return {"cbba_epochs": self.epochs,
                "cbba_mean_rounds": self.rounds_total / self.epochs if self.epochs else 0.0,
                "cbba_nonconverged": self.nonconverged,
                "cbba_agreement_violations": self.agreement_violations}
