"""Centralized allocation: one ground station, FIFO queue, trusts node reports."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..adversary import NodeReport, corrupt_report
from ..engine import EventKind
from ..world import transfer_time
from .base import Allocator


class NoFeasibleNode(LookupError):
    pass


@dataclass
class GcsState:
    service_time_per_task: float
    queue: deque = field(default_factory=deque)
    node_table: dict = field(default_factory=dict)
    # completion the GCS itself expects from its own assignments
    assigned_until: dict = field(default_factory=dict)
    busy: bool = False
    busy_time: float = 0.0


def report_table(nodes, now: float, adv) -> dict[int, NodeReport]:
    table = {}
    for n in nodes:
        truth = NodeReport(n.compute_capacity, n.delivering(now), n.busy_until)
        table[n.id] = corrupt_report(n.honest, truth, adv)
    return table


def cta_allocate(state: GcsState, task, link, now: float) -> int:
    """Reported-idle node with the earliest expected completion.

    Completion is transfer + compute at the reported capacity + whatever
    backlog the GCS believes the node has. Raises NoFeasibleNode when every
    node reports busy.
    """
    move = transfer_time(task.data_size, link)
    best, best_cost = None, None
    for nid, rep in state.node_table.items():
        if rep.busy:
            continue
        wait = max(rep.busy_until, state.assigned_until.get(nid, 0.0)) - now
        cost = move + task.flop_load / rep.capacity + max(0.0, wait)
        if best_cost is None or cost < best_cost:
            best, best_cost = nid, cost
    if best is None:
        raise NoFeasibleNode(task.id)
    state.assigned_until[best] = now + best_cost
    return best


class CtaAllocator(Allocator):
    name = "cta"

    def __init__(self, world):
        super().__init__(world)
        service = self.cfg.cta.service_per_node_s * self.cfg.n_nodes
        self.gcs = GcsState(service)
        self._in_service = None
        self._busy_since = 0.0
        self.retries = 0

    def on_task_arrival(self, rec) -> None:
        self.gcs.queue.append(rec)
        self._serve_next()

    def _serve_next(self) -> None:
        if self.gcs.busy:
            return
        now = self.sim.clock
        while self.gcs.queue:
            rec = self.gcs.queue.popleft()
            if rec.done:
                continue
            if now >= rec.task.due:
                self.world.fail(rec, now, "expired")
                continue
            self.gcs.busy = True
            self._in_service = rec
            self._busy_since = now
            self.sim.after(self.gcs.service_time_per_task, EventKind.GCS_SERVICE_DONE, rec, self._service_done)
            return

    def _service_done(self, event) -> None:
        rec = event.payload
        now = event.fire_at
        self.gcs.busy = False
        self.gcs.busy_time += now - self._busy_since
        self._in_service = None
        self.gcs.node_table = report_table(self.world.nodes, now, self.world.adv)
        try:
            nid = cta_allocate(self.gcs, rec.task, self.world.link, now)
        except NoFeasibleNode:
            self.retries += 1
            retry_at = now + self.cfg.cta.retry_interval_s
            if retry_at < rec.task.due:
                self.sim.schedule(retry_at, EventKind.TIMER, rec, self._retry)
        else:
            rec.delays["allocation"] = now - rec.task.arrival_time
            self.world.dispatch(rec, self.world.nodes[nid], now)
        self._serve_next()

    def _retry(self, event) -> None:
        self.on_task_arrival(event.payload)

    def busy_fraction(self, horizon: float) -> float:
        busy = self.gcs.busy_time
        if self.gcs.busy:
            busy += horizon - self._busy_since
        return busy / horizon

    def diagnostics(self) -> dict:
        return {"gcs_busy_fraction": self.busy_fraction(self.cfg.horizon_s),
                "gcs_queue_at_horizon": len(self.gcs.queue),
                "gcs_retries": self.retries}
