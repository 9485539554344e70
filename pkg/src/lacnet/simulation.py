"""One simulation run: fleet, arrivals, chain plumbing and the chosen allocator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .adversary import AdversaryConfig, maybe_abandon, pick_malicious
from .chain import PERMISSIONED, PERMISSIONLESS, Ledger, to_micro
from .config import ScenarioConfig, adversary_behaviors
from .engine import EventKind, Simulator, rng_stream
from .world import (
    EVTOL,
    AircraftNode,
    ComputeTask,
    LinkModel,
    compute_time,
    draw_duty,
    fleet_kinds,
    node_pubkey,
    random_waypoint,
    spawn_tasks,
    step_mobility,
    transfer_time,
    ARENA_M,
    ALTITUDE_M,
)

OPEN = "open"
ASSIGNED = "assigned"
COMPLETED = "completed"
FAILED = "failed"

CONTRACT_KEY = "pk:contract"
ANCHOR_KEY = "pk:anchor"
BACKGROUND_KEY = "pk:background"


class TaskNotCompleted(RuntimeError):
    pass


@dataclass
class TaskRecord:
    task: ComputeTask
    status: str = OPEN
    executor: Optional[int] = None
    assigned_at: Optional[float] = None
    compute_start: Optional[float] = None
    compute_end: Optional[float] = None
    completed_at: Optional[float] = None
    failed_at: Optional[float] = None
    fail_reason: str = ""
    malicious_win: bool = False
    abandoned: bool = False
    # scheme-specific breakdown, e.g. {"allocation": 0.5}
    delays: dict = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.status in (COMPLETED, FAILED)


def end_to_end_latency(rec: TaskRecord) -> float:
    if rec.status != COMPLETED:
        raise TaskNotCompleted(rec.task.id)
    return rec.completed_at - rec.task.arrival_time


class ChainDriver:
    """Binds a passive ledger to the event loop: seals on time, notifies on confirm."""

    def __init__(self, sim: Simulator, ledger: Ledger):
        self.sim = sim
        self.ledger = ledger
        self._listeners: dict[str, callable] = {}
        self._wakeups: set[float] = set()

    def submit(self, tx, on_confirm=None):
        self.ledger.submit_tx(tx, self.sim.clock)
        if on_confirm is not None:
            self._listeners[tx.id] = on_confirm
        self.poke()
        return tx

    def poke(self, event=None):
        now = self.sim.clock
        if event is not None:
            self._wakeups.discard(event.fire_at)
        for block in self.ledger.seal_blocks(now):
            self.sim.schedule(block.sealed_at + self.ledger.propagation,
                              EventKind.MESSAGE_DELIVERY, block, self._deliver)
        wake = self.ledger.next_wakeup(now)
        if wake is not None and wake > now and wake not in self._wakeups:
            self._wakeups.add(wake)
            self.sim.schedule(wake, EventKind.BLOCK_SEAL, self.ledger.kind, self.poke)

    def _deliver(self, event):
        block = event.payload
        for tx in block.txs:
            cb = self._listeners.pop(tx.id, None)
            if cb is not None:
                cb(tx, event.fire_at)


class World:
    def __init__(self, cfg: ScenarioConfig, record_trace: bool = False):
        self.cfg = cfg
        self.sim = Simulator(record_trace=record_trace)
        self.link = LinkModel(cfg.link.bandwidth_bps, cfg.link.latency_s)
        self.adv = AdversaryConfig(
            malicious_fraction=cfg.adversary.malicious_fraction,
            behaviors=adversary_behaviors(cfg),
            abandon_prob=cfg.adversary.abandon_prob,
            report_inflation=cfg.adversary.report_inflation,
            ban_after=cfg.adversary.ban_after,
        )
        seed = cfg.seed
        self.rng_arrivals = rng_stream(seed, "arrivals")
        self.rng_mobility = rng_stream(seed, "mobility")
        self.rng_duty = rng_stream(seed, "duty")
        self.rng_adversary = rng_stream(seed, "adversary")
        self.rng_abandon = rng_stream(seed, "abandon")
        self.rng_bids = rng_stream(seed, "bids")
        self.rng_background = rng_stream(seed, "background")

        self.nodes = self._build_fleet()
        self.requesters = [f"pk:R{i:02d}" for i in range(cfg.chain.n_requesters)]
        self.records: dict[int, TaskRecord] = {}
        self.permissioned: Optional[Ledger] = None
        self.permissionless: Optional[Ledger] = None
        self.chains: dict[str, ChainDriver] = {}
        self.allocator = None

    # -- construction -------------------------------------------------------

    def _build_fleet(self) -> list[AircraftNode]:
        cfg = self.cfg
        malicious = pick_malicious(cfg.n_nodes, cfg.adversary.malicious_fraction, self.rng_adversary)
        nodes = []
        for i, kind in enumerate(fleet_kinds(cfg.n_nodes, cfg.uav_fraction)):
            x, y = random_waypoint(self.rng_mobility)
            alt = self.rng_mobility.uniform(*ALTITUDE_M)
            node = AircraftNode(i, kind, x, y, alt, node_pubkey(i), honest=i not in malicious)
            node.waypoint = random_waypoint(self.rng_mobility)
            m = cfg.mobility
            busy, idle = (m.evtol_busy_s, m.evtol_idle_s) if kind == EVTOL else (m.uav_busy_s, m.uav_idle_s)
            node.duty = draw_duty(self.rng_duty, busy, idle, cfg.horizon_s)
            node.open_award = None
            node.burns = 0
            nodes.append(node)
        return nodes

    def make_task(self, task_id: int, t: float, origin: str) -> ComputeTask:
        tc = self.cfg.tasks
        return ComputeTask(task_id, t, origin, tc.data_bits, tc.flop_load, tc.deadline_s,
                           tc.max_payment, self.cfg.task_units)

    def setup_chains(self) -> None:
        """Both ledgers, genesis balances and registration of every identity."""
        c = self.cfg.chain
        kw = dict(block_size=c.block_size, block_timeout=c.block_timeout_s,
                  tps_cap=c.tps_cap, propagation=c.propagation_s)
        self.permissioned = Ledger(PERMISSIONED, **kw)
        self.permissionless = Ledger(PERMISSIONLESS, registry_source=self.permissioned, **kw)
        self.chains = {PERMISSIONED: ChainDriver(self.sim, self.permissioned),
                       PERMISSIONLESS: ChainDriver(self.sim, self.permissionless)}
        genesis = {r: to_micro(c.requester_endowment) for r in self.requesters}
        genesis.update({n.pubkey: to_micro(c.node_endowment) for n in self.nodes})
        self.permissionless.genesis(genesis)

        def registered(node):
            def cb(tx, t):
                node.registered = True
            return cb

        keys = [CONTRACT_KEY, ANCHOR_KEY, BACKGROUND_KEY] + self.requesters
        for key in keys:
            self.register(key)
        for node in self.nodes:
            self.register(node.pubkey, registered(node))

    def register(self, pubkey: str, on_confirm=None):
        led = self.permissioned
        tx = led.new_tx(pubkey, self.sim.clock, "RegisterNode", pubkey=pubkey)
        return self.chains[PERMISSIONED].submit(tx, on_confirm)

    # -- shared execution path ----------------------------------------------

    def dispatch(self, rec: TaskRecord, node: AircraftNode, at: float) -> None:
        """Hand the task to ``node`` at time ``at``: data in, compute, result out."""
        rec.status = ASSIGNED
        rec.executor = node.id
        rec.assigned_at = at
        rec.malicious_win = not node.honest
        if maybe_abandon(node.honest, self.adv, self.rng_abandon):
            rec.abandoned = True
            return
        ready = at + transfer_time(rec.task.data_size, self.link)
        start, end = node.run_job(ready, compute_time(rec.task, node))
        rec.compute_start, rec.compute_end = start, end
        self.sim.schedule(end, EventKind.COMPUTE_DONE, rec, self._compute_done)

    def _compute_done(self, event) -> None:
        rec = event.payload
        back = transfer_time(self.cfg.tasks.result_bits, self.link)
        self.sim.schedule(event.fire_at + back, EventKind.MESSAGE_DELIVERY, rec, self._result_delivered)

    def _result_delivered(self, event) -> None:
        rec = event.payload
        if rec.status == FAILED:
            return
        t = event.fire_at
        if t <= rec.task.due:
            rec.status = COMPLETED
            rec.completed_at = t
        else:
            self.fail(rec, t, "late")
        self.allocator.on_result(rec, t)

    def fail(self, rec: TaskRecord, t: float, reason: str) -> None:
        if rec.done:
            return
        rec.status = FAILED
        rec.failed_at = t
        rec.fail_reason = reason

    # -- event sources ---------------------------------------------------------

    def _arrivals(self) -> None:
        for i, t in enumerate(spawn_tasks(self.cfg.arrival_rate_per_min, self.cfg.horizon_s,
                                          self.rng_arrivals)):
            origin = self.requesters[self.rng_arrivals.randrange(len(self.requesters))]
            task = self.make_task(i, t, origin)
            self.sim.schedule(t, EventKind.TASK_ARRIVAL, task, self._on_arrival)

    def _on_arrival(self, event) -> None:
        task = event.payload
        rec = TaskRecord(task)
        self.records[task.id] = rec
        if task.due <= self.cfg.horizon_s:
            self.sim.schedule(task.due, EventKind.TIMER, rec, self._on_deadline)
        self.allocator.on_task_arrival(rec)

    def _on_deadline(self, event) -> None:
        rec = event.payload
        if rec.done:
            return
        self.allocator.on_deadline(rec, event.fire_at)
        reason = "abandoned" if rec.abandoned else ("expired" if rec.status == OPEN else "late")
        self.fail(rec, event.fire_at, reason)

    def _mobility_tick(self, event) -> None:
        dt = self.cfg.mobility.tick_s
        for node in self.nodes:
            step_mobility(node, dt, self.rng_mobility)
        nxt = event.fire_at + dt
        if nxt <= self.cfg.horizon_s:
            self.sim.schedule(nxt, EventKind.MOBILITY_TICK, None, self._mobility_tick)

    def run(self):
        from .schemes import make_allocator

        self.allocator = make_allocator(self.cfg.scheme, self)
        self.allocator.start()
        self._arrivals()
        self.sim.schedule(self.cfg.mobility.tick_s, EventKind.MOBILITY_TICK, None, self._mobility_tick)
        return self.sim.run_until(self.cfg.horizon_s)


@dataclass
class RunResult:
    record: object
    diagnostics: dict


def run_scenario(cfg: ScenarioConfig, record_trace: bool = False, keep_world: bool = False):
    from .metrics import collect

    world = World(cfg, record_trace=record_trace)
    summary = world.run()
    record, diag = collect(world, summary)
    result = RunResult(record, diag)
    if keep_world:
        result.world = world
    return result
