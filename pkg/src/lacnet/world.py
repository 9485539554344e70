"""Infrastructure layer: aircraft, random-waypoint mobility, link and compute timing."""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from typing import Iterator

ARENA_M = 2000.0
ALTITUDE_M = (100.0, 150.0)

UAV = "UAV"
EVTOL = "eVTOL"

SPEED_MAX = {UAV: 23.0, EVTOL: 45.0}
CAPACITY_FLOPS = {UAV: 1.0e12, EVTOL: 5.3e12}


@dataclass
class LinkModel:
    bandwidth: float = 5e9
    base_latency: float = 0.010

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.base_latency < 0:
            raise ValueError("base_latency must be nonnegative")


@dataclass
class ComputeTask:
    id: int
    arrival_time: float
    origin: str
    data_size: float = 2.0e8
    flop_load: float = 2e12
    deadline: float = 120.0
    max_payment: float = 50.0
    units: int = 100

    def __post_init__(self):
        if self.data_size < 0 or self.flop_load < 0:
            raise ValueError(f"task {self.id}: sizes must be nonnegative")
        if self.deadline <= 0:
            raise ValueError(f"task {self.id}: deadline must be positive")
        if self.max_payment < 0:
            raise ValueError(f"task {self.id}: max_payment must be nonnegative")

    @property
    def due(self) -> float:
        return self.arrival_time + self.deadline

    @property
    def reserve_per_unit(self) -> float:
        return self.max_payment / self.units


@dataclass
class DutySchedule:
    """Alternating delivery (busy) / idle legs, stored as sorted busy intervals."""

    starts: list[float] = field(default_factory=list)
    ends: list[float] = field(default_factory=list)

    def delivering(self, t: float) -> bool:
        i = bisect.bisect_right(self.starts, t) - 1
        return i >= 0 and t < self.ends[i]

    def delivering_until(self, t: float) -> float:
        i = bisect.bisect_right(self.starts, t) - 1
        if i >= 0 and t < self.ends[i]:
            return self.ends[i]
        return t


@dataclass
class AircraftNode:
    id: int
    kind: str
    x: float
    y: float
    altitude: float
    pubkey: str
    speed_max: float = 0.0
    compute_capacity: float = 0.0
    busy_until: float = 0.0
    honest: bool = True
    registered: bool = False
    waypoint: tuple[float, float] | None = None
    duty: DutySchedule = field(default_factory=DutySchedule)
    # (start, end) compute intervals actually executed
    compute_log: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.speed_max:
            self.speed_max = SPEED_MAX[self.kind]
        if not self.compute_capacity:
            self.compute_capacity = CAPACITY_FLOPS[self.kind]
        if self.compute_capacity <= 0:
            raise ValueError("compute_capacity must be positive")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def delivering(self, t: float) -> bool:
        return self.duty.delivering(t)

    def delivering_until(self, t: float) -> float:
        return self.duty.delivering_until(t)

    def backlog(self, t: float) -> float:
        return max(0.0, self.busy_until - t)

    def run_job(self, ready_at: float, seconds: float) -> tuple[float, float]:
        """Reserve the processor for one job; jobs never overlap."""
        start = max(ready_at, self.busy_until)
        end = start + seconds
        self.busy_until = end
        self.compute_log.append((start, end))
        return start, end


def transfer_time(bits: float, link: LinkModel) -> float:
    if bits < 0:
        raise ValueError("bits must be nonnegative")
    return link.base_latency + bits / link.bandwidth


def compute_time(task: ComputeTask, node: AircraftNode) -> float:
    if node.compute_capacity <= 0:
        raise ValueError("compute_capacity must be positive")
    return task.flop_load / node.compute_capacity


def random_waypoint(rng: random.Random) -> tuple[float, float]:
    return (rng.uniform(0.0, ARENA_M), rng.uniform(0.0, ARENA_M))


def step_mobility(node: AircraftNode, dt: float, rng: random.Random) -> AircraftNode:
    """Advance ``node`` toward its waypoint for ``dt`` seconds.

    A node that reaches its waypoint stops there for the rest of the step and
    draws the next waypoint, so no step overshoots.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if node.waypoint is None:
        node.waypoint = random_waypoint(rng)
    wx, wy = node.waypoint
    dx, dy = wx - node.x, wy - node.y
    dist = math.hypot(dx, dy)
    reach = node.speed_max * dt
    if reach >= dist:
        node.x, node.y = wx, wy
        node.waypoint = random_waypoint(rng)
    else:
        node.x += dx / dist * reach
        node.y += dy / dist * reach
    node.x = min(max(node.x, 0.0), ARENA_M)
    node.y = min(max(node.y, 0.0), ARENA_M)
    return node


def spawn_tasks(rate_per_min: float, horizon: float, rng: random.Random) -> Iterator[float]:
    """Poisson arrival instants in ``(0, horizon]``."""
    if rate_per_min <= 0:
        raise ValueError("rate_per_min must be positive")
    mean_gap = 60.0 / rate_per_min
    t = 0.0
    while True:
        t += rng.expovariate(1.0 / mean_gap)
        if t > horizon:
            return
        yield t


def draw_duty(rng: random.Random, mean_busy: float, mean_idle: float, horizon: float) -> DutySchedule:
    """Two-state alternating renewal process started from its stationary mix."""
    sched = DutySchedule()
    if mean_busy <= 0:
        return sched
    if mean_idle <= 0:
        sched.starts.append(0.0)
        sched.ends.append(math.inf)
        return sched
    busy = rng.random() < mean_busy / (mean_busy + mean_idle)
    t = 0.0
    while t < horizon:
        if busy:
            leg = rng.expovariate(1.0 / mean_busy)
            sched.starts.append(t)
            sched.ends.append(t + leg)
        else:
            leg = rng.expovariate(1.0 / mean_idle)
        t += leg
        busy = not busy
    return sched


def fleet_kinds(n_nodes: int, uav_fraction: float) -> list[str]:
    n_uav = math.floor(uav_fraction * n_nodes + 1e-9)
    return [UAV] * n_uav + [EVTOL] * (n_nodes - n_uav)


def node_pubkey(node_id: int) -> str:
    return f"pk:A{node_id:03d}"
