"""Per-run metrics, sweep-point aggregation and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import statistics
from dataclasses import dataclass

import numpy as np

from .chain import to_comp
from .simulation import COMPLETED, FAILED, end_to_end_latency

RUN_COLUMNS = (
    "scheme", "n_nodes", "arrival_rate_per_min", "malicious_fraction", "seed",
    "mean_latency_s", "p95_latency_s", "failure_rate", "utilization",
    "tasks_total", "tasks_failed", "tokens_settled", "blocks_sealed", "tasks_pending",
)
POINT_KEYS = ("scheme", "n_nodes", "arrival_rate_per_min", "malicious_fraction")
METRIC_KEYS = ("mean_latency_s", "p95_latency_s", "failure_rate", "utilization",
               "tasks_total", "tasks_failed", "tokens_settled", "blocks_sealed", "tasks_pending")


class MixedSweepPoint(ValueError):
    pass


@dataclass
class MetricsRecord:
    scheme: str
    n_nodes: int
    arrival_rate_per_min: float
    malicious_fraction: float
    seed: int
    mean_latency_s: float
    p95_latency_s: float
    failure_rate: float
    utilization: float
    # decided tasks (completed + failed); pending ones are counted separately
    tasks_total: int
    tasks_failed: int
    tokens_settled: float
    blocks_sealed: int
    tasks_pending: int = 0

    def __post_init__(self):
        if not 0.0 <= self.utilization <= 1.0:
            raise ValueError(f"utilization {self.utilization} outside [0, 1]")

    def row(self) -> list:
        return [getattr(self, c) for c in RUN_COLUMNS]


def utilization(nodes, start: float, end: float) -> float:
    """Capacity-weighted share of ``[start, end]`` the fleet spent computing."""
    span = end - start
    if span <= 0 or not nodes:
        return 0.0
    busy = 0.0
    total = 0.0
    for n in nodes:
        secs = sum(max(0.0, min(e, end) - max(s, start)) for s, e in n.compute_log)
        busy += secs * n.compute_capacity
        total += span * n.compute_capacity
    return min(1.0, busy / total)


def tokens_settled(ledger) -> float:
    """COMP paid to executors by confirmed settlement transactions."""
    if ledger is None:
        return 0.0
    micro = 0
    for _, tx in ledger.iter_txs():
        p = tx.payload
        if tx.kind == "TokenTransfer" and p.get("memo") == "payment":
            micro += p["amount"]
        elif tx.kind == "Mint" and "task_id" in p:
            micro += p["amount"]
    return to_comp(micro)


def collect(world, summary) -> tuple[MetricsRecord, dict]:
    cfg = world.cfg
    window = [r for r in world.records.values() if r.task.arrival_time >= cfg.warmup_s]
    done = [r for r in window if r.status == COMPLETED]
    failed = [r for r in window if r.status == FAILED]
    decided = len(done) + len(failed)
    lat = np.array([end_to_end_latency(r) for r in done])
    mean_lat = float(lat.mean()) if len(lat) else float("nan")
    p95 = float(np.percentile(lat, 95)) if len(lat) else float("nan")

    ledgers = [led for led in (world.permissioned, world.permissionless) if led is not None]
    record = MetricsRecord(
        scheme=cfg.scheme,
        n_nodes=cfg.n_nodes,
        arrival_rate_per_min=cfg.arrival_rate_per_min,
        malicious_fraction=cfg.adversary.malicious_fraction,
        seed=cfg.seed,
        mean_latency_s=round(mean_lat, 6),
        p95_latency_s=round(p95, 6),
        failure_rate=round(len(failed) / decided, 6) if decided else 0.0,
        utilization=round(utilization(world.nodes, cfg.warmup_s, cfg.horizon_s), 6),
        tasks_total=decided,
        tasks_failed=len(failed),
        tokens_settled=round(tokens_settled(world.permissionless), 6),
        blocks_sealed=sum(len(led.blocks) for led in ledgers),
        tasks_pending=len(window) - decided,
    )

    mal_abandon = sum(1 for r in window if r.done and r.malicious_win and r.abandoned)
    reasons: dict[str, int] = {}
    for r in failed:
        reasons[r.fail_reason] = reasons.get(r.fail_reason, 0) + 1
    diag = {
        "events": summary.events,
        "clock": summary.clock,
        "tasks_arrived": len(world.records),
        "tasks_completed": len(done),
        "malicious_abandon_share": mal_abandon / decided if decided else 0.0,
        "fail_reasons": dict(sorted(reasons.items())),
        "conservation_checks": sum(led.conservation_checks for led in ledgers),
        "conservation_violations": sum(led.conservation_violations for led in ledgers),
    }
    if world.permissionless is not None:
        led = world.permissionless
        conf = [led.confirmation_latency(tx.id) for _, tx in led.iter_txs()]
        diag["mean_confirmation_s"] = statistics.fmean(conf) if conf else float("nan")
        diag["confirmed_txs"] = len(conf)
    diag.update(world.allocator.diagnostics())
    return record, diag


def _stdev(xs: list[float]) -> float:
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def aggregate(records: list[MetricsRecord]) -> dict:
    """Mean and sample standard deviation of every metric at one sweep point."""
    if not records:
        raise MixedSweepPoint("no records")
    points = {tuple(getattr(r, k) for k in POINT_KEYS) for r in records}
    if len(points) != 1:
        raise MixedSweepPoint(f"records span {len(points)} sweep points")
    out = {k: getattr(records[0], k) for k in POINT_KEYS}
    out["runs"] = len(records)
    # fixed fold order so the result does not depend on completion order
    ordered = sorted(records, key=lambda r: r.seed)
    for k in METRIC_KEYS:
        xs = [float(getattr(r, k)) for r in ordered]
        out[f"{k}_mean"] = statistics.fmean(xs)
        out[f"{k}_std"] = _stdev(xs)
    return out


def summarize(records: list[MetricsRecord]) -> list[dict]:
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in POINT_KEYS), []).append(r)
    return [aggregate(groups[k]) for k in sorted(groups)]


def write_runs(records: list[MetricsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_runs(path) -> list[MetricsRecord]:
    types = {f.name: f.type for f in dataclasses.fields(MetricsRecord)}
    conv = {"str": str, "int": int, "float": float}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(**{k: conv[types[k]](v) for k, v in row.items()}))
    return out


def write_summary(rows: list[dict], path) -> None:
    if not rows:
        open(path, "w").close()
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
