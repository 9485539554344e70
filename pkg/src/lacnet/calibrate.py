"""Chain-only calibration: confirmation latency under Poisson background traffic.

Only the permissionless ledger runs; a single funded key sends self-transfers
at ``background_tps``. The mean confirmation latency (seal wait plus
propagation) is the figure the task-level runs inherit.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from .chain import PERMISSIONED, PERMISSIONLESS, Ledger, to_micro
from .config import ScenarioConfig
from .engine import EventKind, Simulator, rng_stream
from .simulation import ChainDriver

SENDER = "pk:background"


@dataclass
class CalibrationResult:
    background_tps: float
    seed: int
    n_txs: int
    mean_confirmation_s: float
    p95_confirmation_s: float
    blocks: int


def calibrate_chain(cfg: ScenarioConfig, n_txs: int = 1000) -> CalibrationResult:
    c = cfg.chain
    if c.background_tps <= 0:
        raise ValueError("calibration needs a positive background_tps")
    sim = Simulator()
    registry = Ledger(PERMISSIONED)
    registry.registry.add(SENDER)
    led = Ledger(PERMISSIONLESS, block_size=c.block_size, block_timeout=c.block_timeout_s,
                 tps_cap=c.tps_cap, propagation=c.propagation_s, registry_source=registry)
    led.genesis({SENDER: to_micro(n_txs)})
    driver = ChainDriver(sim, led)
    rng = rng_stream(cfg.seed, "background")
    sent = []

    def send(event):
        tx = led.new_tx(SENDER, event.fire_at, "TokenTransfer", src=SENDER, dst=SENDER, amount=1)
        driver.submit(tx)
        sent.append(tx.id)
        if len(sent) < n_txs:
            sim.after(rng.expovariate(c.background_tps), EventKind.TIMER, None, send)

    sim.schedule(rng.expovariate(c.background_tps), EventKind.TIMER, None, send)
    sim.run_until(float("inf"))
    lat = sorted(led.confirmation_latency(t) for t in sent)
    return CalibrationResult(
        background_tps=c.background_tps,
        seed=cfg.seed,
        n_txs=len(lat),
        mean_confirmation_s=statistics.fmean(lat),
        p95_confirmation_s=lat[min(len(lat) - 1, int(0.95 * len(lat)))],
        blocks=len(led.blocks),
    )
