"""Malicious-node behaviour: inflated status reports and bid-and-abandon."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

FALSE_CAPACITY_REPORT = "FalseCapacityReport"
BID_AND_ABANDON = "BidAndAbandon"
BEHAVIORS = (FALSE_CAPACITY_REPORT, BID_AND_ABANDON)


@dataclass
class AdversaryConfig:
    malicious_fraction: float = 0.0
    behaviors: frozenset = field(default_factory=lambda: frozenset(BEHAVIORS))
    abandon_prob: float = 1.0
    report_inflation: float = 5.0
    ban_after: int = 3

    def __post_init__(self):
        if not 0.0 <= self.malicious_fraction <= 1.0:
            raise ValueError("malicious_fraction must be in [0, 1]")
        if not 0.0 <= self.abandon_prob <= 1.0:
            raise ValueError("abandon_prob must be in [0, 1]")
        if self.report_inflation <= 0:
            raise ValueError("report_inflation must be positive")
        unknown = set(self.behaviors) - set(BEHAVIORS)
        if unknown:
            raise ValueError(f"unknown behaviors {sorted(unknown)}")


@dataclass(frozen=True)
class NodeReport:
    capacity: float
    busy: bool
    busy_until: float = 0.0


def pick_malicious(n_nodes: int, fraction: float, rng: random.Random) -> set[int]:
    k = math.floor(fraction * n_nodes + 1e-9)
    return set(rng.sample(range(n_nodes), k))


def corrupt_report(honest: bool, truth: NodeReport, cfg: AdversaryConfig) -> NodeReport:
    if honest or FALSE_CAPACITY_REPORT not in cfg.behaviors or cfg.report_inflation == 1.0:
        return truth
    return replace(truth, capacity=truth.capacity * cfg.report_inflation, busy=False, busy_until=0.0)


def maybe_abandon(honest: bool, cfg: AdversaryConfig, rng: random.Random) -> bool:
    """True when the assigned node walks away without delivering."""
    if honest or BID_AND_ABANDON not in cfg.behaviors:
        return False
    if cfg.abandon_prob >= 1.0:
        return True
    return rng.random() < cfg.abandon_prob
