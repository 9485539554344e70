"""Cartesian parameter sweeps with optional process fan-out and an ordered sink."""

from __future__ import annotations

import itertools
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .config import ScenarioConfig, ValidationError

# axis name -> config override key
AXES = {
    "scheme": "scheme",
    "arrival_rate": "arrival_rate_per_min",
    "n_nodes": "n_nodes",
    "malicious_fraction": "adversary.malicious_fraction",
    "seed": "seed",
}
SEEDS = (1, 2, 3, 4, 5)
SCHEMES = ("cta", "cbba", "rwa")

PRESETS = {
    "fig5a": {"scheme": SCHEMES, "arrival_rate": (10, 60, 100, 150, 200), "seed": SEEDS},
    "fig5b": {"scheme": SCHEMES, "malicious_fraction": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5), "seed": SEEDS},
    "fig5c": {"scheme": SCHEMES, "arrival_rate": (120,), "seed": SEEDS},
}
CALIBRATE_SEEDS = SEEDS


def _cast(axis: str, raw):
    if axis == "scheme":
        return str(raw)
    if axis in ("n_nodes", "seed"):
        return int(raw)
    return float(raw)


def parse_axis(text: str) -> tuple[str, list]:
    """``name=v1,v2,...`` into an axis; unknown names raise ValidationError."""
    name, sep, values = text.partition("=")
    name = name.strip()
    if not sep or not values.strip():
        raise ValidationError(name or text, "axis needs name=v1,v2,...")
    if name not in AXES:
        raise ValidationError(name, f"unknown axis (valid: {', '.join(AXES)})")
    try:
        return name, [_cast(name, v.strip()) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(name, f"bad value list {values!r}") from None


def expand(base: ScenarioConfig, axes: dict[str, list]) -> list[ScenarioConfig]:
    """One validated config per point of the Cartesian product, in axis order."""
    for name in axes:
        if name not in AXES:
            raise ValidationError(name, "unknown axis")
    names = list(axes)
    out = []
    for combo in itertools.product(*(axes[n] for n in names)):
        out.append(base.with_overrides(**{AXES[n]: _cast(n, v) for n, v in zip(names, combo)}))
    return out


def run_label(cfg: ScenarioConfig) -> str:
    return (f"{cfg.scheme}_n{cfg.n_nodes}_r{cfg.arrival_rate_per_min:g}"
            f"_mf{cfg.adversary.malicious_fraction:g}_s{cfg.seed}")


@dataclass
class RunOutcome:
    index: int
    label: str
    record: object = None
    diagnostics: dict = field(default_factory=dict)
    error: Optional[str] = None


def execute(index: int, cfg: ScenarioConfig, dump_dir: Optional[str] = None) -> RunOutcome:
    """Run one point; failures come back as data so the sweep can carry on."""
    from .simulation import run_scenario

    label = run_label(cfg)
    try:
        result = run_scenario(cfg, keep_world=dump_dir is not None)
        if dump_dir is not None:
            world = result.world
            for led in (world.permissioned, world.permissionless):
                if led is not None:
                    led.dump(Path(dump_dir) / f"{label}_{led.kind}.jsonl")
            del result.world
        return RunOutcome(index, label, result.record, result.diagnostics)
    except Exception:
        return RunOutcome(index, label, error=traceback.format_exc())


def _execute_star(args):
    return execute(*args)


def run_sweep(configs: list[ScenarioConfig], jobs: int = 1, dump_dir=None,
              sink: Optional[Callable[[RunOutcome], None]] = None) -> list[RunOutcome]:
    """Run every config; ``sink`` sees outcomes in input order whatever ``jobs`` is."""
    work = [(i, cfg, str(dump_dir) if dump_dir else None) for i, cfg in enumerate(configs)]
    outcomes = []
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_execute_star, work):
                outcomes.append(out)
                if sink:
                    sink(out)
    else:
        for args in work:
            out = execute(*args)
            outcomes.append(out)
            if sink:
                sink(out)
    return outcomes


class CsvSink:
    """Appends rows as outcomes arrive so a crashed sweep keeps its prefix."""

    def __init__(self, out_dir: Path):
        from .metrics import RUN_COLUMNS

        self.out_dir = out_dir
        self.runs_path = out_dir / "runs.csv"
        self.diag_path = out_dir / "diagnostics.jsonl"
        self.runs_path.write_text(",".join(RUN_COLUMNS) + "\n")
        self.diag_path.write_text("")
        self.records = []
        self.errors = []

    def __call__(self, out: RunOutcome) -> None:
        import csv
        import io

        if out.error is not None:
            self.errors.append(out)
            return
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(out.record.row())
        with open(self.runs_path, "a") as fh:
            fh.write(buf.getvalue())
        with open(self.diag_path, "a") as fh:
            fh.write(json.dumps({"run": out.label, **out.diagnostics}, sort_keys=True) + "\n")
        self.records.append(out.record)
