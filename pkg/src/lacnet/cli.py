"""Command line: ``lacnet run | sweep | calibrate``.

Exit codes: 0 success, 1 a run failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import platform
import statistics
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, ScenarioConfig, ValidationError, apply_overrides, load_config
from .metrics import summarize, write_summary
from .sweep import CALIBRATE_SEEDS, PRESETS, CsvSink, expand, parse_axis, run_sweep

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2
CALIBRATION_BAND = (0.9, 1.3)


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(item, "expected key=value")
        out[key.strip()] = value.strip()
    return out


def _base_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.set:
        cfg = apply_overrides(cfg, _parse_set(args.set))
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _write_metadata(out: Path, command: str, cfg: ScenarioConfig, extra: dict) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "written_at": datetime.now(timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        **extra,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _finish(out: Path, sink: CsvSink) -> int:
    write_summary(summarize(sink.records), out / "summary.csv")
    for err in sink.errors:
        print(f"run {err.label} failed:\n{err.error}", file=sys.stderr)
    print(f"{len(sink.records)} runs ok, {len(sink.errors)} failed -> {out}")
    return EXIT_RUN_FAILED if sink.errors else EXIT_OK


def cmd_run(args) -> int:
    cfg = _base_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = _dump_dir(out, args)
    sink = CsvSink(out)
    run_sweep([cfg], jobs=1, dump_dir=dump_dir, sink=sink)
    _write_metadata(out, "run", cfg, {})
    for rec in sink.records:
        print(", ".join(f"{k}={v}" for k, v in zip(rec.__dataclass_fields__, rec.row())))
    return _finish(out, sink)


def _dump_dir(out: Path, args):
    if not args.dump_ledger:
        return None
    d = out / "ledgers"
    d.mkdir(exist_ok=True)
    return d


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    axes = {}
    if args.preset:
        axes.update({k: list(v) for k, v in PRESETS[args.preset].items()})
    for text in args.axis or []:
        name, values = parse_axis(text)
        axes[name] = values
    if not axes:
        raise ValidationError("axis", "give --preset or at least one --axis")
    if args.seed is not None:
        axes["seed"] = [args.seed]
    configs = expand(cfg, axes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sink = CsvSink(out)
    run_sweep(configs, jobs=args.jobs, dump_dir=_dump_dir(out, args), sink=sink)
    _write_metadata(out, "sweep", cfg, {"axes": axes, "preset": args.preset, "runs": len(configs)})
    return _finish(out, sink)


def cmd_calibrate(args) -> int:
    from .calibrate import calibrate_chain

    cfg = _base_config(args)
    seeds = [args.seed] if args.seed is not None else list(CALIBRATE_SEEDS)
    results = [calibrate_chain(cfg.with_overrides(seed=s), n_txs=args.txs) for s in seeds]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["seed,background_tps,n_txs,mean_confirmation_s,p95_confirmation_s,blocks"]
    for r in results:
        lines.append(f"{r.seed},{r.background_tps},{r.n_txs},{r.mean_confirmation_s!r},"
                     f"{r.p95_confirmation_s!r},{r.blocks}")
    (out / "calibration.csv").write_text("\n".join(lines) + "\n")
    mean = statistics.fmean(r.mean_confirmation_s for r in results)
    lo, hi = CALIBRATION_BAND
    _write_metadata(out, "calibrate", cfg, {"seeds": seeds, "mean_confirmation_s": mean})
    print(f"background {cfg.chain.background_tps} tx/s: mean confirmation {mean:.3f} s "
          f"({'inside' if lo <= mean <= hi else 'outside'} [{lo}, {hi}])")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lacnet", description="Low-altitude compute market simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI scenario file; omitted keys keep defaults")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one key, e.g. chain.background_tps=4 (repeatable)")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, help="seed; pins the seed axis in sweeps")

    r = sub.add_parser("run", help="one simulation run")
    common(r)
    r.add_argument("--dump-ledger", action="store_true", help="write both ledgers as JSON lines")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="Cartesian sweep over axes")
    common(s)
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--axis", action="append", metavar="NAME=V1,V2",
                   help="sweep axis: scheme, arrival_rate, n_nodes, malicious_fraction, seed")
    s.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
    s.add_argument("--dump-ledger", action="store_true")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("calibrate", help="chain confirmation latency under background traffic")
    common(c)
    c.add_argument("--txs", type=int, default=1000, help="transactions per seed (default 1000)")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
