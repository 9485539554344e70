"""Scenario configuration: INI file with flat sections, defaults from the case study.

Every key is in SI units (seconds, bits, FLOP, FLOPS, metres); COMP amounts
are plain floats. Omitted keys keep their defaults, unknown keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

SCHEMES = ("cta", "cbba", "rwa")
AUCTION_RULES = ("first_price", "vickrey")


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    def __init__(self, line: int, message: str = ""):
        super().__init__(f"line {line}: {message}" if message else f"line {line}")
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


@dataclass
class TaskConfig:
    data_bits: float = 2.0e8
    flop_load: float = 2e12
    deadline_s: float = 120.0
    max_payment: float = 50.0
    result_bits: float = 1e6


@dataclass
class LinkConfig:
    bandwidth_bps: float = 5e9
    latency_s: float = 0.010


@dataclass
class ChainConfig:
    block_size: int = 10
    block_timeout_s: float = 2.0
    tps_cap: int = 1000
    anchor_interval_s: float = 30.0
    propagation_s: float = 0.1
    # Poisson rate of unrelated token transfers; see ``lacnet.calibrate``
    background_tps: float = 3.5
    mint_on_proof: bool = False
    n_requesters: int = 10
    requester_endowment: float = 1_000_000.0
    node_endowment: float = 100.0


@dataclass
class MarketConfig:
    auction_rule: str = "first_price"
    bid_window_s: float = 3.0
    base_cost_uav: float = 0.4
    base_cost_evtol: float = 0.3
    unit_flop: float = 2e10
    stake: float = 10.0
    retry_reserve_factor: float = 1.5


@dataclass
class AdversarySection:
    malicious_fraction: float = 0.0
    behaviors: str = "FalseCapacityReport,BidAndAbandon"
    abandon_prob: float = 1.0
    report_inflation: float = 5.0
    ban_after: int = 3


@dataclass
class MobilityConfig:
    tick_s: float = 1.0
    uav_busy_s: float = 120.0
    uav_idle_s: float = 60.0
    evtol_busy_s: float = 90.0
    evtol_idle_s: float = 210.0


@dataclass
class CtaConfig:
    service_per_node_s: float = 0.005
    retry_interval_s: float = 1.0


@dataclass
class CbbaConfig:
    epoch_s: float = 2.0
    radius_m: float = 800.0
    time_value: float = 1.0
    bundle_limit: int = 3


@dataclass
class ScenarioConfig:
    n_nodes: int = 100
    uav_fraction: float = 0.8
    arrival_rate_per_min: float = 60.0
    horizon_s: float = 600.0
    warmup_s: float = 60.0
    scheme: str = "rwa"
    seed: int = 1
    tasks: TaskConfig = field(default_factory=TaskConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    adversary: AdversarySection = field(default_factory=AdversarySection)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    cta: CtaConfig = field(default_factory=CtaConfig)
    cbba: CbbaConfig = field(default_factory=CbbaConfig)

    @property
    def task_units(self) -> int:
        return int(round(self.tasks.flop_load / self.market.unit_flop))

    def with_overrides(self, **kw) -> ScenarioConfig:
        """Copy with top-level or ``section.key`` overrides, then validate."""
        cfg = dataclasses.replace(self)
        for name, value in kw.items():
            section, _, key = name.rpartition(".")
            if section:
                sub = dataclasses.replace(getattr(cfg, section), **{key: value})
                cfg = dataclasses.replace(cfg, **{section: sub})
            else:
                cfg = dataclasses.replace(cfg, **{key: value})
        validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = {f.name: f for f in dataclasses.fields(ScenarioConfig) if dataclasses.is_dataclass(f.default_factory)}
TOP_SECTION = "scenario"

# (field, lower bound inclusive?, upper bound)
_FRACTIONS = {"uav_fraction", "malicious_fraction", "abandon_prob"}
_NONNEGATIVE = {"latency_s", "propagation_s", "background_tps", "max_payment", "warmup_s",
                "base_cost_uav", "base_cost_evtol", "stake", "node_endowment",
                "requester_endowment", "uav_busy_s", "uav_idle_s", "evtol_busy_s", "evtol_idle_s",
                "seed", "time_value"}


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ValidationError(name, f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    return raw


def _check_value(name: str, value) -> None:
    key = name.rpartition(".")[2]
    if isinstance(value, bool):
        return
    if isinstance(value, (int, float)):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValidationError(name, "must be finite")
        if key in _FRACTIONS:
            if not 0.0 <= value <= 1.0:
                raise ValidationError(name, "must be in [0, 1]")
        elif key in _NONNEGATIVE:
            if value < 0:
                raise ValidationError(name, "must be nonnegative")
        elif value <= 0:
            raise ValidationError(name, "must be positive")


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sf in dataclasses.fields(value):
                _check_value(f"{f.name}.{sf.name}", getattr(value, sf.name))
        else:
            _check_value(f.name, value)
    if cfg.scheme not in SCHEMES:
        raise ValidationError("scheme", f"must be one of {', '.join(SCHEMES)}")
    if cfg.market.auction_rule not in AUCTION_RULES:
        raise ValidationError("market.auction_rule", f"must be one of {', '.join(AUCTION_RULES)}")
    from .adversary import BEHAVIORS
    for b in adversary_behaviors(cfg):
        if b not in BEHAVIORS:
            raise ValidationError("adversary.behaviors", f"unknown behavior {b!r}")
    if cfg.task_units < 1:
        raise ValidationError("market.unit_flop", "task must demand at least one unit")
    if cfg.warmup_s >= cfg.horizon_s:
        raise ValidationError("warmup_s", "must be shorter than horizon_s")
    return cfg


def adversary_behaviors(cfg: ScenarioConfig) -> frozenset:
    return frozenset(b.strip() for b in cfg.adversary.behaviors.split(",") if b.strip())


def _parse_error(exc: configparser.Error) -> ParseError:
    line = getattr(exc, "lineno", None)
    if line is None and getattr(exc, "errors", None):
        line = exc.errors[0][0]
    return ParseError(line or 0, exc.message if hasattr(exc, "message") else str(exc))


def loads(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused_default__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise _parse_error(exc) from None
    kwargs = {}
    top_types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig) if f.name not in SECTIONS}
    for section in parser.sections():
        if section == TOP_SECTION:
            for key, raw in parser.items(section):
                if key not in top_types:
                    raise ValidationError(key, "unknown")
                kwargs[key] = _coerce(key, top_types[key], raw)
        elif section in SECTIONS:
            cls = SECTIONS[section].default_factory
            types = {f.name: f.type for f in dataclasses.fields(cls)}
            values = {}
            for key, raw in parser.items(section):
                if key not in types:
                    raise ValidationError(f"{section}.{key}" if key else section, "unknown")
                values[key] = _coerce(f"{section}.{key}", types[key], raw)
            kwargs[section] = cls(**values)
        else:
            raise ValidationError(section, "unknown section")
    return validate(ScenarioConfig(**kwargs))


def load_config(path) -> ScenarioConfig:
    return loads(Path(path).read_text())


def dumps(cfg: ScenarioConfig) -> str:
    lines = [f"[{TOP_SECTION}]"]
    d = cfg.to_dict()
    for key, value in d.items():
        if key not in SECTIONS:
            lines.append(f"{key} = {value}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in d[section].items():
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: ScenarioConfig, raw: dict[str, str]) -> ScenarioConfig:
    """Typed ``section.key = text`` overrides, checked like file entries."""
    top_types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig) if f.name not in SECTIONS}
    values = {}
    for name, text in raw.items():
        section, _, key = name.rpartition(".")
        if not section:
            if key not in top_types:
                raise ValidationError(name, "unknown")
            values[name] = _coerce(name, top_types[key], text)
            continue
        if section not in SECTIONS:
            raise ValidationError(name, "unknown section")
        types = {f.name: f.type for f in dataclasses.fields(SECTIONS[section].default_factory)}
        if key not in types:
            raise ValidationError(name, "unknown")
        values[name] = _coerce(name, types[key], text)
    return cfg.with_overrides(**values)
