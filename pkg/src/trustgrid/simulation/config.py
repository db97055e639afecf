"""Simulation configuration and its TOML loader."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigInvalid

SCENARIOS = {"75-25": (0.75, 0.25), "50-50": (0.5, 0.5), "25-75": (0.25, 0.75)}

Range = tuple[float, float]


@dataclass(frozen=True)
class SimConfig:
    neighborhoods: int = 10
    nodes_per_neighborhood: int = 30
    empowered_per_neighborhood: int = 1
    market_cycles: int = 30
    buyer_fraction: float = 0.75
    seller_fraction: float = 0.25
    seed: int = 42
    chain_limit: int = 4
    scheme: str = "ed25519"
    starting_price: float = 1.0
    # pricing
    a: float = 0.2
    b: float = 0.5
    a_nongreen: float = 0.5
    b_min: float = 0.2
    # broker thresholds, kWh
    low_threshold: Range = (35.0, 45.0)
    high_threshold: Range = (75.0, 85.0)
    forecast_window: int = 3
    # initial reserves by role, kWh
    buyer_reserves: Range = (28.0, 40.0)
    seller_reserves: Range = (85.0, 100.0)
    # per-cycle rates, kWh
    buyer_production: Range = (1.0, 3.0)
    buyer_deficit: Range = (0.3, 0.8)
    seller_production: Range = (2.0, 4.0)
    seller_surplus: Range = (0.5, 1.5)
    rate_jitter: float = 0.1
    # wallets and preferences
    initial_balance: Range = (400.0, 600.0)
    min_sell_price: Range = (1.3, 1.7)
    max_buy_price: Range = (1.9, 2.4)
    green_share: float = 0.6
    green_only_share: float = 0.2
    # adversary
    attestation_period: int = 0
    tamper_multiplier: float = 3.0
    max_matches_per_turn: int = 8

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("neighborhoods", "nodes_per_neighborhood", "empowered_per_neighborhood", "market_cycles"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.empowered_per_neighborhood > self.nodes_per_neighborhood:
            out.append("empowered_per_neighborhood exceeds nodes_per_neighborhood")
        if self.neighborhoods * self.nodes_per_neighborhood < 2:
            out.append("a network needs at least 2 nodes")
        if abs(self.buyer_fraction + self.seller_fraction - 1.0) > 1e-9:
            out.append("buyer_fraction + seller_fraction must equal 1")
        if not (0 <= self.buyer_fraction <= 1):
            out.append("buyer_fraction must lie in [0, 1]")
        if self.starting_price <= 0:
            out.append("starting_price must be positive")
        if self.chain_limit < 0:
            out.append("chain_limit must be >= 0")
        if self.attestation_period < 0:
            out.append("attestation_period must be >= 0 (0 disables sweeps)")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and not (len(v) == 2 and v[0] <= v[1]):
                out.append(f"{f.name} must be a [lo, hi] pair with lo <= hi")
        if self.low_threshold[1] >= self.high_threshold[0]:
            out.append("low_threshold range must lie below high_threshold range")
        return out

    @property
    def total_nodes(self) -> int:
        return self.neighborhoods * self.nodes_per_neighborhood

    def with_scenario(self, scenario: str) -> SimConfig:
        try:
            buyers, sellers = SCENARIOS[scenario]
        except KeyError:
            raise ConfigInvalid(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}") from None
        return dataclasses.replace(self, buyer_fraction=buyers, seller_fraction=sellers)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


FIELD_TYPES = {f.name: f for f in dataclasses.fields(SimConfig)}


def _coerce(name: str, value: Any) -> Any:
    default = FIELD_TYPES[name].default
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigInvalid(f"{name}: expected a [lo, hi] pair, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigInvalid(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def flatten(data: Mapping[str, Any]) -> dict[str, Any]:
    """Merge one level of sections into a flat mapping; a key may appear only once."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        items = value.items() if isinstance(value, Mapping) else [(key, value)]
        for k, v in items:
            if k in flat:
                raise ConfigInvalid(f"config key {k!r} is set more than once")
            flat[k] = v
    return flat


def config_from_mapping(data: Mapping[str, Any], base: SimConfig | None = None) -> SimConfig:
    """Build a config from a flat or sectioned mapping; sections are flattened."""
    flat = flatten(data)
    scenario = flat.pop("scenario", None)
    kwargs = {}
    for key, value in flat.items():
        if key not in FIELD_TYPES:
            raise ConfigInvalid(f"unknown config key {key!r}")
        try:
            kwargs[key] = _coerce(key, value)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"{key}: {exc}") from None
    cfg = dataclasses.replace(base or SimConfig(), **kwargs)
    if scenario is not None:
        cfg = cfg.with_scenario(str(scenario))
    return cfg


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value parsed as a TOML literal when possible."""
    if "=" not in text:
        raise ConfigInvalid(f"override {text!r} is not key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path: str | Path, overrides: list[str] | None = None) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    flat = flatten(data)
    for item in overrides or []:
        key, value = parse_override(item)
        flat[key] = value
    return config_from_mapping(flat)


def preset_path(name: str) -> Path:
    return Path(__file__).resolve().parent.parent / "presets" / name
