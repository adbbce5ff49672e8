"""Shared configuration for ``analyze`` and ``monitor``.

One YAML (or JSON) file holds the oracle/token address book, token rates,
detection rules and exploration bounds, so both phases agree on addresses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from defiwatch.evm.engine import ExploreConfig
from defiwatch.monitor import PROFIT_THRESHOLD, RuleConfig
from defiwatch.oracle import AddressBook, ConfigError, normalize_address
from defiwatch.txmodel import Valuation

ENV_VAR = "BLOCKEYE_CONFIG"


@dataclass(frozen=True)
class TokenInfo:
    symbol: str
    rate_num: int
    rate_den: int


@dataclass(frozen=True)
class Config:
    oracles: tuple[str, ...] = ()
    tokens: dict[str, TokenInfo] = field(default_factory=dict)
    threshold_wei: int = 0
    window_blocks: int = 0
    min_burst: int = 2
    rules: tuple[str, ...] = (PROFIT_THRESHOLD,)
    max_depth: int = 4096
    max_paths: int = 256
    loop_bound: int = 2
    wildcard_oracle: bool = False
    confirmation_depth: int = 6

    def address_book(self) -> AddressBook:
        return AddressBook.of(self.oracles, self.tokens, self.wildcard_oracle)

    def valuation(self) -> Valuation:
        return Valuation({a: (t.rate_num, t.rate_den) for a, t in self.tokens.items()})

    def rule_config(self) -> RuleConfig:
        return RuleConfig(self.threshold_wei, self.min_burst, self.window_blocks,
                          frozenset(self.rules))

    def explore_config(self) -> ExploreConfig:
        return ExploreConfig(self.max_depth, self.max_paths, self.loop_bound)


_UINT_KEYS = ("window_blocks", "min_burst", "max_depth", "max_paths", "loop_bound",
              "confirmation_depth")


def _hex_address(raw: Any, where: str) -> str:
    try:
        return f"0x{normalize_address(raw):040x}"
    except (ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _uint(raw: Any, where: str) -> int:
    if isinstance(raw, bool):
        raise ConfigError(f"{where}: expected unsigned integer")
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected unsigned integer, got {raw!r}") from None
    if value < 0 or (isinstance(raw, str) and not raw.strip().isdigit()):
        raise ConfigError(f"{where}: expected unsigned integer, got {raw!r}")
    return value


def parse_config(data: dict[str, Any]) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = set(Config.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw: dict[str, Any] = {}
    if "oracles" in data:
        kw["oracles"] = tuple(_hex_address(a, "oracles") for a in data["oracles"] or ())
    if "tokens" in data:
        tokens = {}
        for addr, info in (data["tokens"] or {}).items():
            where = f"tokens[{addr}]"
            if not isinstance(info, dict):
                raise ConfigError(f"{where}: expected mapping")
            den = _uint(info.get("rate_den", 1), f"{where}.rate_den")
            if den == 0:
                raise ConfigError(f"{where}.rate_den: must be positive")
            tokens[_hex_address(addr, "tokens")] = TokenInfo(
                str(info.get("symbol", "")), _uint(info.get("rate_num", 0), f"{where}.rate_num"), den)
        kw["tokens"] = tokens
    if "threshold_wei" in data:
        kw["threshold_wei"] = _uint(data["threshold_wei"], "threshold_wei")
    for key in _UINT_KEYS:
        if key in data:
            kw[key] = _uint(data[key], key)
    if "rules" in data:
        kw["rules"] = tuple(str(r) for r in data["rules"] or ())
    if "wildcard_oracle" in data:
        if not isinstance(data["wildcard_oracle"], bool):
            raise ConfigError("wildcard_oracle: expected boolean")
        kw["wildcard_oracle"] = data["wildcard_oracle"]
    cfg = Config(**kw)
    # Surface cross-field invariants at load time.
    try:
        cfg.address_book()
        cfg.valuation()
        cfg.rule_config()
        cfg.explore_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        path = os.environ.get(ENV_VAR)
    if not path:
        raise ConfigError(f"no config given (use --config or set {ENV_VAR})")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(data or {})
