"""File-backed run configuration.

Everything that affects results lives in the config file so a run
manifest is complete; command-line flags only pick commands and paths.
The resolved copy is archived into the run directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from pathlib import Path

import yaml

from .backtest import BacktestConfig
from .errors import ConfigError
from .money import to_decimal

ENV_ENDPOINT = "LLM_ENDPOINT"
ENV_API_KEY = "LLM_API_KEY"


@dataclass(frozen=True)
class GatewaySettings:
    mode: str = "replay"
    cassette: Path | None = None
    endpoint: str | None = None
    ranking_model: str = "llama-3.3-70b-instruct"
    decision_model: str = "llama-3.2-3b"
    sentiment_model: str = "deepseek-llm-7b-chat"
    timeout: float = 60.0
    max_retries: int = 3
    max_inflight: int = 4

    def resolved_endpoint(self) -> str | None:
        return self.endpoint or os.environ.get(ENV_ENDPOINT)

    def api_key(self) -> str | None:
        return os.environ.get(ENV_API_KEY)


@dataclass(frozen=True)
class DataPaths:
    bars: Path
    universe: Path
    macro: Path
    fomc_summaries: Path
    sentiment_memory: Path
    sectors: Path
    aliases: Path | None = None
    # Batch-analysis inputs; the backtest itself never reads them.
    news: Path | None = None
    fomc_index: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    backtest: BacktestConfig
    data: DataPaths
    gateway: GatewaySettings
    output_dir: Path
    seed: int = 0

    def validate_paths(self) -> None:
        """Fail fast: every input must exist before a run starts."""
        missing = [
            str(path)
            for path in (
                self.data.bars,
                self.data.universe,
                self.data.macro,
                self.data.fomc_summaries,
                self.data.sentiment_memory,
                self.data.sectors,
            )
            if not Path(path).is_file()
        ]
        if self.data.aliases is not None and not Path(self.data.aliases).is_file():
            missing.append(str(self.data.aliases))
        if missing:
            raise ConfigError(f"missing data files: {', '.join(missing)}")
        if self.gateway.mode == "replay":
            if self.gateway.cassette is None or not self.gateway.cassette.is_file():
                raise ConfigError(
                    f"replay mode needs an existing cassette, got "
                    f"{self.gateway.cassette}"
                )
        if self.gateway.mode in ("live", "record") and not self.gateway.resolved_endpoint():
            raise ConfigError(
                f"{self.gateway.mode} mode needs an endpoint "
                f"(config or ${ENV_ENDPOINT})"
            )

    def to_canonical_json(self) -> str:
        bt = self.backtest
        payload = {
            "backtest": {
                "start": bt.start.isoformat(),
                "end": bt.end.isoformat(),
                "strategy": bt.strategy,
                "initial_capital": str(bt.initial_capital),
                "commission_bps": bt.commission_bps,
                "impact_bps": bt.impact_bps,
                "max_utilization": str(bt.max_utilization),
                "risk_free_annual_pct": bt.risk_free_annual_pct,
                "annualization_days": bt.annualization_days,
                "ranking_model": bt.ranking_model,
                "decision_model": bt.decision_model,
                "sentiment_row_cap": bt.sentiment_row_cap,
                "top_down_max_size_pct": bt.top_down_max_size_pct,
            },
            "data": {
                "bars": str(self.data.bars),
                "universe": str(self.data.universe),
                "macro": str(self.data.macro),
                "fomc_summaries": str(self.data.fomc_summaries),
                "sentiment_memory": str(self.data.sentiment_memory),
                "sectors": str(self.data.sectors),
                "aliases": None if self.data.aliases is None else str(self.data.aliases),
                "news": None if self.data.news is None else str(self.data.news),
                "fomc_index": None
                if self.data.fomc_index is None
                else str(self.data.fomc_index),
            },
            "gateway": {
                "mode": self.gateway.mode,
                "cassette": None
                if self.gateway.cassette is None
                else str(self.gateway.cassette),
                "endpoint": self.gateway.endpoint,
                "ranking_model": self.gateway.ranking_model,
                "decision_model": self.gateway.decision_model,
                "sentiment_model": self.gateway.sentiment_model,
                "timeout": self.gateway.timeout,
                "max_retries": self.gateway.max_retries,
                "max_inflight": self.gateway.max_inflight,
            },
            "output_dir": str(self.output_dir),
            "seed": self.seed,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_canonical_json().encode()).hexdigest()


def _as_date(raw, name: str) -> date:
    if isinstance(raw, date):
        return raw
    try:
        return date.fromisoformat(str(raw))
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an ISO date, got {raw!r}") from None


def _require(section: dict, key: str, where: str):
    if key not in section or section[key] is None:
        raise ConfigError(f"config missing {where}.{key}")
    return section[key]


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a YAML/JSON run configuration, resolving relative paths
    against the config file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    base = path.parent

    def resolve(p) -> Path:
        p = Path(str(p))
        return p if p.is_absolute() else (base / p).resolve()

    data_raw = raw.get("data")
    if not isinstance(data_raw, dict):
        raise ConfigError("config missing data section")
    data = DataPaths(
        bars=resolve(_require(data_raw, "bars", "data")),
        universe=resolve(_require(data_raw, "universe", "data")),
        macro=resolve(_require(data_raw, "macro", "data")),
        fomc_summaries=resolve(_require(data_raw, "fomc_summaries", "data")),
        sentiment_memory=resolve(_require(data_raw, "sentiment_memory", "data")),
        sectors=resolve(_require(data_raw, "sectors", "data")),
        aliases=resolve(data_raw["aliases"]) if data_raw.get("aliases") else None,
        news=resolve(data_raw["news"]) if data_raw.get("news") else None,
        fomc_index=resolve(data_raw["fomc_index"]) if data_raw.get("fomc_index") else None,
    )
    gw_raw = raw.get("gateway") or {}
    gateway = GatewaySettings(
        mode=gw_raw.get("mode", "replay"),
        cassette=resolve(gw_raw["cassette"]) if gw_raw.get("cassette") else None,
        endpoint=gw_raw.get("endpoint"),
        ranking_model=gw_raw.get("ranking_model", "llama-3.3-70b-instruct"),
        decision_model=gw_raw.get("decision_model", "llama-3.2-3b"),
        sentiment_model=gw_raw.get("sentiment_model", "deepseek-llm-7b-chat"),
        timeout=float(gw_raw.get("timeout", 60.0)),
        max_retries=int(gw_raw.get("max_retries", 3)),
        max_inflight=int(gw_raw.get("max_inflight", 4)),
    )
    if gateway.mode not in ("live", "record", "replay"):
        raise ConfigError(f"unknown gateway mode {gateway.mode!r}")
    try:
        backtest = BacktestConfig(
            start=_as_date(_require(raw, "start", "root"), "start"),
            end=_as_date(_require(raw, "end", "root"), "end"),
            strategy=str(_require(raw, "strategy", "root")),
            initial_capital=to_decimal(raw.get("initial_capital", "100000000")),
            commission_bps=int(raw.get("commission_bps", 10)),
            impact_bps=int(raw.get("impact_bps", 10)),
            max_utilization=to_decimal(raw.get("max_utilization", "0.90")),
            risk_free_annual_pct=float(raw.get("risk_free_annual_pct", 0.0)),
            annualization_days=int(raw.get("annualization_days", 252)),
            ranking_model=gateway.ranking_model,
            decision_model=gateway.decision_model,
            sentiment_row_cap=int(raw.get("sentiment_row_cap", 400)),
            top_down_max_size_pct=float(raw.get("top_down_max_size_pct", 20.0)),
        )
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"bad backtest settings: {exc}") from None
    return RunConfig(
        backtest=backtest,
        data=data,
        gateway=gateway,
        output_dir=resolve(raw.get("output_dir", "runs")),
        seed=int(raw.get("seed", 0)),
    )
