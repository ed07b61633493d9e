"""Daily event loop: memories -> ranking -> decisions -> execution -> mark.

Decisions are computed pre-open from the previous trading day's news and
point-in-time macro data, filled at the decision day's open and valued
at its close. Per-day agent failures (transport errors, garbage model
output, empty reflections) degrade that day to a logged hold; the loop
never dies on one bad reply. A cassette miss in replay mode aborts:
that is a broken setup, not an agent failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from pathlib import Path

from .decisions import (
    DecisionSet,
    decision_set_to_json,
    parse_reflection,
)
from .errors import (
    BoundaryError,
    CassetteMissError,
    ConfigError,
    GatewayError,
    ReflectionFailure,
)
from .gateway import ChatGateway
from .macro import FomcStore, MacroStore, build_snapshot
from .market_data import MarketStore
from .metrics import MetricSet, compute_metrics, daily_returns, metrics_json, write_equity_csv
from .money import to_cents
from .portfolio import Fill, PortfolioState, Skip, apply_decisions, mark_to_market
from .ranking import (
    CROSS_SECTIONAL,
    CROSS_SECTIONAL_TEMPLATE,
    PortfolioView,
    RankingReflection,
    SectorMap,
    STRATEGIES,
    TOP_DOWN,
    TOPDOWN_TEMPLATE,
    build_cross_sectional_prompt,
    build_topdown_prompt,
    generate_reflection,
)
from .sentiment import SENTIMENT_TEMPLATE, SentimentMemory

log = logging.getLogger(__name__)

_ISO_DATE = re.compile(r"\b(\d{4}-\d{2}-\d{2})\b")


def _template_date_literals() -> frozenset[str]:
    """Date strings that are static template text, not run data."""
    literals: set[str] = set()
    for template in (TOPDOWN_TEMPLATE, CROSS_SECTIONAL_TEMPLATE, SENTIMENT_TEMPLATE):
        literals.update(_ISO_DATE.findall(template))
    return frozenset(literals)


TEMPLATE_DATE_LITERALS = _template_date_literals()


@dataclass(frozen=True)
class BacktestConfig:
    start: date
    end: date
    strategy: str
    initial_capital: Decimal = Decimal("100000000")
    commission_bps: int = 10
    impact_bps: int = 10
    max_utilization: Decimal = Decimal("0.90")
    risk_free_annual_pct: float = 0.0
    annualization_days: int = 252
    ranking_model: str = "llama-3.3-70b-instruct"
    decision_model: str = "llama-3.2-3b"
    sentiment_row_cap: int = 400
    top_down_max_size_pct: float = 20.0

    def __post_init__(self):
        if self.start >= self.end:
            raise ConfigError(f"start {self.start} must precede end {self.end}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.commission_bps < 0 or self.impact_bps < 0:
            raise ConfigError("basis-point rates must be >= 0")
        if not (0 < self.max_utilization <= 1):
            raise ConfigError("max_utilization must be in (0, 1]")
        if self.initial_capital <= 0:
            raise ConfigError("initial_capital must be positive")


@dataclass
class DayOutcome:
    date: date
    decision_set: DecisionSet | None
    fills: list[Fill]
    skips: list[Skip]
    equity: Decimal
    held: bool
    hold_reason: str = ""


@dataclass
class BacktestResult:
    strategy: str
    start: date
    end: date
    equity_curve: list[tuple[date, Decimal]]
    fills: list[Fill]
    skips: list[Skip]
    daily_returns: list[float]
    metrics: MetricSet
    manifest: dict
    days: list[DayOutcome] = field(default_factory=list)

    @property
    def manifest_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.manifest, sort_keys=True).encode()
        ).hexdigest()


class BacktestEngine:
    """Owns one run: stores, gateway, portfolio state and the run archive."""

    def __init__(
        self,
        config: BacktestConfig,
        market: MarketStore,
        macro_store: MacroStore,
        fomc_store: FomcStore,
        memory: SentimentMemory,
        sector_map: SectorMap,
        gateway: ChatGateway,
        alias_table: dict[str, str] | None = None,
        run_dir: Path | None = None,
        manifest_extra: dict | None = None,
    ):
        self.config = config
        self.market = market
        self.macro_store = macro_store
        self.fomc_store = fomc_store
        self.memory = memory
        self.sector_map = sector_map
        self.gateway = gateway
        self.alias_table = alias_table or {}
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.manifest_extra = manifest_extra or {}

    # -- archive helpers ---------------------------------------------------

    def _write(self, relative: str, content: str) -> None:
        if self.run_dir is None:
            return
        path = self.run_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)

    # -- per-day steps -----------------------------------------------------

    def _portfolio_view(self, state: PortfolioState) -> PortfolioView:
        equity = state.equity({})
        longs: list[tuple[str, float]] = []
        shorts: list[tuple[str, float]] = []
        for ticker in sorted(state.positions):
            pos = state.positions[ticker]
            weight = float(100 * pos.notional(pos.last_mark) / equity) if equity else 0.0
            (longs if pos.side.value == "long" else shorts).append((ticker, weight))
        return PortfolioView(longs=tuple(longs), shorts=tuple(shorts))

    def _decide(
        self, d: date, universe: frozenset[str], state: PortfolioState
    ) -> tuple[DecisionSet, str]:
        """Build prompt, generate reflection, parse decisions for day ``d``.

        Returns (decision_set, hold_reason); hold_reason is empty unless
        the day degraded to a hold.
        """
        cfg = self.config
        try:
            records = self.memory.retrieve_for_decision(
                d, self.market.calendar, universe, self.alias_table
            )
        except BoundaryError:
            log.info("%s has no previous trading day; no sentiment rows", d)
            records = []
        snapshot = build_snapshot(self.macro_store, self.fomc_store, d)
        self._write(f"snapshots/{d.isoformat()}.json", snapshot.to_json() + "\n")

        if cfg.strategy == TOP_DOWN:
            prompt = build_topdown_prompt(
                snapshot,
                records,
                self._portfolio_view(state),
                self.sector_map,
                row_cap=cfg.sentiment_row_cap,
            )
        else:
            prompt = build_cross_sectional_prompt(
                sorted(universe), records, snapshot, row_cap=cfg.sentiment_row_cap
            )
        self._write(f"prompts/{d.isoformat()}_{cfg.strategy}.txt", prompt)

        empty = DecisionSet(
            decision_date=d, decisions=(), reflection_hash="", failed=True
        )
        try:
            reflection = generate_reflection(
                prompt, self.gateway, d, cfg.strategy, cfg.ranking_model
            )
        except CassetteMissError:
            raise
        except (GatewayError, ReflectionFailure) as exc:
            log.warning("%s: reflection failed (%s); holding", d, exc)
            return empty, f"reflection: {exc}"
        self._write(
            f"reflections/{d.isoformat()}_{cfg.strategy}.txt", reflection.raw_text
        )
        try:
            decision_set = parse_reflection(
                reflection,
                self.gateway,
                universe,
                cfg.strategy,
                cfg.decision_model,
                max_size_pct=cfg.top_down_max_size_pct,
            )
        except CassetteMissError:
            raise
        except GatewayError as exc:
            log.warning("%s: decision parse failed (%s); holding", d, exc)
            return empty, f"decision: {exc}"
        reason = "decision parse produced no JSON" if decision_set.failed else ""
        return decision_set, reason

    # -- main loop ----------------------------------------------------------

    def run(self) -> BacktestResult:
        cfg = self.config
        sessions = self.market.calendar.sessions(cfg.start, cfg.end)
        if not sessions:
            raise ConfigError(
                f"no trading days between {cfg.start} and {cfg.end}"
            )
        state = PortfolioState(cfg.initial_capital)
        curve: list[tuple[date, Decimal]] = []
        all_fills: list[Fill] = []
        all_skips: list[Skip] = []
        days: list[DayOutcome] = []

        for d in sessions:
            universe = self.market.universe_as_of(d)
            decision_set, hold_reason = self._decide(d, universe, state)
            self._write(
                f"decisions/{d.isoformat()}_{cfg.strategy}.json",
                decision_set_to_json(decision_set, cfg.strategy) + "\n",
            )
            price_tickers = set(universe) | set(state.positions)
            opens = self.market.open_prices(d, price_tickers)
            fills, skips = apply_decisions(
                state,
                decision_set,
                opens,
                universe,
                max_utilization=cfg.max_utilization,
                commission_bps=cfg.commission_bps,
                impact_bps=cfg.impact_bps,
            )
            closes = self.market.close_prices(d, set(state.positions))
            equity = mark_to_market(state, closes)
            curve.append((d, equity))
            all_fills.extend(fills)
            all_skips.extend(skips)
            days.append(
                DayOutcome(
                    date=d,
                    decision_set=decision_set,
                    fills=fills,
                    skips=skips,
                    equity=equity,
                    held=bool(hold_reason),
                    hold_reason=hold_reason,
                )
            )

        metrics = compute_metrics(
            curve,
            state.cumulative_costs,
            risk_free_annual_pct=cfg.risk_free_annual_pct,
            annualization_days=cfg.annualization_days,
        )
        manifest = dict(self.manifest_extra)
        manifest.update(
            {
                "strategy": cfg.strategy,
                "start": cfg.start.isoformat(),
                "end": cfg.end.isoformat(),
                "n_days": len(curve),
                "final_equity": str(to_cents(curve[-1][1])),
                "total_costs": str(to_cents(state.cumulative_costs)),
            }
        )
        result = BacktestResult(
            strategy=cfg.strategy,
            start=cfg.start,
            end=cfg.end,
            equity_curve=curve,
            fills=all_fills,
            skips=all_skips,
            daily_returns=daily_returns(curve),
            metrics=metrics,
            manifest=manifest,
            days=days,
        )
        self._archive_result(result)
        return result

    def _archive_result(self, result: BacktestResult) -> None:
        if self.run_dir is None:
            return
        fills_lines = ["date,ticker,side,action,quantity,price,commission,impact"]
        for f in result.fills:
            fills_lines.append(
                f"{f.date.isoformat()},{f.ticker},{f.side.value},{f.action},"
                f"{f.quantity},{f.price},{to_cents(f.commission)},{to_cents(f.impact)}"
            )
        self._write("fills.csv", "\n".join(fills_lines) + "\n")
        skip_lines = ["date,ticker,action,reason"]
        for s in result.skips:
            skip_lines.append(
                f"{s.date.isoformat()},{s.ticker},{s.action},{s.reason}"
            )
        self._write("skips.csv", "\n".join(skip_lines) + "\n")
        write_equity_csv(self.run_dir / "equity.csv", result.equity_curve)
        self._write(
            "metrics.json",
            metrics_json(result.metrics, result.strategy, result.start, result.end)
            + "\n",
        )
        self._write(
            "manifest.json",
            json.dumps(result.manifest, sort_keys=True, indent=2) + "\n",
        )


# -- look-ahead audit --------------------------------------------------------


@dataclass(frozen=True)
class AuditViolation:
    artifact: str
    detail: str


@dataclass
class AuditReport:
    violations: list[AuditViolation]
    checked_prompts: int
    checked_snapshots: int

    @property
    def clean(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps(
            {
                "clean": self.clean,
                "checked_prompts": self.checked_prompts,
                "checked_snapshots": self.checked_snapshots,
                "violations": [
                    {"artifact": v.artifact, "detail": v.detail}
                    for v in self.violations
                ],
            },
            sort_keys=True,
            indent=2,
        )


def look_ahead_audit(run_dir: str | Path) -> AuditReport:
    """Verify archived prompts and macro provenance against decision dates.

    Every date string embedded in a prompt must be strictly earlier than
    its decision date (template sample dates excepted); every macro
    observation and FOMC summary used must have been released on or
    before the day it informed.
    """
    run_dir = Path(run_dir)
    violations: list[AuditViolation] = []
    prompts = sorted((run_dir / "prompts").glob("*.txt")) if (
        run_dir / "prompts"
    ).is_dir() else []
    for path in prompts:
        decision_date = date.fromisoformat(path.name[:10])
        text = path.read_text()
        for found in sorted(set(_ISO_DATE.findall(text))):
            if found in TEMPLATE_DATE_LITERALS:
                continue
            if date.fromisoformat(found) >= decision_date:
                violations.append(
                    AuditViolation(
                        artifact=f"prompts/{path.name}",
                        detail=f"embedded date {found} not before decision date "
                        f"{decision_date}",
                    )
                )
    snapshots = sorted((run_dir / "snapshots").glob("*.json")) if (
        run_dir / "snapshots"
    ).is_dir() else []
    for path in snapshots:
        decision_date = date.fromisoformat(path.name[:10])
        payload = json.loads(path.read_text())
        for indicator, released in sorted((payload.get("provenance") or {}).items()):
            if released is not None and date.fromisoformat(released) > decision_date:
                violations.append(
                    AuditViolation(
                        artifact=f"snapshots/{path.name}",
                        detail=f"{indicator} observation released {released}, "
                        f"after use on {decision_date}",
                    )
                )
        fomc = payload.get("fomc")
        if fomc and date.fromisoformat(fomc["release_date"]) > decision_date:
            violations.append(
                AuditViolation(
                    artifact=f"snapshots/{path.name}",
                    detail=f"FOMC summary released {fomc['release_date']}, "
                    f"after use on {decision_date}",
                )
            )
    return AuditReport(
        violations=violations,
        checked_prompts=len(prompts),
        checked_snapshots=len(snapshots),
    )
