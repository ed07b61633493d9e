"""Performance metrics over completed equity curves and report emission."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import Sequence

from .errors import InsufficientDataError, UndefinedSharpeError
from .money import to_cents

log = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252

# Table row labels for the two strategies.
STRATEGY_LABELS = {
    "top_down": "Sector-Allocation",
    "cross_sectional": "Cross-Momentum",
}


@dataclass(frozen=True)
class MetricSet:
    pct_change: float
    sharpe: float | None
    n_days: int
    total_costs: Decimal
    max_drawdown: float

    def to_dict(self) -> dict:
        return {
            "pct_change": self.pct_change,
            "sharpe": self.sharpe,
            "n_days": self.n_days,
            "total_costs": str(to_cents(self.total_costs)),
            "max_drawdown": self.max_drawdown,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricSet":
        return cls(
            pct_change=float(raw["pct_change"]),
            sharpe=None if raw["sharpe"] is None else float(raw["sharpe"]),
            n_days=int(raw["n_days"]),
            total_costs=Decimal(raw["total_costs"]),
            max_drawdown=float(raw["max_drawdown"]),
        )


def pct_change(curve: Sequence[tuple[date, Decimal]]) -> float:
    """Total return percent: 100 * (final - initial) / initial.

    Costs are already inside the curve; equity is marked net of them.
    """
    if not curve:
        raise InsufficientDataError("empty equity curve")
    initial = curve[0][1]
    final = curve[-1][1]
    return float(100 * (final - initial) / initial)


def daily_returns(curve: Sequence[tuple[date, Decimal]]) -> list[float]:
    """Simple returns between consecutive trading days."""
    out: list[float] = []
    for (_, prev), (_, cur) in zip(curve, curve[1:]):
        out.append(float(cur / prev - 1))
    return out


def sharpe(
    returns: Sequence[float],
    risk_free_annual_pct: float = 0.0,
    annualization_days: int = TRADING_DAYS_PER_YEAR,
) -> float:
    """Annualized Sharpe: mean daily excess return over the sample standard
    deviation of daily returns, scaled by sqrt(annualization_days).

    The risk-free rate is an annualized percent (2.0 means 2% a year) and
    is spread evenly across trading days.
    """
    if len(returns) < 2:
        raise InsufficientDataError("need at least 2 daily returns")
    n = len(returns)
    mean = sum(returns) / n
    variance = sum((r - mean) ** 2 for r in returns) / (n - 1)
    std = math.sqrt(variance)
    if std == 0.0:
        raise UndefinedSharpeError("zero standard deviation of returns")
    rf_daily = risk_free_annual_pct / 100.0 / annualization_days
    excess_mean = mean - rf_daily
    return excess_mean / std * math.sqrt(annualization_days)


def max_drawdown(curve: Sequence[tuple[date, Decimal]]) -> float:
    """Largest peak-to-trough equity decline, as a positive percent."""
    worst = Decimal(0)
    peak: Decimal | None = None
    for _, equity in curve:
        if peak is None or equity > peak:
            peak = equity
        if peak > 0:
            dd = (peak - equity) / peak
            if dd > worst:
                worst = dd
    return float(100 * worst)


def compute_metrics(
    curve: Sequence[tuple[date, Decimal]],
    total_costs: Decimal,
    risk_free_annual_pct: float = 0.0,
    annualization_days: int = TRADING_DAYS_PER_YEAR,
) -> MetricSet:
    returns = daily_returns(curve)
    try:
        ratio = sharpe(returns, risk_free_annual_pct, annualization_days)
    except (InsufficientDataError, UndefinedSharpeError) as exc:
        log.info("sharpe undefined: %s", exc)
        ratio = None
    return MetricSet(
        pct_change=pct_change(curve),
        sharpe=ratio,
        n_days=len(curve),
        total_costs=total_costs,
        max_drawdown=max_drawdown(curve),
    )


def metrics_json(
    metrics: MetricSet, strategy: str, start: date, end: date
) -> str:
    payload = {"strategy": strategy, "start": start.isoformat(), "end": end.isoformat()}
    payload.update(metrics.to_dict())
    return json.dumps(payload, sort_keys=True, indent=2)


def write_equity_csv(path: Path, curve: Sequence[tuple[date, Decimal]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "equity"])
        for d, equity in curve:
            writer.writerow([d.isoformat(), str(to_cents(equity))])


def _fmt_sharpe(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def comparison_table(rows: Sequence[tuple[str, MetricSet]]) -> str:
    """Markdown table with the strategy-comparison layout."""
    lines = [
        "| Strategy | PCT Change in Portfolio | Sharpe Ratio |",
        "| --- | --- | --- |",
    ]
    for strategy, metrics in rows:
        label = STRATEGY_LABELS.get(strategy, strategy)
        lines.append(
            f"| {label} | {metrics.pct_change:.2f}% | {_fmt_sharpe(metrics.sharpe)} |"
        )
    return "\n".join(lines) + "\n"


def emit_report(
    out_dir: Path,
    strategy: str,
    start: date,
    end: date,
    curve: Sequence[tuple[date, Decimal]],
    metrics: MetricSet,
    formats: Sequence[str] = ("json", "csv", "markdown_table"),
) -> list[Path]:
    """Write metrics.json / equity.csv / report.md into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "json" in formats:
        path = out_dir / "metrics.json"
        path.write_text(metrics_json(metrics, strategy, start, end) + "\n")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "equity.csv"
        write_equity_csv(path, curve)
        written.append(path)
    if "markdown_table" in formats:
        path = out_dir / "report.md"
        path.write_text(comparison_table([(strategy, metrics)]))
        written.append(path)
    return written
