"""Portfolio execution under the capital, conflict, reversal and
delisting rules, with exact fixed-point cost accounting.

Money never touches float here. Each trade pays commission plus market
impact, both as basis points of notional, so cumulative costs equal
(commission_bps + impact_bps) / 10000 of total traded notional exactly.

Shorts post 100% collateral: opening a short debits cash by the entry
notional (proceeds stay escrowed with matching collateral) and the
position marks at (2 * entry - mark) * quantity, so equity moves one-for-
one with (entry - mark) and closing credits (2 * entry - exit) * quantity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from enum import Enum
from typing import Mapping

from .decisions import Action, DecisionSet
from .money import ZERO, bps, to_decimal

log = logging.getLogger(__name__)

# Skip reason codes surfaced in run artifacts.
SKIP_CONFLICT = "conflict"
SKIP_CAP = "cap"
SKIP_DATA_GAP = "data_gap"
SKIP_ZERO_SIZE = "zero_size"
SKIP_REVERSAL = "reversal_cooldown"
SKIP_NO_POSITION = "no_position"


class Side(str, Enum):
    LONG = "long"
    SHORT = "short"


@dataclass
class Position:
    ticker: str
    side: Side
    quantity: int
    entry_price: Decimal
    entry_date: date
    last_mark: Decimal

    def __post_init__(self):
        if self.quantity < 1:
            raise ValueError(f"{self.ticker}: position quantity must be >= 1")

    def value(self, mark: Decimal) -> Decimal:
        """Equity contribution at ``mark``."""
        if self.side is Side.LONG:
            return mark * self.quantity
        return (2 * self.entry_price - mark) * self.quantity

    def notional(self, mark: Decimal) -> Decimal:
        """Absolute market value counted toward gross exposure."""
        return mark * self.quantity


@dataclass(frozen=True)
class Fill:
    date: date
    ticker: str
    side: Side
    action: str  # "open" | "close"
    quantity: int
    price: Decimal
    commission: Decimal
    impact: Decimal
    note: str = ""


@dataclass(frozen=True)
class Skip:
    date: date
    ticker: str
    action: str
    reason: str


class PortfolioState:
    """Cash, open positions and running cost/P&L totals. Single-owner."""

    def __init__(self, cash: Decimal):
        self.cash: Decimal = to_decimal(cash)
        self.positions: dict[str, Position] = {}
        self.cumulative_costs: Decimal = ZERO
        self.realized_pnl: Decimal = ZERO

    def marks(self, prices: Mapping[str, Decimal]) -> dict[str, Decimal]:
        """Today's price where available, else the carried last mark."""
        return {
            t: prices.get(t, pos.last_mark) for t, pos in self.positions.items()
        }

    def equity(self, prices: Mapping[str, Decimal]) -> Decimal:
        marks = self.marks(prices)
        return self.cash + sum(
            (pos.value(marks[t]) for t, pos in self.positions.items()), ZERO
        )

    def gross_exposure(self, prices: Mapping[str, Decimal]) -> Decimal:
        marks = self.marks(prices)
        return sum(
            (pos.notional(marks[t]) for t, pos in self.positions.items()), ZERO
        )


def _trade_costs(
    notional: Decimal, commission_bps: int, impact_bps: int
) -> tuple[Decimal, Decimal]:
    return bps(commission_bps) * notional, bps(impact_bps) * notional


def _close_position(
    state: PortfolioState,
    ticker: str,
    price: Decimal,
    d: date,
    note: str,
    commission_bps: int,
    impact_bps: int,
) -> Fill:
    pos = state.positions.pop(ticker)
    notional = price * pos.quantity
    commission, impact = _trade_costs(notional, commission_bps, impact_bps)
    if pos.side is Side.LONG:
        state.cash += notional
        state.realized_pnl += (price - pos.entry_price) * pos.quantity
    else:
        state.cash += (2 * pos.entry_price - price) * pos.quantity
        state.realized_pnl += (pos.entry_price - price) * pos.quantity
    state.cash -= commission + impact
    state.cumulative_costs += commission + impact
    if state.cash < 0:
        log.warning(
            "cash went negative closing %s on %s; collateral model exceeded",
            ticker,
            d,
        )
    return Fill(
        date=d,
        ticker=ticker,
        side=pos.side,
        action="close",
        quantity=pos.quantity,
        price=price,
        commission=commission,
        impact=impact,
        note=note,
    )


def _open_position(
    state: PortfolioState,
    ticker: str,
    side: Side,
    quantity: int,
    price: Decimal,
    d: date,
    commission_bps: int,
    impact_bps: int,
) -> Fill:
    notional = price * quantity
    commission, impact = _trade_costs(notional, commission_bps, impact_bps)
    state.cash -= notional + commission + impact
    state.cumulative_costs += commission + impact
    state.positions[ticker] = Position(
        ticker=ticker,
        side=side,
        quantity=quantity,
        entry_price=price,
        entry_date=d,
        last_mark=price,
    )
    return Fill(
        date=d,
        ticker=ticker,
        side=side,
        action="open",
        quantity=quantity,
        price=price,
        commission=commission,
        impact=impact,
    )


def apply_decisions(
    state: PortfolioState,
    decisions: DecisionSet,
    prices: Mapping[str, Decimal],
    universe: frozenset[str] | set[str],
    max_utilization: Decimal = Decimal("0.90"),
    commission_bps: int = 10,
    impact_bps: int = 10,
) -> tuple[list[Fill], list[Skip]]:
    """Execute one day's decision batch against the open prices.

    Processing order frees capital before it is consumed and is fixed:
      1. forced liquidation of holdings no longer in the universe,
      2. explicit closes,
      3. reversal liquidations: an open against an opposite-side holding
         fully closes the holding; the new open waits for a later day,
      4. opens, in decision order, each sized
         floor(size_pct% * current equity / price) shares and skipped if
         it would lift gross exposure above ``max_utilization`` of
         post-trade equity or collide with a surviving same-side position.

    Mutates ``state``; returns (fills, skips) with a reason per skip.
    """
    d = decisions.decision_date
    fills: list[Fill] = []
    skips: list[Skip] = []

    def exec_price(ticker: str) -> Decimal | None:
        return prices.get(ticker)

    # 1. Forced liquidations: holdings dropped from the index. Carry the
    # last mark when the delisted name no longer prints a bar.
    for ticker in sorted(state.positions):
        if ticker in universe:
            continue
        price = exec_price(ticker)
        if price is None:
            price = state.positions[ticker].last_mark
            log.info("delisted %s has no bar on %s; using last mark", ticker, d)
        fills.append(
            _close_position(
                state, ticker, price, d, "delisted", commission_bps, impact_bps
            )
        )

    open_decisions = [
        dec for dec in decisions.decisions if dec.action is not Action.CLOSE
    ]

    # 2. Explicit closes.
    for dec in decisions.decisions:
        if dec.action is not Action.CLOSE:
            continue
        if dec.ticker not in state.positions:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_NO_POSITION))
            continue
        price = exec_price(dec.ticker)
        if price is None:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_DATA_GAP))
            continue
        fills.append(
            _close_position(
                state, dec.ticker, price, d, "close", commission_bps, impact_bps
            )
        )

    # 3. Reversals: liquidate the opposite-side holding now; the open
    # itself is deferred (one-day cooldown against flip-flop churn).
    consumed: set[int] = set()
    for idx, dec in enumerate(open_decisions):
        pos = state.positions.get(dec.ticker)
        if pos is None:
            continue
        wanted = Side.LONG if dec.action is Action.OPEN_LONG else Side.SHORT
        if pos.side is wanted:
            continue
        price = exec_price(dec.ticker)
        if price is None:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_DATA_GAP))
            consumed.add(idx)
            continue
        fills.append(
            _close_position(
                state, dec.ticker, price, d, "reversal", commission_bps, impact_bps
            )
        )
        skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_REVERSAL))
        consumed.add(idx)

    # 4. Opens, in decision order.
    for idx, dec in enumerate(open_decisions):
        if idx in consumed:
            continue
        if dec.ticker in state.positions:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_CONFLICT))
            continue
        price = exec_price(dec.ticker)
        if price is None:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_DATA_GAP))
            continue
        equity_now = state.equity(prices)
        size = to_decimal(dec.size_pct) / 100
        quantity = int(size * equity_now / price)
        if quantity < 1:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_ZERO_SIZE))
            continue
        notional = price * quantity
        commission, impact = _trade_costs(notional, commission_bps, impact_bps)
        gross_after = state.gross_exposure(prices) + notional
        equity_after = equity_now - commission - impact
        if equity_after <= 0 or gross_after > max_utilization * equity_after:
            skips.append(Skip(d, dec.ticker, dec.action.value, SKIP_CAP))
            continue
        side = Side.LONG if dec.action is Action.OPEN_LONG else Side.SHORT
        fills.append(
            _open_position(
                state, dec.ticker, side, quantity, price, d,
                commission_bps, impact_bps,
            )
        )

    return fills, skips


def mark_to_market(state: PortfolioState, closes: Mapping[str, Decimal]) -> Decimal:
    """End-of-day equity; carries the last known mark over price gaps."""
    equity = state.cash
    for ticker, pos in state.positions.items():
        mark = closes.get(ticker)
        if mark is None:
            mark = pos.last_mark
            log.info("no close for %s; carrying last mark %s", ticker, mark)
        pos.last_mark = mark
        equity += pos.value(mark)
    return equity
