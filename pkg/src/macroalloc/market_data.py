"""Point-in-time market data: OHLCV bars, trading calendar, index membership.

The store is immutable after load. Universe membership is event-sourced:
the base snapshot is encoded as ADD events effective on or before the
backtest start, and later ADD/REMOVE events replay in (effective_date,
sequence) order, so queries as of any date are survivorship-bias free.
"""

from __future__ import annotations

import csv
import logging
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import Iterable, Iterator

from .errors import (
    BoundaryError,
    DataGapError,
    ParseError,
    RangeError,
    ValidationError,
)
from .money import to_price

log = logging.getLogger(__name__)

BAR_FIELDS = ("ticker", "date", "open", "high", "low", "close", "volume")
UNIVERSE_FIELDS = ("effective_date", "action", "ticker")


@dataclass(frozen=True)
class Bar:
    """One daily OHLCV record, prices in 4-decimal fixed point."""

    ticker: str
    date: date
    open: Decimal
    high: Decimal
    low: Decimal
    close: Decimal
    volume: int

    def __post_init__(self):
        if self.volume < 0:
            raise ValidationError(f"{self.ticker} {self.date}: negative volume")
        if self.low > min(self.open, self.close):
            raise ValidationError(
                f"{self.ticker} {self.date}: low > min(open, close)"
            )
        if self.high < max(self.open, self.close):
            raise ValidationError(
                f"{self.ticker} {self.date}: high < max(open, close)"
            )
        if self.low > self.high:
            raise ValidationError(f"{self.ticker} {self.date}: low > high")


@dataclass(frozen=True)
class UniverseEvent:
    """A membership change; at least one of added/removed is present."""

    effective_date: date
    added: str | None = None
    removed: str | None = None
    sequence: int = 0

    def __post_init__(self):
        if not self.added and not self.removed:
            raise ValidationError(
                f"universe event on {self.effective_date} adds and removes nothing"
            )


class TradingCalendar:
    """Strictly increasing trading dates within the loaded range."""

    def __init__(self, dates: Iterable[date]):
        self._dates: tuple[date, ...] = tuple(sorted(set(dates)))

    def __len__(self) -> int:
        return len(self._dates)

    def __contains__(self, d: date) -> bool:
        i = bisect_left(self._dates, d)
        return i < len(self._dates) and self._dates[i] == d

    def __iter__(self) -> Iterator[date]:
        return iter(self._dates)

    @property
    def first(self) -> date:
        return self._dates[0]

    @property
    def last(self) -> date:
        return self._dates[-1]

    def sessions(self, start: date, end: date) -> tuple[date, ...]:
        """Calendar members within [start, end]."""
        lo = bisect_left(self._dates, start)
        hi = bisect_left(self._dates, end)
        if hi < len(self._dates) and self._dates[hi] == end:
            hi += 1
        return self._dates[lo:hi]

    def previous(self, d: date) -> date:
        """Greatest member strictly less than ``d``."""
        i = bisect_left(self._dates, d)
        if i == 0:
            raise BoundaryError(f"no trading day before {d}")
        return self._dates[i - 1]


def previous_trading_day(cal: TradingCalendar, d: date) -> date:
    """Greatest calendar member strictly less than ``d``."""
    return cal.previous(d)


class MarketStore:
    """Immutable store of bars and universe events indexed by (ticker, date)."""

    def __init__(self, bars: Iterable[Bar], events: Iterable[UniverseEvent]):
        self._bars: dict[tuple[str, date], Bar] = {}
        for bar in bars:
            key = (bar.ticker, bar.date)
            if key in self._bars:
                raise ValidationError(f"duplicate bar for {bar.ticker} {bar.date}")
            self._bars[key] = bar
        self._events: tuple[UniverseEvent, ...] = tuple(
            sorted(events, key=lambda e: (e.effective_date, e.sequence))
        )
        self.calendar = TradingCalendar(d for _, d in self._bars)
        all_dates = [d for _, d in self._bars]
        all_dates.extend(e.effective_date for e in self._events)
        self._range: tuple[date, date] | None = (
            (min(all_dates), max(all_dates)) if all_dates else None
        )

    def __len__(self) -> int:
        return len(self._bars)

    @property
    def events(self) -> tuple[UniverseEvent, ...]:
        return self._events

    @property
    def tickers(self) -> frozenset[str]:
        return frozenset(t for t, _ in self._bars)

    def universe_as_of(self, d: date) -> frozenset[str]:
        """Membership after replaying all events with effective_date <= d."""
        if self._range is None:
            return frozenset()
        lo, hi = self._range
        if d < lo or d > hi:
            raise RangeError(f"{d} outside loaded range [{lo}, {hi}]")
        members: set[str] = set()
        for event in self._events:
            if event.effective_date > d:
                break
            if event.added:
                members.add(event.added)
            if event.removed:
                members.discard(event.removed)
        return frozenset(members)

    def bar(self, ticker: str, d: date) -> Bar:
        try:
            return self._bars[(ticker, d)]
        except KeyError:
            raise DataGapError(f"no bar for {ticker} on {d}") from None

    def has_bar(self, ticker: str, d: date) -> bool:
        return (ticker, d) in self._bars

    def execution_price(self, ticker: str, d: date) -> Decimal:
        """Fill price convention: the decision day's open."""
        return self.bar(ticker, d).open

    def close_price(self, ticker: str, d: date) -> Decimal:
        return self.bar(ticker, d).close

    def open_prices(self, d: date, tickers: Iterable[str]) -> dict[str, Decimal]:
        """Opens for the tickers that have a bar on ``d``; gaps are omitted."""
        return {
            t: self._bars[(t, d)].open for t in tickers if (t, d) in self._bars
        }

    def close_prices(self, d: date, tickers: Iterable[str]) -> dict[str, Decimal]:
        return {
            t: self._bars[(t, d)].close for t in tickers if (t, d) in self._bars
        }


def load_market_data(
    bars: Iterable[Bar], universe_events: Iterable[UniverseEvent]
) -> MarketStore:
    """Build the immutable store; duplicate (ticker, date) bars are rejected."""
    return MarketStore(bars, universe_events)


def _parse_date(raw: str, line: int) -> date:
    try:
        return date.fromisoformat(raw.strip())
    except ValueError:
        raise ParseError(f"bad date {raw!r}", line) from None


def bar_from_row(row: dict, line: int) -> Bar:
    """Build one Bar from a CSV row; errors carry the line number."""
    try:
        return Bar(
            ticker=row["ticker"].strip().upper(),
            date=_parse_date(row["date"], line),
            open=to_price(row["open"]),
            high=to_price(row["high"]),
            low=to_price(row["low"]),
            close=to_price(row["close"]),
            volume=int(row["volume"]),
        )
    except ParseError:
        raise
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}") from None
    except (TypeError, AttributeError, KeyError, ValueError) as exc:
        raise ParseError(f"malformed bar row: {exc}", line) from None


def universe_event_from_row(row: dict, line: int, sequence: int) -> UniverseEvent:
    try:
        action = row["action"].strip().upper()
        ticker = row["ticker"].strip().upper()
    except (AttributeError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed universe row: {exc}", line) from None
    if action == "ADD":
        added, removed = ticker, None
    elif action == "REMOVE":
        added, removed = None, ticker
    else:
        raise ParseError(f"unknown action {row['action']!r}", line)
    return UniverseEvent(
        effective_date=_parse_date(row["effective_date"], line),
        added=added,
        removed=removed,
        sequence=sequence,
    )


def read_bars_csv(path) -> Iterator[Bar]:
    """Parse a bars CSV (`ticker,date,open,high,low,close,volume`).

    Raises ParseError/ValidationError with the offending line number.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != BAR_FIELDS:
            raise ParseError(
                f"bars header must be {','.join(BAR_FIELDS)}", line=1
            )
        for row in reader:
            yield bar_from_row(row, reader.line_num)


def read_universe_csv(path) -> Iterator[UniverseEvent]:
    """Parse a universe events CSV (`effective_date,action(ADD|REMOVE),ticker`)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != UNIVERSE_FIELDS:
            raise ParseError(
                f"universe header must be {','.join(UNIVERSE_FIELDS)}", line=1
            )
        for seq, row in enumerate(reader):
            yield universe_event_from_row(row, reader.line_num, seq)
