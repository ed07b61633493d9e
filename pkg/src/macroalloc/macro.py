"""Macro memory: indicator trends under release-date semantics, FOMC summaries.

Every trend is computed only from observations released on or before the
as-of date. Months whose prints were delayed (the 2019 shutdown pushed
PCE releases off schedule) are simply absent from the released set, so
the two most recent *released* reference periods carry the trend.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import (
    GatewayError,
    InsufficientDataError,
    ParseError,
    ValidationError,
)
from .gateway import ChatGateway, ChatRequest, LONG_FORM_MAX_TOKENS

log = logging.getLogger(__name__)

MACRO_FIELDS = ("indicator", "reference_period", "release_date", "value")
FOMC_INDEX_FIELDS = ("meeting_date", "release_date", "path")

FOMC_SUMMARY_TEMPLATE = """\
Please analyze the following FOMC meeting minutes and provide a structured analysis focusing on these key aspects:

    1. Interest Rate Policy and Outlook
    - Identify explicit statements about current interest rate decisions
    - Extract any forward guidance or projections about future rate movements
    - Note any dissenting views or alternative scenarios discussed

    2. Economic Assessment
    - Summarize the Committee's view on:
    * GDP growth and economic activity
    * Labor market conditions
    * Inflation rates and price stability
    * Financial market conditions

    3. Risk Analysis
    - List major risks to the economic outlook
    - Detail both upside and downside risks

    Meeting Minutes:
    {text}

    Provide analysis in a clear, structured format.
"""


class Indicator(str, Enum):
    CPI = "CPI"
    PPI = "PPI"
    PCE = "PCE"
    NFP = "NFP"
    PMI = "PMI"


# Release dates must not precede the period they describe; PMI is exempt
# because the ISM print can land on the first business day of the month
# it references in some historical vendor exports.
_RELEASE_AFTER_PERIOD = {
    Indicator.CPI,
    Indicator.PPI,
    Indicator.PCE,
    Indicator.NFP,
}


def _last_day_of_period(period: str) -> date:
    year, month = int(period[:4]), int(period[5:7])
    if month == 12:
        return date(year, 12, 31)
    return date(year, month + 1, 1) - timedelta(days=1)


@dataclass(frozen=True)
class MacroObservation:
    indicator: Indicator
    reference_period: str  # "YYYY-MM"; lexicographic order is chronological
    release_date: date
    value: float

    def __post_init__(self):
        if len(self.reference_period) != 7 or self.reference_period[4] != "-":
            raise ValidationError(
                f"reference_period must be YYYY-MM, got {self.reference_period!r}"
            )
        int(self.reference_period[:4]), int(self.reference_period[5:7])
        if (
            self.indicator in _RELEASE_AFTER_PERIOD
            and self.release_date < _last_day_of_period(self.reference_period)
        ):
            raise ValidationError(
                f"{self.indicator.value} {self.reference_period} released "
                f"{self.release_date}, before the period ended"
            )


@dataclass(frozen=True)
class FomcSummary:
    meeting_date: date
    release_date: date
    text: str

    def __post_init__(self):
        if self.release_date < self.meeting_date:
            raise ValidationError("FOMC summary released before its meeting")
        if not self.text.strip():
            raise ValidationError("FOMC summary text is empty")


@dataclass(frozen=True)
class MacroSnapshot:
    """Point-in-time trend readings plus the latest released FOMC summary.

    ``staleness`` records the reference period behind each trend and
    ``provenance`` the release date of the latest observation used, so a
    run can be audited for look-ahead afterwards.
    """

    as_of: date
    trends: dict[Indicator, float | None]
    staleness: dict[Indicator, str | None]
    provenance: dict[Indicator, date | None]
    fomc: FomcSummary | None

    @property
    def missing(self) -> tuple[Indicator, ...]:
        return tuple(i for i in Indicator if self.trends.get(i) is None)

    def to_json(self) -> str:
        """Canonical serialization; identical stores yield identical bytes."""
        payload = {
            "as_of": self.as_of.isoformat(),
            "fomc": None
            if self.fomc is None
            else {
                "meeting_date": self.fomc.meeting_date.isoformat(),
                "release_date": self.fomc.release_date.isoformat(),
                "text": self.fomc.text,
            },
            "missing": [i.value for i in self.missing],
            "provenance": {
                i.value: d.isoformat() if d else None
                for i, d in sorted(self.provenance.items(), key=lambda kv: kv[0].value)
            },
            "staleness": {
                i.value: p
                for i, p in sorted(self.staleness.items(), key=lambda kv: kv[0].value)
            },
            "trends": {
                i.value: t
                for i, t in sorted(self.trends.items(), key=lambda kv: kv[0].value)
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def format_trend(value: float | None) -> str:
    """Short unambiguous rendering for prompts: '+0.20%' or 'unavailable'."""
    if value is None:
        return "unavailable"
    return f"{value:+.2f}%"


class MacroStore:
    """Observations per indicator, ordered by reference period."""

    def __init__(self, observations: Iterable[MacroObservation]):
        series: dict[Indicator, list[MacroObservation]] = {i: [] for i in Indicator}
        seen: set[tuple[Indicator, str]] = set()
        for obs in observations:
            key = (obs.indicator, obs.reference_period)
            if key in seen:
                raise ValidationError(
                    f"duplicate observation {obs.indicator.value} "
                    f"{obs.reference_period}"
                )
            seen.add(key)
            series[obs.indicator].append(obs)
        self._series = {
            ind: tuple(sorted(obs_list, key=lambda o: o.reference_period))
            for ind, obs_list in series.items()
        }

    def series(self, indicator: Indicator) -> tuple[MacroObservation, ...]:
        return self._series[indicator]

    def all_observations(self) -> Iterator[MacroObservation]:
        for ind in Indicator:
            yield from self._series[ind]


class FomcStore:
    def __init__(self, summaries: Iterable[FomcSummary]):
        self._summaries = tuple(
            sorted(summaries, key=lambda s: (s.release_date, s.meeting_date))
        )

    def __len__(self) -> int:
        return len(self._summaries)

    def __iter__(self) -> Iterator[FomcSummary]:
        return iter(self._summaries)

    def latest_released(self, as_of: date) -> FomcSummary | None:
        chosen = None
        for summary in self._summaries:
            if summary.release_date <= as_of:
                chosen = summary
        return chosen


def mom_pct_change(
    series: Sequence[MacroObservation], as_of: date
) -> tuple[float, MacroObservation, MacroObservation]:
    """Month-over-month % change across the two most recent released periods.

    Returns (percent, latest, previous). Unreleased months are simply
    absent, which is exactly the carry-forward the release calendar
    implies for delayed prints.
    """
    released = sorted(
        (obs for obs in series if obs.release_date <= as_of),
        key=lambda o: o.reference_period,
    )
    if len(released) < 2:
        raise InsufficientDataError(
            f"need 2 released observations on or before {as_of}, "
            f"have {len(released)}"
        )
    prev, latest = released[-2], released[-1]
    if prev.value == 0:
        raise InsufficientDataError(
            f"previous value for {prev.indicator.value} {prev.reference_period} "
            "is zero; % change undefined"
        )
    return 100.0 * (latest.value - prev.value) / prev.value, latest, prev


def build_snapshot(
    macro_store: MacroStore, fomc_store: FomcStore, as_of: date
) -> MacroSnapshot:
    """Trends for all five indicators as of ``as_of``; gaps degrade gracefully."""
    trends: dict[Indicator, float | None] = {}
    staleness: dict[Indicator, str | None] = {}
    provenance: dict[Indicator, date | None] = {}
    for indicator in Indicator:
        try:
            pct, latest, _ = mom_pct_change(macro_store.series(indicator), as_of)
        except InsufficientDataError:
            trends[indicator] = None
            staleness[indicator] = None
            provenance[indicator] = None
            continue
        trends[indicator] = pct
        staleness[indicator] = latest.reference_period
        provenance[indicator] = latest.release_date
    return MacroSnapshot(
        as_of=as_of,
        trends=trends,
        staleness=staleness,
        provenance=provenance,
        fomc=fomc_store.latest_released(as_of),
    )


def build_fomc_prompt(minutes_text: str) -> str:
    return FOMC_SUMMARY_TEMPLATE.replace("{text}", minutes_text)


def summarize_fomc(
    minutes_text: str,
    gateway: ChatGateway,
    meeting_date: date,
    release_date: date,
    model_id: str,
) -> FomcSummary:
    """Summarize one minutes document; gateway errors propagate to the caller."""
    if not minutes_text.strip():
        raise ValidationError("minutes text is empty")
    response = gateway.complete(
        ChatRequest(
            messages=(("user", build_fomc_prompt(minutes_text)),),
            model_id=model_id,
            max_output_tokens=LONG_FORM_MAX_TOKENS,
            request_tag="fomc-summary",
        )
    )
    if not response.text.strip():
        raise GatewayError("gateway returned an empty FOMC summary")
    return FomcSummary(
        meeting_date=meeting_date, release_date=release_date, text=response.text
    )


def minutes_cache_key(minutes_text: str) -> str:
    """Summaries are cached on content, not dates, so re-ingests are free."""
    return hashlib.sha256(minutes_text.encode()).hexdigest()


def macro_observation_from_row(row: dict, line: int) -> MacroObservation:
    try:
        indicator = Indicator(row["indicator"].strip().upper())
    except (ValueError, AttributeError, KeyError, TypeError):
        raise ParseError(f"unknown indicator {row.get('indicator')!r}", line) from None
    try:
        return MacroObservation(
            indicator=indicator,
            reference_period=row["reference_period"].strip(),
            release_date=date.fromisoformat(row["release_date"].strip()),
            value=float(row["value"]),
        )
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}") from None
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed macro row: {exc}", line) from None


def read_macro_csv(path) -> Iterator[MacroObservation]:
    """Parse `indicator,reference_period,release_date,value` rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MACRO_FIELDS:
            raise ParseError(
                f"macro header must be {','.join(MACRO_FIELDS)}", line=1
            )
        for row in reader:
            yield macro_observation_from_row(row, reader.line_num)


def write_fomc_summaries(path: str | Path, summaries: Iterable[FomcSummary]) -> None:
    """Persist summaries as JSONL sorted by meeting date."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for summary in sorted(summaries, key=lambda s: (s.meeting_date, s.release_date)):
        lines.append(
            json.dumps(
                {
                    "meeting_date": summary.meeting_date.isoformat(),
                    "release_date": summary.release_date.isoformat(),
                    "text": summary.text,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_fomc_summaries(path: str | Path) -> FomcStore:
    summaries: list[FomcSummary] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                summaries.append(
                    FomcSummary(
                        meeting_date=date.fromisoformat(raw["meeting_date"]),
                        release_date=date.fromisoformat(raw["release_date"]),
                        text=raw["text"],
                    )
                )
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed summary record: {exc}", line_no) from None
    return FomcStore(summaries)


def read_fomc_index(path) -> Iterator[tuple[date, date, Path]]:
    """Parse the minutes index CSV; paths resolve relative to the index file."""
    base = Path(path).parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != FOMC_INDEX_FIELDS:
            raise ParseError(
                f"fomc index header must be {','.join(FOMC_INDEX_FIELDS)}", line=1
            )
        for row in reader:
            line = reader.line_num
            try:
                yield (
                    date.fromisoformat(row["meeting_date"].strip()),
                    date.fromisoformat(row["release_date"].strip()),
                    (base / row["path"].strip()).resolve(),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed fomc index row: {exc}", line) from None
