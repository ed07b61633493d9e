"""Daily ranking prompts (top-down and cross-sectional) and reflections.

Prompt builders are pure string assembly: the same memories, snapshot
and portfolio always produce byte-identical prompts. Missing data is
rendered as explicit "unavailable" strings, never silently dropped.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

from .errors import GatewayError, ParseError, ReflectionFailure, SectorMapError
from .gateway import ChatGateway, ChatRequest, LONG_FORM_MAX_TOKENS
from .macro import Indicator, MacroSnapshot, format_trend
from .sentiment import SentimentRecord

log = logging.getLogger(__name__)

TOP_DOWN = "top_down"
CROSS_SECTIONAL = "cross_sectional"
STRATEGIES = (TOP_DOWN, CROSS_SECTIONAL)

GICS_SECTORS = (
    "Information Technology",
    "Financials",
    "Healthcare",
    "Consumer Discretionary",
    "Consumer Staples",
    "Industrials",
    "Energy",
    "Materials",
    "Communication Services",
    "Utilities",
    "Real Estate",
)

NO_FOMC_TEXT = "no recent FOMC summary available"

DEFAULT_ROW_CAP = 400

TOPDOWN_TEMPLATE = """\
You are a quantitative macro strategist specializing in top-down allocation strategies. Your task is to analyze macroeconomic conditions first, then use sentiment data to select stocks that align with the macro outlook.

        Given the following inputs:
        [MACRO DATA TRENDS]
        - Latest trend readings: CPI {value}, PPI {value}, PCE {value}, NFP {value}, PMI {value}

        [FOMC MINUTES SUMMARY]
        - Recent FOMC minutes summary: {key_points}

        [STOCK UNIVERSE]
        - List of S&P 500 stocks with their sentiment data
        - Format: date|ticker|aspect_sentiment_pairs

        [CURRENT PORTFOLIO]
        - List of current positions:
            - Long positions: [(TICKER, weight)]
            - Short positions: [(TICKER, weight)]

        For sector analysis, use the 11 GICS sectors:
        - Information Technology
        - Financials
        - Healthcare
        - Consumer Discretionary
        - Consumer Staples
        - Industrials
        - Energy
        - Materials
        - Communication Services
        - Utilities
        - Real Estate

        Analysis Process:
        1. Macro Environment Assessment:
           - Analyze inflation trends (CPI, PPI, PCE)
           - Evaluate economic strength (PMI, NFP)
           - Consider monetary policy outlook (FOMC)
           - Identify which sectors should perform best in this environment

        2. Sector-Level Analysis:
           - Determine sector overweight/underweight based on macro
           - Compare current sector exposure vs target allocation
           - Identify sectors requiring position changes

        3. Stock Selection Within Sectors:
           - Prioritize stocks in preferred sectors
           - Use sentiment data to rank within sectors
           - Consider existing positions (avoid unnecessary turnover)

        Provide response in format:

        MACRO ENVIRONMENT:
        - Current economic conditions
        - Key drivers
        - Sector implications

        SECTOR VIEWS:
        - Overweight sectors: [list with rationale]
        - Underweight sectors: [list with rationale]
        - Current vs Target exposure

        PORTFOLIO RECOMMENDATIONS:
        Positions to Long:
        1. [TICKER] (Sector: X)
           - Macro alignment: [explanation]
           - Sector view: [explanation]
           - Supporting sentiment: [relevant aspects]
           - Position size recommendation: [X%]

        Positions to Short:
        [Same format as above]

        TURNOVER ANALYSIS:
        - Summary of recommended changes
        - Rationale for maintaining existing positions
"""

CROSS_SECTIONAL_TEMPLATE = """\
You are a quantitative analyst specializing in sentiment-driven trading strategies. Your task is to analyze and rerank stocks for a long-short strategy based on sentiment data and macroeconomic context.

    Given the following inputs:
    [LIST OF STOCKS]
    - List of stocks that can be included in the portfolio
    - All stocks are assumed to start with the same score

    [SENTIMENT DATA]
    - List of stocks with sentiment-aspect pairs from news articles
    - Each pair contains: stock ticker, date, specific aspect (e.g., "management", "financial performance"), and sentiment score (-1, 0, 1)
    - Sample format: 2024-01-15|AAPL|[[management, 1],[revenue, -1]] (published_date|stock|aspect_sentiment_pairs)

    [MACRO DATA TRENDS]
    - Latest trend readings: CPI {value}, PPI {value}, PCE {value}, NFP {value}, PMI {value}

    [FOMC MINUTES SUMMARY]
    - Recent FOMC minutes summary: {key_points}

    Analyze how these macro trends might intesify or mitigate the sentiment towards different aspects. For example:
    - An increase in inflation might make cost-related sentiments more impactful
    - An increase in PMI readings might reduce supply chain concern impacts
    - Trends for Employment data might affect consumer demand sentiment importance

    For each stock, please:
    1. Evaluate each sentiment-aspect pair
    2. Adjust the importance of each aspect based on current macro conditions
    3. Assign a composite score that considers:
    - Sentiment scores
    - Macro-influenced aspect weights


    Then:
    1. Rank the stocks from highest to lowest composite scores
    2. Split into long candidates (positive scores) and short candidates (negative scores)
    3. Explain your reasoning for the each long and short picks
    4. Check thorugh the long and short candidates. If there are duplicates, review the composite scores and keep only the position with a higher composite score.

    Provide your response in this format:

    LONG CANDIDATES:
    1. [TICKER] - Score: [X]
    - Key aspects: [list most influential aspects]
    - Macro amplifiers: [which macro factors strengthened the case]

    2. [Continue for long picks...]

    SHORT CANDIDATES:
    [Same format as above]

    MACRO ANALYSIS:
    - Brief explanation of how macro conditions influenced the rankings
    - Which factors were most decisive

    Only provide factual analysis based on the data given.
"""


class SectorMap:
    """Static ticker -> GICS sector lookup; unmapped tickers fail fast."""

    def __init__(self, mapping: dict[str, str]):
        for ticker, sector in mapping.items():
            if sector not in GICS_SECTORS:
                raise SectorMapError(f"{ticker}: unknown GICS sector {sector!r}")
        self._mapping = dict(mapping)

    def __len__(self) -> int:
        return len(self._mapping)

    def __contains__(self, ticker: str) -> bool:
        return ticker in self._mapping

    def sector_of(self, ticker: str) -> str:
        try:
            return self._mapping[ticker]
        except KeyError:
            raise SectorMapError(f"no GICS sector mapping for {ticker}") from None

    @classmethod
    def from_csv(cls, path) -> "SectorMap":
        mapping: dict[str, str] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != (
                "ticker",
                "sector",
            ):
                raise ParseError("sector map header must be ticker,sector", line=1)
            for row in reader:
                mapping[row["ticker"].strip().upper()] = row["sector"].strip()
        return cls(mapping)


@dataclass(frozen=True)
class PortfolioView:
    """Position weights (percent of current equity) for prompt rendering."""

    longs: tuple[tuple[str, float], ...] = ()
    shorts: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class RankingReflection:
    strategy: str
    decision_date: date
    raw_text: str
    prompt_hash: str

    def __post_init__(self):
        if not self.raw_text.strip():
            raise ReflectionFailure(f"empty reflection for {self.decision_date}")


def format_sentiment_row(record: SentimentRecord) -> str:
    pairs = ",".join(f"[{p.aspect}, {p.sentiment}]" for p in record.pairs)
    return f"{record.published_date.isoformat()}|{record.ticker}|[{pairs}]"


def _render_positions(entries: Sequence[tuple[str, float]]) -> str:
    if not entries:
        return "[]"
    return "[" + ", ".join(f"({t}, {w:.1f}%)" for t, w in entries) + "]"


def _fill_trends(template: str, snapshot: MacroSnapshot) -> str:
    filled = template
    for indicator in Indicator:
        filled = filled.replace(
            f"{indicator.value} {{value}}",
            f"{indicator.value} {format_trend(snapshot.trends.get(indicator))}",
        )
    return filled


def _fill_fomc(template: str, snapshot: MacroSnapshot) -> str:
    key_points = snapshot.fomc.text if snapshot.fomc is not None else NO_FOMC_TEXT
    return template.replace("{key_points}", key_points)


def _insert_after(text: str, anchor: str, lines: list[str]) -> str:
    """Insert lines directly below the first line containing ``anchor``."""
    if not lines:
        return text
    out: list[str] = []
    inserted = False
    for line in text.split("\n"):
        out.append(line)
        if not inserted and anchor in line:
            out.extend(lines)
            inserted = True
    if not inserted:
        raise ValueError(f"anchor {anchor!r} not found in template")
    return "\n".join(out)


def cap_records(
    records: Sequence[SentimentRecord], cap: int = DEFAULT_ROW_CAP
) -> list[SentimentRecord]:
    """Bound prompt size: tickers with the most articles first, stable order."""
    if len(records) <= cap:
        return list(records)
    counts: dict[str, int] = {}
    for record in records:
        counts[record.ticker] = counts.get(record.ticker, 0) + 1
    ranked = sorted(records, key=lambda r: (-counts[r.ticker], r.ticker, r.article_ref))
    kept = set(id(r) for r in ranked[:cap])
    return [r for r in records if id(r) in kept]


def build_topdown_prompt(
    snapshot: MacroSnapshot,
    records: Sequence[SentimentRecord],
    portfolio: PortfolioView,
    sector_map: SectorMap,
    row_cap: int = DEFAULT_ROW_CAP,
) -> str:
    """Fill the top-down template with trends, FOMC key points, sentiment
    rows and current positions. Every record ticker must have a sector."""
    for record in records:
        sector_map.sector_of(record.ticker)
    prompt = _fill_trends(TOPDOWN_TEMPLATE, snapshot)
    prompt = _fill_fomc(prompt, snapshot)
    rows = [format_sentiment_row(r) for r in cap_records(records, row_cap)]
    prompt = _insert_after(
        prompt, "- Format: date|ticker|aspect_sentiment_pairs", rows
    )
    prompt = prompt.replace(
        "- Long positions: [(TICKER, weight)]",
        f"- Long positions: {_render_positions(portfolio.longs)}",
    )
    prompt = prompt.replace(
        "- Short positions: [(TICKER, weight)]",
        f"- Short positions: {_render_positions(portfolio.shorts)}",
    )
    return prompt


def build_cross_sectional_prompt(
    universe: Iterable[str],
    records: Sequence[SentimentRecord],
    snapshot: MacroSnapshot,
    row_cap: int = DEFAULT_ROW_CAP,
) -> str:
    """Fill the cross-sectional template: stock list, sentiment rows, macro
    context. No sector phase and no portfolio section by design."""
    prompt = _fill_trends(CROSS_SECTIONAL_TEMPLATE, snapshot)
    prompt = _fill_fomc(prompt, snapshot)
    listing = ", ".join(sorted(set(universe)))
    prompt = _insert_after(
        prompt,
        "- All stocks are assumed to start with the same score",
        [listing] if listing else [],
    )
    rows = [format_sentiment_row(r) for r in cap_records(records, row_cap)]
    prompt = _insert_after(
        prompt,
        "- Sample format: 2024-01-15|AAPL|[[management, 1],[revenue, -1]]",
        rows,
    )
    return prompt


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode()).hexdigest()


def generate_reflection(
    prompt: str,
    gateway: ChatGateway,
    decision_date: date,
    strategy: str,
    model_id: str,
) -> RankingReflection:
    """One gateway call producing the day's ranking reflection."""
    if not prompt.strip():
        raise ReflectionFailure("empty ranking prompt")
    response = gateway.complete(
        ChatRequest(
            messages=(("user", prompt),),
            model_id=model_id,
            max_output_tokens=LONG_FORM_MAX_TOKENS,
            request_tag=f"ranking/{strategy}",
        )
    )
    if not response.text.strip():
        raise ReflectionFailure(f"gateway returned empty reflection on {decision_date}")
    return RankingReflection(
        strategy=strategy,
        decision_date=decision_date,
        raw_text=response.text,
        prompt_hash=prompt_digest(prompt),
    )
