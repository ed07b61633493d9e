"""Sentiment memory: aspect-sentiment extraction from news and
previous-trading-day retrieval for the ranking step.

Aspect names are normalized into a 14-entry vocabulary. Aspects the
model emits outside it (its own few-shot example does) are kept but
flagged non-canonical, so no signal is dropped and the audit log shows
exactly what leaked past the vocabulary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ExtractionError, ParseError, ValidationError
from .gateway import ChatGateway, ChatRequest, extract_json
from .market_data import TradingCalendar, previous_trading_day

log = logging.getLogger(__name__)

MEMORY_HEADER = "published_date|ticker|aspect|sentiment|article_ref"

# Canonical vocabulary; slash entries from the extraction instructions
# collapse onto their first name.
ASPECT_VOCABULARY = frozenset(
    {
        "revenue",
        "earnings",
        "market_share",
        "product_performance",
        "management",
        "growth",
        "competition",
        "regulatory",
        "innovation",
        "customer_demand",
        "operational_efficiency",
        "partnerships",
        "risk",
        "strategy",
    }
)

ASPECT_SYNONYMS = {
    "sales": "revenue",
    "revenue/sales": "revenue",
    "profit": "earnings",
    "profits": "earnings",
    "earnings/profit": "earnings",
    "risks": "risk",
    "partnership": "partnerships",
}

MAX_PAIRS = 5

SENTIMENT_TEMPLATE = """\
You are a financial sentiment analyzer. Your task is to analyze news articles about companies and extract sentiment information about different aspects of the company mentioned in the article. Respond ONLY with a JSON object, no additional text or markdown. 

    Instructions:
    1. Analyze the provided news article's title, description, and content.
    2. Identify the main stock/company being discussed.
    3. Extract 3 to 5 key aspects discussed in the article (e.g., earnings, revenue, management, products, market position, growth, competition).
    4. For each aspect, determine the sentiment on a scale:
    - positive (1)
    - neutral (0)
    - negative (-1)
    5. Return the analysis in the following JSON format exactly, replacing the example values with your analysis.

    {"stock": "AAPL",
    "aspect_sentiment_pairs": [
        ["revenue", 1],
        ["product_performance", -1],
        ["services", 1]
    ]}


    Rules:
    - Only include information that is explicitly discussed in the article
    - Only include aspects that belong to the list of relevant aspects to look out for
    - Base sentiment strictly on the article's content, not external knowledge
    - Be consistent with aspect naming (e.g., always use "revenue" instead of mixing "revenue" and "sales")
    - Don't include duplicate aspects
    - Limit to the most significant 3-5 aspects mentioned
    - Use the most commonly known stock ticker
    - If no clear stock ticker is mentioned, use the company name in the stock field, 


    List of relevant aspects to look for:
    - revenue/sales
    - earnings/profit
    - market_share
    - product_performance
    - management
    - growth
    - competition
    - regulatory
    - innovation
    - customer_demand
    - operational_efficiency
    - partnerships
    - risk
    - strategy

    Example Analysis:

    Input:
    Title: EGG Reports Record Q4 Revenue Despite Product Sales Miss
    Description: EGG posts strong services growth but flagship product disappoints
    Content: EGG Inc. reported its highest-ever fourth-quarter revenue of $89.5 billion, though Product sales fell short of analyst expectations. The company's services division saw remarkable growth, up 16

    Output:
    {"stock": "EGG",
    "aspect_sentiment_pairs": [
        ["revenue", 1],
        ["product_performance", -1],
        ["services", 1],
        ["supply_chain", -1]
    ]}
    End of example
"""

ONLY_JSON_REMINDER = (
    "\n\nRespond with ONLY the JSON object, no additional text or markdown."
)


@dataclass(frozen=True)
class NewsArticle:
    published_date: date
    title: str
    description: str
    content: str
    source_id: str

    def __post_init__(self):
        if not self.title.strip():
            raise ValidationError(f"article {self.source_id!r} has an empty title")


@dataclass(frozen=True)
class AspectSentiment:
    aspect: str
    sentiment: int
    canonical: bool = True

    def __post_init__(self):
        if self.sentiment not in (-1, 0, 1):
            raise ValidationError(
                f"sentiment must be -1, 0 or 1, got {self.sentiment!r}"
            )


@dataclass(frozen=True)
class SentimentRecord:
    published_date: date
    ticker: str  # resolved symbol or the raw company name from extraction
    pairs: tuple[AspectSentiment, ...]
    article_ref: str

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("sentiment record needs at least one aspect pair")
        if len(self.pairs) > MAX_PAIRS:
            raise ValidationError(f"more than {MAX_PAIRS} aspect pairs")
        aspects = [p.aspect for p in self.pairs]
        if len(aspects) != len(set(aspects)):
            raise ValidationError("duplicate aspects in record")


def normalize_aspect(raw: str) -> tuple[str, bool]:
    """Lowercase snake_case + synonym folding; flags non-vocabulary names."""
    name = "_".join(str(raw).strip().lower().split())
    name = ASPECT_SYNONYMS.get(name, name)
    return name, name in ASPECT_VOCABULARY


def build_sentiment_prompt(article: NewsArticle) -> str:
    return (
        SENTIMENT_TEMPLATE
        + "\nInput:"
        + f"\nTitle: {article.title}"
        + f"\nDescription: {article.description}"
        + f"\nContent: {article.content}"
        + "\n\nOutput:\n"
    )


def _coerce_pairs(raw_pairs) -> tuple[AspectSentiment, ...]:
    if not isinstance(raw_pairs, list):
        raise ValidationError("aspect_sentiment_pairs must be a list")
    pairs: list[AspectSentiment] = []
    seen: set[str] = set()
    for item in raw_pairs:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ValidationError(f"malformed aspect pair {item!r}")
        raw_aspect, raw_sentiment = item
        if isinstance(raw_sentiment, bool) or not isinstance(
            raw_sentiment, (int, float)
        ):
            raise ValidationError(f"non-numeric sentiment {raw_sentiment!r}")
        if isinstance(raw_sentiment, float):
            if not math.isfinite(raw_sentiment) or raw_sentiment != int(raw_sentiment):
                raise ValidationError(f"non-integer sentiment {raw_sentiment!r}")
            raw_sentiment = int(raw_sentiment)
        aspect, canonical = normalize_aspect(raw_aspect)
        if not aspect:
            raise ValidationError("empty aspect name")
        if aspect in seen:
            log.info("duplicate aspect %r dropped (keeping first)", aspect)
            continue
        seen.add(aspect)
        if not canonical:
            log.info("non-canonical aspect kept under permissive policy: %r", aspect)
        pairs.append(
            AspectSentiment(aspect=aspect, sentiment=raw_sentiment, canonical=canonical)
        )
    if len(pairs) > MAX_PAIRS:
        log.info("truncating %d aspect pairs to %d", len(pairs), MAX_PAIRS)
        pairs = pairs[:MAX_PAIRS]
    if not pairs:
        raise ValidationError("no valid aspect pairs in model output")
    return tuple(pairs)


def analyze_article(
    article: NewsArticle, gateway: ChatGateway, model_id: str
) -> SentimentRecord | None:
    """Extract a sentiment record via one gateway call (plus one bounded
    retry with an ONLY-JSON reminder when the reply does not parse).

    Returns None when the model names no entity at all; raises
    ExtractionError / ValidationError for unusable output.
    """
    prompt = build_sentiment_prompt(article)
    request = ChatRequest(
        messages=(("user", prompt),),
        model_id=model_id,
        request_tag="sentiment",
    )
    response = gateway.complete(request)
    try:
        payload = extract_json(response.text)
    except ExtractionError:
        retry = ChatRequest(
            messages=(("user", prompt + ONLY_JSON_REMINDER),),
            model_id=model_id,
            request_tag="sentiment-retry",
        )
        response = gateway.complete(retry)
        payload = extract_json(response.text)  # second miss propagates
    if not isinstance(payload, dict):
        raise ExtractionError(
            "sentiment output is not a JSON object", raw_text=response.text
        )
    stock = payload.get("stock")
    if stock is None or not str(stock).strip() or str(stock).strip().lower() in (
        "none",
        "null",
        "n/a",
    ):
        log.info("article %s names no resolvable entity", article.source_id)
        return None
    pairs = _coerce_pairs(payload.get("aspect_sentiment_pairs"))
    return SentimentRecord(
        published_date=article.published_date,
        ticker=str(stock).strip(),
        pairs=pairs,
        article_ref=article.source_id,
    )


def resolve_ticker(
    raw: str, universe: frozenset[str] | set[str], alias_table: Mapping[str, str]
) -> str | None:
    """Exact in-universe ticker match, else case-insensitive alias lookup."""
    candidate = raw.strip()
    if candidate.upper() in universe:
        return candidate.upper()
    folded = {name.strip().lower(): symbol for name, symbol in alias_table.items()}
    return folded.get(candidate.lower())


class SentimentMemory:
    """Append-only sentiment store, idempotent on article_ref."""

    def __init__(self):
        self._by_ref: dict[str, SentimentRecord] = {}
        self._by_date: dict[date, list[str]] = {}

    def __len__(self) -> int:
        return len(self._by_ref)

    def __contains__(self, article_ref: str) -> bool:
        return article_ref in self._by_ref

    def add(self, record: SentimentRecord) -> bool:
        """Store a record; repeats of the same article_ref are no-ops."""
        if record.article_ref in self._by_ref:
            return False
        self._by_ref[record.article_ref] = record
        self._by_date.setdefault(record.published_date, []).append(record.article_ref)
        return True

    def records_on(self, d: date) -> list[SentimentRecord]:
        return [self._by_ref[ref] for ref in self._by_date.get(d, [])]

    def retrieve_for_decision(
        self,
        decision_date: date,
        cal: TradingCalendar,
        universe: frozenset[str] | set[str],
        alias_table: Mapping[str, str] | None = None,
    ) -> list[SentimentRecord]:
        """Records published on the previous trading day whose ticker
        resolves into the decision-day universe, ordered by (ticker, ref)."""
        prior = previous_trading_day(cal, decision_date)
        aliases = alias_table or {}
        resolved: list[SentimentRecord] = []
        for record in self.records_on(prior):
            symbol = resolve_ticker(record.ticker, universe, aliases)
            if symbol is None or symbol not in universe:
                continue
            resolved.append(
                record if record.ticker == symbol else replace(record, ticker=symbol)
            )
        resolved.sort(key=lambda r: (r.ticker, r.article_ref))
        return resolved

    def save(self, path: str | Path) -> None:
        """Persist as the pipe table `published_date|ticker|aspect|sentiment|article_ref`."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [MEMORY_HEADER]
        for ref in sorted(self._by_ref):
            record = self._by_ref[ref]
            for pair in record.pairs:
                lines.append(
                    f"{record.published_date.isoformat()}|{record.ticker}"
                    f"|{pair.aspect}|{pair.sentiment}|{record.article_ref}"
                )
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SentimentMemory":
        memory = cls()
        grouped: dict[str, list[tuple[date, str, str, int]]] = {}
        order: list[str] = []
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or line == MEMORY_HEADER:
                    continue
                parts = line.split("|")
                if len(parts) != 5:
                    raise ParseError("expected 5 pipe-separated fields", line_no)
                raw_date, ticker, aspect, raw_sentiment, ref = parts
                try:
                    row = (date.fromisoformat(raw_date), ticker, aspect, int(raw_sentiment))
                except ValueError as exc:
                    raise ParseError(str(exc), line_no) from None
                if ref not in grouped:
                    order.append(ref)
                grouped.setdefault(ref, []).append(row)
        for ref in order:
            rows = grouped[ref]
            pairs = tuple(
                AspectSentiment(
                    aspect=aspect,
                    sentiment=sentiment,
                    canonical=aspect in ASPECT_VOCABULARY,
                )
                for _, _, aspect, sentiment in rows
            )
            memory.add(
                SentimentRecord(
                    published_date=rows[0][0],
                    ticker=rows[0][1],
                    pairs=pairs,
                    article_ref=ref,
                )
            )
        return memory


def read_news_jsonl(path) -> Iterator[NewsArticle]:
    """Parse line-delimited news records with the five article fields."""
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                yield NewsArticle(
                    published_date=date.fromisoformat(raw["published_date"]),
                    title=raw["title"],
                    description=raw.get("description", ""),
                    content=raw.get("content", ""),
                    source_id=str(raw["source_id"]),
                )
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed news record: {exc}", line_no) from None


def read_alias_csv(path) -> dict[str, str]:
    """Company-name aliases: CSV `name,ticker`."""
    import csv as _csv

    aliases: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ("name", "ticker"):
            raise ParseError("alias header must be name,ticker", line=1)
        for row in reader:
            aliases[row["name"].strip()] = row["ticker"].strip().upper()
    return aliases
