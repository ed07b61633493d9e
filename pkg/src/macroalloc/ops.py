"""Command operations behind the service endpoints and CLI subcommands:
ingestion, cached batch analysis, backtest execution, comparison, audit.

Every operation is idempotent on unchanged inputs: canonical stores and
run directories are rewritten byte-identically, and cached analyses make
zero gateway calls on a rerun.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .backtest import BacktestEngine, BacktestResult, look_ahead_audit
from .errors import (
    ConfigError,
    ExtractionError,
    GatewayError,
    MacroallocError,
    ParseError,
    ValidationError,
)
from .gateway import Cassette, ChatGateway
from .macro import (
    FomcStore,
    MacroStore,
    macro_observation_from_row,
    minutes_cache_key,
    read_fomc_index,
    read_fomc_summaries,
    read_macro_csv,
    summarize_fomc,
    write_fomc_summaries,
    FOMC_INDEX_FIELDS,
    MACRO_FIELDS,
)
from .market_data import (
    BAR_FIELDS,
    UNIVERSE_FIELDS,
    bar_from_row,
    load_market_data,
    read_bars_csv,
    read_universe_csv,
    universe_event_from_row,
)
from .metrics import MetricSet, comparison_table
from .ranking import SectorMap
from .runconfig import RunConfig
from .sentiment import (
    NewsArticle,
    SentimentMemory,
    analyze_article,
    read_alias_csv,
    read_news_jsonl,
)

log = logging.getLogger(__name__)

INGEST_KINDS = ("bars", "universe", "macro", "fomc", "news")

CHECKPOINT_EVERY = 50


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# -- ingestion ----------------------------------------------------------------


@dataclass
class IngestReport:
    kind: str
    total: int
    accepted: int
    rejected: list[tuple[int, str]]
    store_path: str

    @property
    def clean(self) -> bool:
        return not self.rejected

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "total": self.total,
            "accepted": self.accepted,
            "rejected": [
                {"line": line, "reason": reason} for line, reason in self.rejected
            ],
            "store_path": self.store_path,
            "clean": self.clean,
        }


def _ingest_bars(input_path: Path, out_path: Path) -> IngestReport:
    accepted = []
    rejected: list[tuple[int, str]] = []
    seen: set[tuple[str, date]] = set()
    total = 0
    with open(input_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != BAR_FIELDS:
            raise ParseError(f"bars header must be {','.join(BAR_FIELDS)}", line=1)
        for row in reader:
            total += 1
            line = reader.line_num
            try:
                bar = bar_from_row(row, line)
            except (ParseError, ValidationError) as exc:
                rejected.append((line, str(exc)))
                continue
            key = (bar.ticker, bar.date)
            if key in seen:
                rejected.append((line, f"duplicate (ticker,date) {bar.ticker} {bar.date}"))
                continue
            seen.add(key)
            accepted.append(bar)
    accepted.sort(key=lambda b: (b.date, b.ticker))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BAR_FIELDS)
        for b in accepted:
            writer.writerow(
                [b.ticker, b.date.isoformat(), b.open, b.high, b.low, b.close, b.volume]
            )
    return IngestReport("bars", total, len(accepted), rejected, str(out_path))


def _ingest_universe(input_path: Path, out_path: Path) -> IngestReport:
    accepted = []
    rejected: list[tuple[int, str]] = []
    total = 0
    with open(input_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != UNIVERSE_FIELDS:
            raise ParseError(
                f"universe header must be {','.join(UNIVERSE_FIELDS)}", line=1
            )
        for seq, row in enumerate(reader):
            total += 1
            try:
                accepted.append(universe_event_from_row(row, reader.line_num, seq))
            except (ParseError, ValidationError) as exc:
                rejected.append((reader.line_num, str(exc)))
    accepted.sort(key=lambda e: (e.effective_date, e.sequence))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(UNIVERSE_FIELDS)
        for e in accepted:
            action, ticker = ("ADD", e.added) if e.added else ("REMOVE", e.removed)
            writer.writerow([e.effective_date.isoformat(), action, ticker])
    return IngestReport("universe", total, len(accepted), rejected, str(out_path))


def _ingest_macro(input_path: Path, out_path: Path) -> IngestReport:
    accepted = []
    rejected: list[tuple[int, str]] = []
    seen: set[tuple] = set()
    total = 0
    with open(input_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MACRO_FIELDS:
            raise ParseError(f"macro header must be {','.join(MACRO_FIELDS)}", line=1)
        for row in reader:
            total += 1
            line = reader.line_num
            try:
                obs = macro_observation_from_row(row, line)
            except (ParseError, ValidationError) as exc:
                rejected.append((line, str(exc)))
                continue
            key = (obs.indicator, obs.reference_period)
            if key in seen:
                rejected.append(
                    (line, f"duplicate {obs.indicator.value} {obs.reference_period}")
                )
                continue
            seen.add(key)
            accepted.append(obs)
    accepted.sort(key=lambda o: (o.indicator.value, o.reference_period))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MACRO_FIELDS)
        for o in accepted:
            writer.writerow(
                [
                    o.indicator.value,
                    o.reference_period,
                    o.release_date.isoformat(),
                    repr(o.value),
                ]
            )
    return IngestReport("macro", total, len(accepted), rejected, str(out_path))


def _ingest_news(input_path: Path, out_path: Path) -> IngestReport:
    accepted: list[NewsArticle] = []
    rejected: list[tuple[int, str]] = []
    seen: set[str] = set()
    total = 0
    with open(input_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                raw = json.loads(line)
                article = NewsArticle(
                    published_date=date.fromisoformat(raw["published_date"]),
                    title=raw["title"],
                    description=raw.get("description", ""),
                    content=raw.get("content", ""),
                    source_id=str(raw["source_id"]),
                )
            except (
                json.JSONDecodeError,
                KeyError,
                TypeError,
                ValueError,
                ValidationError,
            ) as exc:
                rejected.append((line_no, f"malformed news record: {exc}"))
                continue
            if article.source_id in seen:
                rejected.append((line_no, f"duplicate source_id {article.source_id}"))
                continue
            seen.add(article.source_id)
            accepted.append(article)
    accepted.sort(key=lambda a: (a.published_date, a.source_id))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for a in accepted:
            fh.write(
                json.dumps(
                    {
                        "published_date": a.published_date.isoformat(),
                        "title": a.title,
                        "description": a.description,
                        "content": a.content,
                        "source_id": a.source_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return IngestReport("news", total, len(accepted), rejected, str(out_path))


def _ingest_fomc(input_path: Path, out_dir: Path) -> IngestReport:
    """Copy minutes into the store dir as fomc_<meeting_date>.txt + index."""
    accepted: list[tuple[date, date, Path]] = []
    rejected: list[tuple[int, str]] = []
    total = 0
    base = input_path.parent
    with open(input_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != FOMC_INDEX_FIELDS:
            raise ParseError(
                f"fomc index header must be {','.join(FOMC_INDEX_FIELDS)}", line=1
            )
        for row in reader:
            total += 1
            line = reader.line_num
            try:
                meeting = date.fromisoformat(row["meeting_date"].strip())
                release = date.fromisoformat(row["release_date"].strip())
                source = (base / row["path"].strip()).resolve()
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                rejected.append((line, f"malformed fomc index row: {exc}"))
                continue
            if release < meeting:
                rejected.append((line, f"release {release} precedes meeting {meeting}"))
                continue
            if not source.is_file():
                rejected.append((line, f"minutes file missing: {source}"))
                continue
            if not source.read_text().strip():
                rejected.append((line, f"minutes file empty: {source}"))
                continue
            accepted.append((meeting, release, source))
    accepted.sort(key=lambda t: t[0])
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    for meeting, release, source in accepted:
        name = f"fomc_{meeting.isoformat()}.txt"
        shutil.copyfile(source, out_dir / name)
        index_rows.append((meeting.isoformat(), release.isoformat(), name))
    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOMC_INDEX_FIELDS)
        writer.writerows(index_rows)
    return IngestReport("fomc", total, len(accepted), rejected, str(out_dir))


def ingest_file(kind: str, input_path: str | Path, out_path: str | Path) -> IngestReport:
    """Validate one input of the given kind and write its canonical store."""
    input_path = Path(input_path)
    out_path = Path(out_path)
    if kind not in INGEST_KINDS:
        raise ConfigError(f"unknown ingest kind {kind!r}; expected {INGEST_KINDS}")
    if not input_path.exists():
        raise ConfigError(f"input not found: {input_path}")
    if kind == "bars":
        return _ingest_bars(input_path, out_path)
    if kind == "universe":
        return _ingest_universe(input_path, out_path)
    if kind == "macro":
        return _ingest_macro(input_path, out_path)
    if kind == "news":
        return _ingest_news(input_path, out_path)
    return _ingest_fomc(input_path, out_path)


# -- batch analysis -----------------------------------------------------------


@dataclass
class SentimentBatchStats:
    articles: int = 0
    analyzed: int = 0
    cached: int = 0
    no_entity: int = 0
    failed: int = 0
    gateway_calls: int = 0
    memory_path: str = ""

    def to_dict(self) -> dict:
        return {
            "articles": self.articles,
            "analyzed": self.analyzed,
            "cached": self.cached,
            "no_entity": self.no_entity,
            "failed": self.failed,
            "gateway_calls": self.gateway_calls,
            "memory_path": self.memory_path,
        }


def analyze_sentiment_batch(
    news_path: str | Path,
    memory_path: str | Path,
    gateway: ChatGateway,
    model_id: str,
) -> SentimentBatchStats:
    """Cache-aware batch extraction: articles already in the memory are
    skipped without a gateway call; the memory file is checkpointed every
    few records so an interrupted batch resumes where it stopped."""
    memory_path = Path(memory_path)
    memory = (
        SentimentMemory.load(memory_path) if memory_path.exists() else SentimentMemory()
    )
    stats = SentimentBatchStats(memory_path=str(memory_path))
    calls_before = gateway.calls
    pending = 0
    try:
        for article in read_news_jsonl(news_path):
            stats.articles += 1
            if article.source_id in memory:
                stats.cached += 1
                continue
            try:
                record = analyze_article(article, gateway, model_id)
            except (ExtractionError, ValidationError) as exc:
                log.warning("article %s skipped: %s", article.source_id, exc)
                stats.failed += 1
                continue
            if record is None:
                stats.no_entity += 1
                continue
            memory.add(record)
            stats.analyzed += 1
            pending += 1
            if pending >= CHECKPOINT_EVERY:
                memory.save(memory_path)
                pending = 0
    finally:
        memory.save(memory_path)
    stats.gateway_calls = gateway.calls - calls_before
    return stats


@dataclass
class FomcBatchStats:
    documents: int = 0
    summarized: int = 0
    cached: int = 0
    failed: int = 0
    gateway_calls: int = 0
    summaries_path: str = ""

    def to_dict(self) -> dict:
        return {
            "documents": self.documents,
            "summarized": self.summarized,
            "cached": self.cached,
            "failed": self.failed,
            "gateway_calls": self.gateway_calls,
            "summaries_path": self.summaries_path,
        }


def summarize_fomc_batch(
    index_path: str | Path,
    out_path: str | Path,
    gateway: ChatGateway,
    model_id: str,
    cache_dir: str | Path | None = None,
) -> FomcBatchStats:
    """Summarize every minutes document in the index, caching summaries on
    the minutes' content hash so unchanged documents cost zero calls."""
    from .macro import FomcSummary

    out_path = Path(out_path)
    cache_dir = Path(cache_dir) if cache_dir else out_path.parent / "fomc_cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    stats = FomcBatchStats(summaries_path=str(out_path))
    calls_before = gateway.calls
    summaries = []
    for meeting, release, path in read_fomc_index(index_path):
        stats.documents += 1
        minutes_text = Path(path).read_text()
        cache_path = cache_dir / f"{minutes_cache_key(minutes_text)}.json"
        if cache_path.exists():
            cached = json.loads(cache_path.read_text())
            summaries.append(
                FomcSummary(
                    meeting_date=meeting, release_date=release, text=cached["text"]
                )
            )
            stats.cached += 1
            continue
        summary = summarize_fomc(minutes_text, gateway, meeting, release, model_id)
        cache_path.write_text(json.dumps({"text": summary.text}, sort_keys=True))
        summaries.append(summary)
        stats.summarized += 1
    write_fomc_summaries(out_path, summaries)
    stats.gateway_calls = gateway.calls - calls_before
    return stats


# -- backtest execution ---------------------------------------------------------


@dataclass
class BacktestSummary:
    run_dir: str
    strategy: str
    start: str
    end: str
    n_days: int
    final_equity: str
    pct_change: float
    sharpe: float | None
    total_costs: str
    n_fills: int
    n_skips: int
    hold_days: int
    audit_clean: bool
    audit_violations: int
    manifest_hash: str

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def build_gateway(config: RunConfig, purpose: str = "backtest") -> ChatGateway:
    settings = config.gateway
    cassette = Cassette(settings.cassette) if settings.cassette else None
    import random as _random

    return ChatGateway(
        mode=settings.mode,
        cassette=cassette,
        endpoint=settings.resolved_endpoint(),
        api_key=settings.api_key(),
        timeout=settings.timeout,
        max_retries=settings.max_retries,
        max_inflight=settings.max_inflight,
        rng=_random.Random(config.seed),
    )


def run_backtest(config: RunConfig) -> BacktestSummary:
    """Load stores, run the daily loop, emit the run directory and audit.

    Everything is validated before the run directory is created, so a
    failed precondition (missing store, missing cassette) leaves no
    partial run dir behind.
    """
    config.validate_paths()
    market = load_market_data(
        read_bars_csv(config.data.bars), read_universe_csv(config.data.universe)
    )
    macro_store = MacroStore(read_macro_csv(config.data.macro))
    fomc_store = read_fomc_summaries(config.data.fomc_summaries)
    memory = SentimentMemory.load(config.data.sentiment_memory)
    sector_map = SectorMap.from_csv(config.data.sectors)
    aliases = read_alias_csv(config.data.aliases) if config.data.aliases else {}
    gateway = build_gateway(config)

    config_hash = config.config_hash()
    manifest_extra = {
        "config_hash": config_hash,
        "seed": config.seed,
        "cassette_sha256": file_sha256(config.gateway.cassette)
        if config.gateway.cassette and Path(config.gateway.cassette).is_file()
        else None,
        "stores": {
            "bars": file_sha256(config.data.bars),
            "universe": file_sha256(config.data.universe),
            "macro": file_sha256(config.data.macro),
            "fomc_summaries": file_sha256(config.data.fomc_summaries),
            "sentiment_memory": file_sha256(config.data.sentiment_memory),
            "sectors": file_sha256(config.data.sectors),
        },
    }
    bt = config.backtest
    run_id = f"{bt.strategy}_{bt.start.isoformat()}_{bt.end.isoformat()}_{config_hash[:8]}"
    run_dir = Path(config.output_dir) / run_id
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    (run_dir / "config.resolved").write_text(config.to_canonical_json() + "\n")

    engine = BacktestEngine(
        config=bt,
        market=market,
        macro_store=macro_store,
        fomc_store=fomc_store,
        memory=memory,
        sector_map=sector_map,
        gateway=gateway,
        alias_table=aliases,
        run_dir=run_dir,
        manifest_extra=manifest_extra,
    )
    result = engine.run()
    audit = look_ahead_audit(run_dir)
    (run_dir / "audit.json").write_text(audit.to_json() + "\n")
    (run_dir / "report.md").write_text(
        comparison_table([(result.strategy, result.metrics)])
    )
    from .money import to_cents

    return BacktestSummary(
        run_dir=str(run_dir),
        strategy=result.strategy,
        start=result.start.isoformat(),
        end=result.end.isoformat(),
        n_days=len(result.equity_curve),
        final_equity=str(to_cents(result.equity_curve[-1][1])),
        pct_change=result.metrics.pct_change,
        sharpe=result.metrics.sharpe,
        total_costs=str(to_cents(result.metrics.total_costs)),
        n_fills=len(result.fills),
        n_skips=len(result.skips),
        hold_days=sum(1 for day in result.days if day.held),
        audit_clean=audit.clean,
        audit_violations=len(audit.violations),
        manifest_hash=result.manifest_hash,
    )


# -- comparison & audit ---------------------------------------------------------


@dataclass
class CompareResult:
    rows: list[dict]
    deltas: dict
    markdown: str

    def to_dict(self) -> dict:
        return {"rows": self.rows, "deltas": self.deltas, "markdown": self.markdown}


def _load_run_metrics(run_dir: Path) -> tuple[str, MetricSet, dict]:
    metrics_path = run_dir / "metrics.json"
    if not metrics_path.is_file():
        raise MacroallocError(f"incomplete run dir: missing {metrics_path}")
    raw = json.loads(metrics_path.read_text())
    return raw["strategy"], MetricSet.from_dict(raw), raw


def compare_runs(run_dir_a: str | Path, run_dir_b: str | Path) -> CompareResult:
    """Side-by-side metric comparison of two completed runs."""
    rows = []
    table_rows = []
    for run_dir in (Path(run_dir_a), Path(run_dir_b)):
        if not run_dir.is_dir():
            raise MacroallocError(f"run dir not found: {run_dir}")
        strategy, metrics, raw = _load_run_metrics(run_dir)
        rows.append({"run_dir": str(run_dir), **raw})
        table_rows.append((strategy, metrics))
    (_, m_a), (_, m_b) = table_rows
    deltas = {
        "pct_change": m_b.pct_change - m_a.pct_change,
        "sharpe": None
        if m_a.sharpe is None or m_b.sharpe is None
        else m_b.sharpe - m_a.sharpe,
        "total_costs": str(m_b.total_costs - m_a.total_costs),
    }
    return CompareResult(
        rows=rows, deltas=deltas, markdown=comparison_table(table_rows)
    )


def audit_run(run_dir: str | Path):
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MacroallocError(f"run dir not found: {run_dir}")
    report = look_ahead_audit(run_dir)
    (run_dir / "audit.json").write_text(report.to_json() + "\n")
    return report
