"""FastAPI service wrapping the core operations.

The service owns no state beyond the filesystem: requests carry paths,
responses carry reports. Long jobs (batch analysis, live backtests) run
synchronously in the request; deploy behind a worker pool when needed.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, GatewayError, MacroallocError
from ..ops import (
    analyze_sentiment_batch,
    audit_run,
    build_gateway,
    compare_runs,
    ingest_file,
    run_backtest,
    summarize_fomc_batch,
)
from ..runconfig import load_run_config
from .models import (
    AuditRequest,
    AuditResponse,
    AuditViolationModel,
    BacktestResponse,
    CompareRequest,
    CompareResponse,
    ConfigRequest,
    FomcSummarizeResponse,
    HealthResponse,
    IngestRequest,
    IngestResponse,
    RejectedRow,
    SentimentAnalyzeResponse,
)

log = logging.getLogger(__name__)

_STATUS_BY_KIND = {"usage": 400, "data": 422, "gateway": 502, "audit": 409}


def create_app() -> FastAPI:
    app = FastAPI(title="macroalloc", version=__version__)

    @app.exception_handler(MacroallocError)
    async def domain_error_handler(request: Request, exc: MacroallocError):
        status = _STATUS_BY_KIND.get(exc.kind, 422)
        return JSONResponse(
            status_code=status,
            content={"detail": {"kind": exc.kind, "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.post("/ingest", response_model=IngestResponse)
    def ingest(request: IngestRequest) -> IngestResponse:
        report = ingest_file(request.kind, request.input_path, request.out_path)
        return IngestResponse(
            kind=report.kind,
            total=report.total,
            accepted=report.accepted,
            rejected=[RejectedRow(line=l, reason=r) for l, r in report.rejected],
            store_path=report.store_path,
            clean=report.clean,
        )

    @app.post("/sentiment/analyze", response_model=SentimentAnalyzeResponse)
    def sentiment_analyze(request: ConfigRequest) -> SentimentAnalyzeResponse:
        config = load_run_config(request.config_path)
        if config.data.news is None:
            raise ConfigError("config missing data.news for sentiment analysis")
        gateway = build_gateway(config)
        stats = analyze_sentiment_batch(
            config.data.news,
            config.data.sentiment_memory,
            gateway,
            config.gateway.sentiment_model,
        )
        return SentimentAnalyzeResponse(**stats.to_dict())

    @app.post("/fomc/summarize", response_model=FomcSummarizeResponse)
    def fomc_summarize(request: ConfigRequest) -> FomcSummarizeResponse:
        config = load_run_config(request.config_path)
        if config.data.fomc_index is None:
            raise ConfigError("config missing data.fomc_index for FOMC summarization")
        gateway = build_gateway(config)
        stats = summarize_fomc_batch(
            config.data.fomc_index,
            config.data.fomc_summaries,
            gateway,
            config.gateway.sentiment_model,
        )
        return FomcSummarizeResponse(**stats.to_dict())

    @app.post("/backtests", response_model=BacktestResponse)
    def backtest(request: ConfigRequest) -> BacktestResponse:
        config = load_run_config(request.config_path)
        summary = run_backtest(config)
        return BacktestResponse(**summary.to_dict())

    @app.post("/compare", response_model=CompareResponse)
    def compare(request: CompareRequest) -> CompareResponse:
        result = compare_runs(request.run_dir_a, request.run_dir_b)
        return CompareResponse(**result.to_dict())

    @app.post("/audit", response_model=AuditResponse)
    def audit(request: AuditRequest) -> AuditResponse:
        report = audit_run(request.run_dir)
        return AuditResponse(
            clean=report.clean,
            checked_prompts=report.checked_prompts,
            checked_snapshots=report.checked_snapshots,
            violations=[
                AuditViolationModel(artifact=v.artifact, detail=v.detail)
                for v in report.violations
            ],
        )

    return app
