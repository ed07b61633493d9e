"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ErrorDetail(BaseModel):
    kind: str  # usage | data | gateway | audit
    message: str


class IngestRequest(BaseModel):
    kind: str = Field(description="bars | universe | macro | fomc | news")
    input_path: str
    out_path: str


class RejectedRow(BaseModel):
    line: int
    reason: str


class IngestResponse(BaseModel):
    kind: str
    total: int
    accepted: int
    rejected: list[RejectedRow]
    store_path: str
    clean: bool


class ConfigRequest(BaseModel):
    config_path: str


class SentimentAnalyzeResponse(BaseModel):
    articles: int
    analyzed: int
    cached: int
    no_entity: int
    failed: int
    gateway_calls: int
    memory_path: str


class FomcSummarizeResponse(BaseModel):
    documents: int
    summarized: int
    cached: int
    failed: int
    gateway_calls: int
    summaries_path: str


class BacktestResponse(BaseModel):
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


class CompareRequest(BaseModel):
    run_dir_a: str
    run_dir_b: str


class CompareResponse(BaseModel):
    rows: list[dict]
    deltas: dict
    markdown: str


class AuditRequest(BaseModel):
    run_dir: str


class AuditViolationModel(BaseModel):
    artifact: str
    detail: str


class AuditResponse(BaseModel):
    clean: bool
    checked_prompts: int
    checked_snapshots: int
    violations: list[AuditViolationModel]
