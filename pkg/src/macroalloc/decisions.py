"""Decision agent: reflection text -> validated structured trades.

A lightweight instruction-following model turns the free-text ranking
into a JSON array; everything after that is strict local validation.
Validation is total: bad entries are dropped with a logged reason, never
raised, so arbitrary model output degrades a day to a hold at worst.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum

from .errors import ExtractionError, GatewayError
from .gateway import ChatGateway, ChatRequest, extract_json
from .ranking import CROSS_SECTIONAL, RankingReflection, TOP_DOWN

log = logging.getLogger(__name__)

# Fixed sizing for the baseline strategy: every position is 1% of equity.
CROSS_SECTIONAL_SIZE_PCT = 1.0
# Ceiling on a single top-down recommendation so one outsized suggestion
# cannot dominate the book; configurable at the engine level.
TOP_DOWN_MAX_SIZE_PCT = 20.0

DECISION_PROMPT_TEMPLATE = """\
You are a trading assistant. Convert the following stock ranking reflection into structured trade decisions.

Respond ONLY with a JSON array, no additional text or markdown. Each element must be an object with exactly these fields:
- "ticker": the stock ticker (string)
- "action": one of "open_long", "open_short", "close"
- "size_pct": position size as a percent of current equity (number; omit for close)

Derive open_long entries from the reflection's long candidates in their listed order, open_short entries from the short candidates in their listed order, and close entries for any existing positions the reflection recommends exiting. Return [] if the reflection recommends no trades.

Reflection:
{reflection}
"""


class Action(str, Enum):
    OPEN_LONG = "open_long"
    OPEN_SHORT = "open_short"
    CLOSE = "close"


_OPEN_ACTIONS = (Action.OPEN_LONG, Action.OPEN_SHORT)


@dataclass(frozen=True)
class TradeDecision:
    ticker: str
    action: Action
    size_pct: float | None = None
    rationale_ref: str = ""


@dataclass(frozen=True)
class DecisionSet:
    decision_date: date
    decisions: tuple[TradeDecision, ...]
    reflection_hash: str
    failed: bool = False
    dropped: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.decisions)


def build_decision_prompt(reflection_text: str) -> str:
    return DECISION_PROMPT_TEMPLATE.replace("{reflection}", reflection_text)


def _coerce_raw(payload) -> list[dict]:
    if isinstance(payload, dict):
        # Some models wrap the array in an object: {"decisions": [...]}.
        for key in ("decisions", "trades"):
            if isinstance(payload.get(key), list):
                payload = payload[key]
                break
        else:
            payload = [payload]
    if not isinstance(payload, list):
        return []
    return [item for item in payload if isinstance(item, dict)]


def validate_decisions(
    raw: list[dict],
    universe: frozenset[str] | set[str],
    mode: str,
    decision_date: date,
    reflection_hash: str = "",
    max_size_pct: float = TOP_DOWN_MAX_SIZE_PCT,
) -> DecisionSet:
    """Total validation of parsed decisions.

    Drops tickers outside the universe, resolves long/short duplicates by
    first occurrence (reflection rank order proxies the composite score),
    forces every cross-sectional open to the fixed 1% size and clamps
    top-down sizes into (0, max]. Never raises.
    """
    accepted: list[TradeDecision] = []
    dropped: list[str] = []
    first_open: dict[str, Action] = {}
    closed: set[str] = set()

    def drop(reason: str) -> None:
        dropped.append(reason)
        log.info("decision dropped on %s: %s", decision_date, reason)

    for item in raw:
        ticker = item.get("ticker")
        if not isinstance(ticker, str) or not ticker.strip():
            drop(f"missing/invalid ticker in {item!r}")
            continue
        ticker = ticker.strip().upper()
        action_raw = item.get("action")
        try:
            action = Action(action_raw)
        except ValueError:
            drop(f"{ticker}: unknown action {action_raw!r}")
            continue
        if ticker not in universe:
            drop(f"{ticker}: not in universe on {decision_date}")
            continue

        if action is Action.CLOSE:
            if ticker in closed:
                drop(f"{ticker}: duplicate close")
                continue
            closed.add(ticker)
            accepted.append(
                TradeDecision(ticker=ticker, action=action, size_pct=None)
            )
            continue

        if ticker in first_open:
            kept = first_open[ticker].value
            drop(f"{ticker}: duplicate open (kept first occurrence {kept})")
            continue

        size = item.get("size_pct")
        if mode == CROSS_SECTIONAL:
            size_pct = CROSS_SECTIONAL_SIZE_PCT
        else:
            if isinstance(size, bool) or not isinstance(size, (int, float)):
                drop(f"{ticker}: missing/invalid size_pct {size!r}")
                continue
            size_pct = float(size)
            if not math.isfinite(size_pct) or size_pct <= 0:
                drop(f"{ticker}: non-positive size_pct {size!r}")
                continue
            if size_pct > max_size_pct:
                log.info(
                    "clamping %s size %.2f%% to %.2f%%", ticker, size_pct, max_size_pct
                )
                size_pct = max_size_pct

        first_open[ticker] = action
        accepted.append(
            TradeDecision(ticker=ticker, action=action, size_pct=size_pct)
        )

    return DecisionSet(
        decision_date=decision_date,
        decisions=tuple(accepted),
        reflection_hash=reflection_hash,
        failed=False,
        dropped=tuple(dropped),
    )


def parse_reflection(
    reflection: RankingReflection,
    gateway: ChatGateway,
    universe: frozenset[str] | set[str],
    mode: str,
    model_id: str,
    max_size_pct: float = TOP_DOWN_MAX_SIZE_PCT,
) -> DecisionSet:
    """Gateway pass over the reflection, then strict validation.

    Extraction failure (after the shared JSON repair ladder) yields an
    empty DecisionSet flagged failed, which the engine treats as a hold.
    """
    request = ChatRequest(
        messages=(("user", build_decision_prompt(reflection.raw_text)),),
        model_id=model_id,
        request_tag=f"decision/{mode}",
    )
    try:
        response = gateway.complete(request)
        payload = extract_json(response.text)
    except ExtractionError as exc:
        log.warning(
            "decision parse failed on %s: %s", reflection.decision_date, exc
        )
        return DecisionSet(
            decision_date=reflection.decision_date,
            decisions=(),
            reflection_hash=reflection.prompt_hash,
            failed=True,
        )
    raw = _coerce_raw(payload)
    return validate_decisions(
        raw,
        universe=universe,
        mode=mode,
        decision_date=reflection.decision_date,
        reflection_hash=reflection.prompt_hash,
        max_size_pct=max_size_pct,
    )


def decision_set_to_json(decisions: DecisionSet, strategy: str) -> str:
    """Archive schema: {date, strategy, decisions:[{ticker, action, size_pct}]}."""
    payload = {
        "date": decisions.decision_date.isoformat(),
        "strategy": strategy,
        "decisions": [
            {
                "ticker": d.ticker,
                "action": d.action.value,
                "size_pct": d.size_pct,
            }
            for d in decisions.decisions
        ],
        "failed": decisions.failed,
        "reflection_hash": decisions.reflection_hash,
    }
    return json.dumps(payload, sort_keys=True, indent=2)
