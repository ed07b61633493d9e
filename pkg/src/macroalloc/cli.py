"""Thin HTTP client for the macroalloc service.

Every subcommand is one request against the service API. By default the
app runs in-process over an ASGI transport, so single-machine use needs
no running server; pass --server to target a deployed instance.

Exit codes: 0 success (and clean audit), 1 usage, 2 data validation,
3 gateway, 4 audit violation.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys

import httpx

from .ops import INGEST_KINDS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_GATEWAY = 3
EXIT_AUDIT = 4

_EXIT_BY_KIND = {"usage": EXIT_USAGE, "data": EXIT_DATA, "gateway": EXIT_GATEWAY, "audit": EXIT_AUDIT}

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that honors the exit-code contract (usage errors -> 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class CliFailure(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _make_client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server.rstrip("/"), timeout=None)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.AsyncClient(
        transport=transport, base_url="http://macroalloc.local", timeout=None
    )


async def _request(client: httpx.AsyncClient, method: str, path: str, payload: dict | None):
    try:
        response = await client.request(method, path, json=payload)
    except httpx.HTTPError as exc:
        raise CliFailure(f"service unreachable: {exc}", EXIT_USAGE) from exc
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail")
        except json.JSONDecodeError:
            detail = None
        if isinstance(detail, dict) and "kind" in detail:
            kind = detail["kind"]
            message = detail.get("message", "")
        else:
            kind = "usage" if response.status_code < 500 else "gateway"
            message = response.text[:500]
        raise CliFailure(
            f"{kind} error: {message}", _EXIT_BY_KIND.get(kind, EXIT_USAGE)
        )
    return response.json()


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


async def _run_command(args) -> int:
    async with _make_client(args.server) as client:
        if args.command == "ingest":
            body = await _request(
                client,
                "POST",
                "/ingest",
                {"kind": args.kind, "input_path": args.input, "out_path": args.out},
            )
            _emit(body)
            return EXIT_OK if body["clean"] else EXIT_DATA
        if args.command == "analyze-sentiment":
            body = await _request(
                client, "POST", "/sentiment/analyze", {"config_path": args.config}
            )
            _emit(body)
            return EXIT_OK
        if args.command == "summarize-fomc":
            body = await _request(
                client, "POST", "/fomc/summarize", {"config_path": args.config}
            )
            _emit(body)
            return EXIT_OK
        if args.command == "backtest":
            body = await _request(
                client, "POST", "/backtests", {"config_path": args.config}
            )
            _emit(body)
            return EXIT_OK if body["audit_clean"] else EXIT_AUDIT
        if args.command == "compare":
            body = await _request(
                client,
                "POST",
                "/compare",
                {"run_dir_a": args.run_dir_a, "run_dir_b": args.run_dir_b},
            )
            print(body["markdown"])
            _emit({"deltas": body["deltas"]})
            return EXIT_OK
        if args.command == "audit":
            body = await _request(client, "POST", "/audit", {"run_dir": args.run_dir})
            _emit(body)
            return EXIT_OK if body["clean"] else EXIT_AUDIT
    raise CliFailure(f"unknown command {args.command!r}", EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="macroalloc", description=__doc__)
    parser.add_argument(
        "--server",
        default=None,
        help="service base URL; default runs the app in-process",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate an input file and write its canonical store")
    p.add_argument("kind", choices=INGEST_KINDS)
    p.add_argument("input")
    p.add_argument("--out", required=True, help="canonical store destination")

    p = sub.add_parser("analyze-sentiment", help="cache-aware batch sentiment extraction")
    p.add_argument("--config", required=True)

    p = sub.add_parser("summarize-fomc", help="summarize minutes listed in the config's fomc_index")
    p.add_argument("--config", required=True)

    p = sub.add_parser("backtest", help="run a backtest from a config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("compare", help="side-by-side metrics of two run dirs")
    p.add_argument("run_dir_a")
    p.add_argument("run_dir_b")

    p = sub.add_parser("audit", help="look-ahead audit of a completed run dir")
    p.add_argument("run_dir")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK
    try:
        return asyncio.run(_run_command(args))
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
