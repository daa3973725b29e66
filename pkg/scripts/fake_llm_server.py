#!/usr/bin/env python3
"""Stand up a canned chat-completion endpoint for trying out llm mode.

The replies are schema-valid but statistically naive: every component
request gets the variable pairs in schema order, every proposal request
gets a single proposal spanning each variable's first category or full
range. Enough for the synthesize CLI to complete end to end without a
real model behind it.

Scenarios mirror the robustness tests: valid (every reply parses), flaky
(the first reply is garbage, so the client succeeds only via its retry),
broken (every reply is garbage, so the run aborts with exit 3).
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from pathlib import Path

from statsynth.reference import ecommerce_schema
from statsynth.schema import Discrete, load_schema
from statsynth.testing import ScriptedChatServer


def copula_reply(schema) -> dict:
    pairs = itertools.combinations(schema.names, 2)
    return {"components": [{"variables": list(p)} for p in pairs]}


def proposal_reply(schema) -> str:
    assignments = {}
    for var in schema:
        if isinstance(var.kind, Discrete):
            assignments[var.name] = var.kind.categories[0]
        else:
            assignments[var.name] = [var.kind.lower, var.kind.upper]
    return json.dumps([{"assignments": assignments, "num": 1,
                        "rationale": "canned reply"}])


def build_replies(schema, scenario: str, iterations: int) -> list:
    if scenario == "broken":
        return ["this reply never parses"]
    pair = [json.dumps(copula_reply(schema)), proposal_reply(schema)]
    replies = pair * iterations
    if scenario == "flaky":
        replies = ["this reply never parses"] + replies
    return replies


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--schema", type=Path, default=None,
                   help="schema JSON to build replies for (default: built-in reference)")
    p.add_argument("--scenario", choices=("valid", "flaky", "broken"), default="valid")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--iterations", type=int, default=100,
                   help="how many loop iterations the script can serve")
    args = p.parse_args(argv)

    schema = load_schema(args.schema) if args.schema else ecommerce_schema()
    replies = build_replies(schema, args.scenario, args.iterations)
    with ScriptedChatServer(replies, port=args.port) as server:
        # flush so the banner arrives even when stdout is a pipe
        print(f"serving scenario '{args.scenario}' at {server.endpoint}", flush=True)
        print("point the client at it, for example:")
        print("  STATSYNTH_API_TOKEN=dummy statsynth synthesize \\")
        print("    --real real.csv --schema schema.json --out out/ \\")
        print(f"    --proposer llm --endpoint {server.endpoint} --model canned", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            print(f"\n{len(server.requests)} requests served")
    return 0


if __name__ == "__main__":
    sys.exit(main())
