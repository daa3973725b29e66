"""Chat-completion proposer: prompt rendering, wire client, reply validation.

Summaries and the discrepancy report are serialized to JSON, embedded in
editable text templates, and POSTed to a chat-completion endpoint. The
reply is parsed as JSON (component sets or proposals), validated against
the schema, and counts are rescaled so every accepted batch sums to the
requested size. Invalid replies never reach the sampler: structural
problems raise MalformedReply and are retried, single infeasible proposals
are dropped and the remainder rescaled.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from importlib import resources
from string import Template

import numpy as np
import requests

from . import errors
from .proposals import (
    ComponentContext,
    FixedCategory,
    Proposal,
    ProposerContext,
    Range,
    validate_proposal,
)
from .discrepancy import DiscrepancyReport
from .schema import Discrete, VariableSchema, schema_to_json
from .summaries import StructuralComponent, summary_payload

log = logging.getLogger(__name__)

TOKEN_ENV = "STATSYNTH_API_TOKEN"

# cells kept per report unit at the second truncation stage
TOP_GAP_CELLS = 10


@dataclass(frozen=True)
class ProposerConfig:
    """Wire settings for the chat-completion endpoint.

    The bearer token is read from the STATSYNTH_API_TOKEN environment
    variable, never from configuration, so it cannot leak into logs or
    checkpoint files. prompt_budget caps the total rendered prompt length
    in characters; render_prompt truncates toward it in stages.
    """

    endpoint: str
    model: str
    temperature: float = 0.8
    max_retries: int = 3
    backoff: float = 1.0
    timeout: float = 30.0
    prompt_budget: int = 40_000

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise errors.ConfigError("endpoint must be a non-empty URL")
        if not self.model:
            raise errors.ConfigError("model must be a non-empty name")
        if self.temperature < 0:
            raise errors.ConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise errors.ConfigError("max_retries must be >= 0")
        if self.backoff < 0:
            raise errors.ConfigError("backoff must be >= 0")
        if self.timeout <= 0:
            raise errors.ConfigError("timeout must be positive")
        if self.prompt_budget < 1000:
            raise errors.ConfigError("prompt_budget must be >= 1000 characters")


# ---------------------------------------------------------------------------
# prompt rendering


def _template(name: str) -> Template:
    text = resources.files("statsynth").joinpath("templates", f"{name}.txt").read_text()
    return Template(text)


def _dumps(doc: object) -> str:
    return json.dumps(doc, sort_keys=True, separators=(", ", ": "))


def report_payload(report: DiscrepancyReport, top_cells: int | None = None) -> dict:
    """Report as JSON-ready dict; top_cells keeps only the largest gaps."""
    units = []
    for name, unit in report.units.items():
        cells = list(unit.cells)
        truncated = False
        if top_cells is not None and len(cells) > top_cells:
            cells = sorted(cells, key=lambda c: (-abs(c.gap), str(c.label)))[:top_cells]
            truncated = True
        entry: dict = {
            "unit": name,
            "delta": unit.value,
            "cells": [
                {
                    "label": list(c.label) if isinstance(c.label, tuple) else c.label,
                    "real": c.real,
                    "synth": c.synth,
                    "gap": c.gap,
                }
                for c in cells
            ],
        }
        if unit.empty_synth:
            entry["empty_synth"] = True
        if truncated:
            entry["truncated"] = True
        units.append(entry)
    return {"units": units}


def _components_payload(components) -> list[dict]:
    return [{"variables": list(c.variables)} for c in components]


def render_prompt(template: str, ctx, budget: int = 40_000) -> list[dict]:
    """Render the named prompt to a chat message list, byte-deterministic.

    When the rendered text exceeds budget, sub-bin detail rows leave the
    summaries first, then report units keep only their TOP_GAP_CELLS
    largest gaps; if still too large, PromptTooLarge.
    """
    if template == "proposal":
        stages = [
            {"include_detail": True, "top_cells": None},
            {"include_detail": False, "top_cells": None},
            {"include_detail": False, "top_cells": TOP_GAP_CELLS},
        ]
        for stage in stages:
            summaries = summary_payload(ctx.real_summaries, stage["include_detail"])
            if not stage["include_detail"]:
                summaries["truncated_detail"] = True
            report = report_payload(ctx.report, stage["top_cells"])
            user = _template("proposal_user").substitute(
                schema=_dumps(schema_to_json(ctx.schema)),
                summaries=_dumps(summaries),
                report=_dumps(report),
                components=_dumps(_components_payload(ctx.components)),
                k=str(ctx.k),
                batch_size=str(ctx.batch_size),
                guidance=ctx.guidance,
            )
            messages = [
                {"role": "system", "content": _template("proposal_system").substitute()},
                {"role": "user", "content": user},
            ]
            if sum(len(m["content"]) for m in messages) <= budget:
                if stage != stages[0]:
                    log.warning("prompt truncated to fit %d character budget", budget)
                return messages
        raise errors.PromptTooLarge(
            f"proposal prompt exceeds {budget} characters after truncation")
    if template == "copula":
        summaries = {"marginals": summary_payload(ctx.real_marginals)["marginals"]}
        user = _template("copula_user").substitute(
            schema=_dumps(schema_to_json(ctx.schema)),
            summaries=_dumps(summaries),
            n_components=str(ctx.n_components),
        )
        messages = [
            {"role": "system", "content": _template("copula_system").substitute()},
            {"role": "user", "content": user},
        ]
        if sum(len(m["content"]) for m in messages) > budget:
            raise errors.PromptTooLarge(
                f"copula prompt exceeds {budget} characters")
        return messages
    raise errors.ConfigError(f"unknown prompt template {template!r}")


# ---------------------------------------------------------------------------
# reply parsing


def _strip_fences(text: str) -> str:
    s = text.strip()
    if s.startswith("```") and s.endswith("```"):
        first = s.find("\n")
        if first != -1:
            s = s[first + 1:-3].strip()
    return s


def _reply_json(text: str) -> object:
    try:
        return json.loads(_strip_fences(text))
    except json.JSONDecodeError as exc:
        raise errors.MalformedReply(f"reply is not JSON: {exc}") from exc


def _rescale_counts(weights: list[int], total: int) -> list[int]:
    """Proportional largest-remainder allocation keeping every entry >= 1."""
    raw = np.array(weights, dtype=float)
    raw = raw / raw.sum() * total
    out = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - out), kind="stable")
    for i in order[: total - int(out.sum())]:
        out[i] += 1
    while (out == 0).any():
        out[int(out.argmax())] -= 1
        out[int(np.flatnonzero(out == 0)[0])] += 1
    return out.tolist()


def _assignment_from_json(schema: VariableSchema, name: str, value: object):
    kind = schema.kind(name)
    if isinstance(kind, Discrete):
        if not isinstance(value, str):
            raise errors.MalformedReply(
                f"{name}: discrete assignment must be a string, got {value!r}")
        return FixedCategory(value)
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
        raise errors.MalformedReply(
            f"{name}: continuous assignment must be [lo, hi], got {value!r}")
    return Range(float(value[0]), float(value[1]))


def parse_proposal_reply(text: str, ctx: ProposerContext) -> list[Proposal]:
    """Validate a proposal reply; drop infeasible entries, rescale counts.

    Shape violations (wrong JSON, missing variables, bad num) raise
    MalformedReply so the caller can re-ask. Schema violations inside an
    otherwise well-formed proposal (unknown category, range out of bounds)
    drop just that proposal.
    """
    doc = _reply_json(text)
    if not isinstance(doc, list) or not doc:
        raise errors.MalformedReply("reply must be a non-empty JSON array of proposals")
    if len(doc) > ctx.k:
        raise errors.MalformedReply(f"{len(doc)} proposals returned, at most {ctx.k} requested")
    candidates: list[Proposal] = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise errors.MalformedReply(f"proposal {i} is not an object")
        assignments = item.get("assignments")
        if not isinstance(assignments, dict):
            raise errors.MalformedReply(f"proposal {i} lacks an assignments object")
        missing = set(ctx.schema.names) - set(assignments)
        if missing:
            raise errors.MalformedReply(f"proposal {i} misses variables {sorted(missing)}")
        extra = set(assignments) - set(ctx.schema.names)
        if extra:
            raise errors.MalformedReply(f"proposal {i} names unknown variables {sorted(extra)}")
        num = item.get("num")
        if not isinstance(num, int) or isinstance(num, bool) or num < 1:
            raise errors.MalformedReply(f"proposal {i} needs a positive integer num, got {num!r}")
        rationale = item.get("rationale", "")
        if not isinstance(rationale, str):
            raise errors.MalformedReply(f"proposal {i} rationale must be a string")
        candidates.append(Proposal(
            {n: _assignment_from_json(ctx.schema, n, v) for n, v in assignments.items()},
            num, rationale))
    kept: list[Proposal] = []
    for i, p in enumerate(candidates):
        try:
            validate_proposal(p, ctx.schema)
        except errors.InfeasibleProposal as exc:
            log.warning("dropping infeasible proposal %d: %s", i, exc)
            continue
        kept.append(p)
    if not kept:
        raise errors.MalformedReply("every proposal in the reply was infeasible")
    counts = _rescale_counts([p.num for p in kept], ctx.batch_size)
    return [Proposal(p.assignments, c, p.rationale) for p, c in zip(kept, counts)]


def _max_components(n_vars: int) -> int:
    return sum(math.comb(n_vars, size) for size in (2, 3, 4))


def parse_copula_reply(text: str, ctx: ComponentContext) -> list[StructuralComponent]:
    doc = _reply_json(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("components"), list):
        raise errors.MalformedReply('reply must be {"components": [...]}')
    needed = min(ctx.n_components, _max_components(len(ctx.schema.names)))
    out: list[StructuralComponent] = []
    seen: set[frozenset[str]] = set()
    for i, item in enumerate(doc["components"]):
        if not isinstance(item, dict) or not isinstance(item.get("variables"), list):
            raise errors.MalformedReply(f'component {i} must be {{"variables": [...]}}')
        names = item["variables"]
        if not all(isinstance(n, str) for n in names):
            raise errors.MalformedReply(f"component {i} variables must be strings")
        unknown = set(names) - set(ctx.schema.names)
        if unknown:
            raise errors.MalformedReply(f"component {i} names unknown variables {sorted(unknown)}")
        try:
            comp = StructuralComponent(tuple(names))
        except errors.SchemaError as exc:
            raise errors.MalformedReply(f"component {i}: {exc}") from exc
        key = frozenset(comp.variables)
        if key in seen:
            raise errors.MalformedReply(f"component {i} repeats {comp.id}")
        seen.add(key)
        out.append(comp)
        if len(out) == needed:
            break
    if len(out) < needed:
        raise errors.MalformedReply(f"{len(out)} components returned, {needed} required")
    return out


# ---------------------------------------------------------------------------
# wire client and proposer


class ChatClient:
    """One POST per complete() call; retries live in LlmProposer."""

    def __init__(self, config: ProposerConfig) -> None:
        self.config = config

    def complete(self, messages: list[dict]) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        try:
            resp = requests.post(self.config.endpoint, json=body,
                                 headers=headers, timeout=self.config.timeout)
        except requests.RequestException as exc:
            raise errors.LlmUnavailable(f"endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise errors.LlmUnavailable(f"endpoint returned HTTP {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise errors.MalformedReply(f"reply envelope is not chat-shaped: {exc!r}") from exc
        if not isinstance(content, str):
            raise errors.MalformedReply("reply content is not text")
        return content


class LlmProposer:
    """Proposer backed by a chat-completion endpoint."""

    name = "llm"

    def __init__(self, config: ProposerConfig, client: ChatClient | None = None) -> None:
        self.config = config
        self.client = client if client is not None else ChatClient(config)

    def _ask(self, messages: list[dict], parse):
        last: errors.ProposerError | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = self.config.backoff * 2 ** (attempt - 1)
                if delay:
                    time.sleep(delay)
            try:
                result = parse(self.client.complete(messages))
            except (errors.LlmUnavailable, errors.MalformedReply) as exc:
                last = exc
                log.warning("attempt %d/%d failed: %s",
                            attempt + 1, self.config.max_retries + 1, exc)
                continue
            if attempt:
                log.info("succeeded after %d retries", attempt)
            return result
        assert last is not None
        raise last

    def infer_components(self, ctx: ComponentContext) -> list[StructuralComponent]:
        if len(ctx.schema.names) < 2:
            raise errors.TooFewVariables("need at least 2 variables to infer components")
        messages = render_prompt("copula", ctx, self.config.prompt_budget)
        return self._ask(messages, lambda text: parse_copula_reply(text, ctx))

    def propose(self, ctx: ProposerContext) -> list[Proposal]:
        messages = render_prompt("proposal", ctx, self.config.prompt_budget)
        return self._ask(messages, lambda text: parse_proposal_reply(text, ctx))
