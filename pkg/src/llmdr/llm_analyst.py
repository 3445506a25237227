"""LLM-backed deadlock analyst over an OpenAI-compatible chat-completions endpoint.

Every verdict is validated before use; any failure falls back to the
rule-based analyst and the fallback reason is kept in the report provenance.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional, Sequence

import requests

from .deadlock import (
    AnalysisReport,
    DeadlockGroup,
    DetectionWindow,
    Solution,
    Source,
    analyze_rule_based,
)
from .pathfind import DistanceField

log = logging.getLogger(__name__)

API_KEY_ENV = "LLMDR_API_KEY"

PROMPT_TEMPLATE = """\
You are given {detection_window_length} action logs of agents to detect deadlocks.
Follow these steps in order:
1. Classify deadlocks:
- Detect agents that are exhibiting deadlock conditions.
- Deadlock conditions: No movement, Wandering
- Not deadlocks: Always "Arrived", Arrived and stationary, Consistent movement
2. Group deadlocked agents:
- Group deadlocked agents that are within a 2-Manhattan distance of each other.
- If a deadlocked agent is within a 2-Manhattan distance of an already arrived agent, include them in the same group.
3. Provide solutions:
- Use the "leader" method for independently deadlocked agents or when any agent in the group has a goal more than 8 Manhattan units away.
- Use the "radiation" method when all agents in the group are near their goals (less than 8 units) and likely to experience repeated deadlocks.

Below are the {detection_window_length} action logs of agents.
{detection_window}
Provide the agent group status in this JSON format:
{{
"agent_id": [Agent IDs in the same group],
"solution": "leader" or "radiation"
}}"""

ARRIVED_MARKER = '"Arrived"'


# -- errors ---------------------------------------------------------------


class LlmError(Exception):
    """Base class for analyst call and parse failures."""

    tag = "error"


class NetworkError(LlmError):
    tag = "network"


class RetriesExhausted(LlmError):
    tag = "retries-exhausted"


class HttpStatusError(LlmError):
    tag = "http"


class EnvelopeError(LlmError):
    tag = "envelope"


class VerdictError(LlmError):
    tag = "parse"


class NoJsonError(VerdictError):
    tag = "parse"


class SchemaError(VerdictError):
    tag = "schema"


class UnknownAgentError(SchemaError):
    tag = "unknown-agent"


class OverlapError(VerdictError):
    tag = "overlap"


# -- config and transcript -----------------------------------------------


@dataclass
class LlmConfig:
    endpoint: str = "http://localhost:8000"
    model: str = "gpt-4o"
    api_key: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff: float = 1.0  # first retry delay in seconds, doubled per retry
    requests_per_second: Optional[float] = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)

    @property
    def url(self) -> str:
        return self.endpoint.rstrip("/") + "/v1/chat/completions"


@dataclass
class LlmTranscript:
    prompt: str = ""
    response: Optional[str] = None
    outcome: str = "pending"
    attempts: int = 0
    latency: float = 0.0
    usage: Optional[dict] = None

    def to_json(self) -> dict:
        return asdict(self)


class RateLimiter:
    """Minimum spacing between requests, shared across threads."""

    def __init__(self, requests_per_second: Optional[float]) -> None:
        self.interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            time.sleep(delay)


_limiters: dict[Optional[float], RateLimiter] = {}
_limiters_lock = threading.Lock()


def _limiter_for(rps: Optional[float]) -> RateLimiter:
    with _limiters_lock:
        if rps not in _limiters:
            _limiters[rps] = RateLimiter(rps)
        return _limiters[rps]


# -- prompt ----------------------------------------------------------------


def _fmt(c) -> str:
    return f"({c[0]},{c[1]})"


def render_window(window: DetectionWindow) -> str:
    lines = []
    for row in sorted(window.agents, key=lambda r: r.agent_id):
        steps = []
        for t, (pos, arrived) in enumerate(zip(row.positions, row.arrived)):
            steps.append(f"step {t}: {_fmt(pos)}" + (f" {ARRIVED_MARKER}" if arrived else ""))
        lines.append(f"Agent {row.agent_id}, goal {_fmt(row.goal)}: " + ", ".join(steps))
    return "\n".join(lines)


def render_prompt(window: DetectionWindow) -> str:
    return PROMPT_TEMPLATE.format(
        detection_window_length=window.length, detection_window=render_window(window)
    )


# -- transport --------------------------------------------------------------


def call_llm(config: LlmConfig, prompt: str, transcript: Optional[LlmTranscript] = None) -> str:
    """POST ``prompt`` to the chat-completions endpoint and return the first choice's content.

    429, 5xx and transport failures are retried with exponential backoff,
    ``config.max_retries`` times at most.
    """
    transcript = transcript if transcript is not None else LlmTranscript(prompt=prompt)
    body = {
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    limiter = _limiter_for(config.requests_per_second)

    started = time.monotonic()
    last_error: LlmError = NetworkError("no attempt made")
    try:
        for attempt in range(config.max_retries + 1):
            if attempt:
                time.sleep(config.backoff * 2 ** (attempt - 1))
            limiter.wait()
            transcript.attempts = attempt + 1
            try:
                resp = requests.post(config.url, json=body, headers=headers, timeout=config.timeout)
            except requests.Timeout as exc:
                last_error = NetworkError(f"timeout: {exc}")
                continue
            except requests.ConnectionError as exc:
                last_error = NetworkError(f"connection failed: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RetriesExhausted(
                    f"retries exhausted after {attempt + 1} attempts, last status {resp.status_code}"
                )
                continue
            if not 200 <= resp.status_code < 300:
                raise HttpStatusError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            content, usage = _unwrap(resp)
            transcript.response = content
            transcript.usage = usage
            return content
        raise last_error
    finally:
        transcript.latency = time.monotonic() - started


def _unwrap(resp: requests.Response) -> tuple[str, Optional[dict]]:
    try:
        payload = resp.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise EnvelopeError(f"malformed response envelope: {exc!r}") from None
    if not isinstance(content, str):
        raise EnvelopeError("message content is not a string")
    return content, payload.get("usage")


# -- verdict parsing ----------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?", re.IGNORECASE)


def _first_json(text: str) -> Any:
    text = _FENCE.sub("", text)
    decoder = json.JSONDecoder()
    for m in re.finditer(r"[\[{]", text):
        try:
            value, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict) or (
            isinstance(value, list) and all(isinstance(v, dict) for v in value)
        ):
            return value
    raise NoJsonError("no JSON verdict found in response")


def parse_verdict(raw: str, inspected: Iterable[int]) -> AnalysisReport:
    inspected = frozenset(inspected)
    value = _first_json(raw)
    items = [value] if isinstance(value, dict) else value
    groups = []
    seen: set[int] = set()
    for item in items:
        ids = item.get("agent_id")
        solution = item.get("solution")
        if not isinstance(ids, list) or not ids:
            raise SchemaError(f"agent_id must be a non-empty list, got {ids!r}")
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
            raise SchemaError(f"agent ids must be integers, got {ids!r}")
        if not isinstance(solution, str) or solution.strip().lower() not in ("leader", "radiation"):
            raise SchemaError(f"solution must be 'leader' or 'radiation', got {solution!r}")
        unknown = set(ids) - inspected
        if unknown:
            raise UnknownAgentError(f"agents {sorted(unknown)} were not inspected")
        members = frozenset(ids)
        if members & seen:
            raise OverlapError(f"agents {sorted(members & seen)} appear in two groups")
        seen |= members
        groups.append(DeadlockGroup(members, Solution(solution.strip().lower())))
    return AnalysisReport(tuple(groups), inspected, Source.LLM, "llm")


# -- analyst --------------------------------------------------------------------


def analyze_llm(
    window: DetectionWindow,
    fields: Sequence[DistanceField],
    inspected: Iterable[int],
    config: LlmConfig,
    transcript: Optional[LlmTranscript] = None,
) -> AnalysisReport:
    """Ask the LLM for a verdict; on any failure return the rule-based report instead."""
    inspected = frozenset(inspected)
    if not inspected:
        return AnalysisReport((), inspected, Source.RULE, "empty inspection set")
    prompt = render_prompt(window)
    transcript = transcript if transcript is not None else LlmTranscript()
    transcript.prompt = prompt
    try:
        raw = call_llm(config, prompt, transcript)
        report = parse_verdict(raw, inspected)
    except LlmError as exc:
        transcript.outcome = f"fallback: {exc.tag}: {exc}"
        log.info("LLM analyst fell back to rules (%s): %s", exc.tag, exc)
        fallback = analyze_rule_based(window, fields, inspected)
        return AnalysisReport(fallback.groups, inspected, Source.RULE, f"fallback: {exc.tag}")
    transcript.outcome = "ok"
    return AnalysisReport(report.groups, inspected, Source.LLM, f"llm: {config.model}")


@dataclass
class LlmAnalyst:
    """Analyst object for the episode loop; keeps one transcript per call."""

    config: LlmConfig
    transcript_path: Optional[str] = None
    transcripts: list[LlmTranscript] = field(default_factory=list)
    name: str = "llm"

    _write_lock = threading.Lock()

    def analyze(self, window, fields, inspected) -> AnalysisReport:
        transcript = LlmTranscript()
        report = analyze_llm(window, fields, inspected, self.config, transcript)
        self.transcripts.append(transcript)
        if self.transcript_path:
            with self._write_lock, open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(transcript.to_json()) + "\n")
        return report
