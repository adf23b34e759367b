"""Optional LLM path: prompt templates and a chat-completion client with retries."""

from __future__ import annotations

import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from ..errors import ClientUnavailable, MalformedResponse
from .rules import Caption, Subtype

log = logging.getLogger(__name__)

DIVERGENCE_INSTRUCTION = "generated sentences must exhibit distinct semantics"
ENV_URL, ENV_MODEL, ENV_KEY = "DEGLA_LLM_URL", "DEGLA_LLM_MODEL", "DEGLA_LLM_KEY"
_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)]|\(\d+\))\s*")


@dataclass(frozen=True)
class PromptTemplate:
    subtype: Subtype
    text: str
    examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if "{SENTENCE}" not in self.text or "{EXAMPLES}" not in self.text:
            raise ValueError("prompt template needs {EXAMPLES} and {SENTENCE} placeholders")
        if DIVERGENCE_INSTRUCTION not in self.text.lower():
            raise ValueError(f"prompt template must contain the instruction {DIVERGENCE_INSTRUCTION!r}")

    def render(self, sentence: str) -> str:
        shots = "\n".join(f"{a} => {b}" for a, b in self.examples)
        # plain replace: templates may legitimately contain other braces
        return self.text.replace("{EXAMPLES}", shots).replace("{SENTENCE}", sentence)


def _parse_examples(raw: str) -> tuple[tuple[str, str], ...]:
    pairs = []
    for line in raw.splitlines():
        if "=>" in line:
            a, b = line.split("=>", 1)
            pairs.append((a.strip(), b.strip()))
    return tuple(pairs)


def load_template(subtype: Subtype, directory=None) -> PromptTemplate:
    """Read ``<SUBTYPE>.txt`` and ``<SUBTYPE>.examples.txt`` from ``directory`` (default: shipped)."""
    subtype = Subtype(subtype)
    if directory is None:
        root = resources.files("degla").joinpath("data/prompts")
        text = root.joinpath(f"{subtype.value}.txt").read_text()
        shots = root.joinpath(f"{subtype.value}.examples.txt").read_text()
    else:
        directory = Path(directory)
        text = (directory / f"{subtype.value}.txt").read_text()
        ex = directory / f"{subtype.value}.examples.txt"
        shots = ex.read_text() if ex.exists() else ""
    return PromptTemplate(subtype, text, _parse_examples(shots))


def load_templates(directory=None) -> dict[Subtype, PromptTemplate]:
    return {s: load_template(s, directory) for s in Subtype}


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpChatClient:
    """OpenAI-style ``/chat/completions`` client.

    Timeouts, connection errors and 5xx responses are retried with exponential
    backoff; after ``attempts`` failures ClientUnavailable is raised.
    """

    def __init__(self, url: str, model: str, key: str | None = None, *, timeout: float = 60.0,
                 attempts: int = 3, backoff: float = 1.0, session=None,
                 sleep: Callable[[float], None] = time.sleep):
        self.url = url.rstrip("/")
        self.model = model
        self.key = key
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.session = session or requests.Session()
        self.sleep = sleep
        self.calls = 0

    @classmethod
    def from_env(cls, **kwargs) -> HttpChatClient:
        url = os.environ.get(ENV_URL)
        if not url:
            raise ClientUnavailable(f"{ENV_URL} is not set", attempts=0)
        return cls(url, os.environ.get(ENV_MODEL, "default"), os.environ.get(ENV_KEY), **kwargs)

    @property
    def endpoint(self) -> str:
        return self.url if self.url.endswith("/chat/completions") else f"{self.url}/chat/completions"

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}], "temperature": 0.7}
        last_error: Exception | None = None
        for attempt in range(1, self.attempts + 1):
            self.calls += 1
            try:
                resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
                if resp.status_code >= 500:
                    raise requests.HTTPError(f"server error {resp.status_code}")
                if resp.status_code >= 400:
                    raise ClientUnavailable(f"request rejected with HTTP {resp.status_code}", attempts=attempt)
                payload = resp.json()
            except (requests.Timeout, requests.ConnectionError, requests.HTTPError) as exc:
                last_error = exc
                log.warning("LLM request attempt %d/%d failed: %s", attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
            try:
                return payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"unexpected response layout: {exc}") from exc
        raise ClientUnavailable(f"LLM endpoint unavailable after {self.attempts} attempts: {last_error}",
                                attempts=self.attempts)


class StubClient:
    """Offline client returning canned responses (or raising a canned error)."""

    def __init__(self, responses: Sequence[str] | str | Callable[[str], str] = "", error: Exception | None = None):
        self.responses = responses
        self.error = error
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if self.error is not None:
            raise self.error
        if callable(self.responses):
            return self.responses(prompt)
        if isinstance(self.responses, str):
            return self.responses
        return "\n".join(self.responses)


def parse_candidates(response) -> list[str]:
    """Split a completion into candidate sentences, dropping list markers and quotes."""
    if not isinstance(response, str):
        raise MalformedResponse(f"expected text, got {type(response).__name__}")
    out = []
    for line in response.splitlines():
        line = _LIST_MARKER.sub("", line).strip().strip('"\'').strip()
        if line:
            out.append(line)
    if not out:
        raise MalformedResponse("response holds no candidate lines")
    return out


def llm_generate(c: Caption, subtype: Subtype, template: PromptTemplate, client: LlmClient) -> list[str]:
    if client is None:
        raise ClientUnavailable("no LLM client configured")
    if Subtype(subtype) is not template.subtype:
        raise ValueError(f"template is for {template.subtype.value}, not {Subtype(subtype).value}")
    return parse_candidates(client.complete(template.render(c.raw_text)))


def llm_generate_many(captions: Sequence[Caption], subtype: Subtype, template: PromptTemplate,
                      client: LlmClient, max_in_flight: int = 4) -> list[list[str]]:
    """llm_generate over many captions with at most ``max_in_flight`` concurrent requests."""
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(lambda c: llm_generate(c, subtype, template, client), captions))
