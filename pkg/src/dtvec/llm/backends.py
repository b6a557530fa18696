"""Completion backends: an OpenAI-compatible HTTP client and an offline mock."""
from __future__ import annotations

import logging
import os
from typing import Protocol

import httpx
import numpy as np

from .cases import CaseSet
from .parse import parse_matrix
from .prompt import case_distances, extract_query_state, render_matrix

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Transport-level failure; the caller may retry."""


class MockError(RuntimeError):
    """The mock could not read the query state (a prompt-format regression)."""


class CompletionBackend(Protocol):
    name: str
    deterministic: bool

    def complete(self, prompt: str) -> str: ...


class HttpChatBackend:
    """Chat-completions endpoint; URL and key default to LLM_ENDPOINT / LLM_API_KEY."""

    name = "http"
    deterministic = False

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str = "llama-3.1-8b-instruct", timeout: float = 60.0,
                 temperature: float = 0.0, transport: httpx.BaseTransport | None = None):
        endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        if not endpoint:
            raise BackendError("no endpoint: pass one or set LLM_ENDPOINT")
        if not endpoint.rstrip("/").endswith("chat/completions"):
            endpoint = endpoint.rstrip("/") + "/chat/completions"
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.model = model
        self.timeout = timeout
        self.temperature = temperature
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def payload(self, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.endpoint, json=self.payload(prompt), headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"completion request failed: {exc}") from exc

    def close(self) -> None:
        self._client.close()


class MockBackend:
    """Answers with the action of the stored case nearest to the prompt's query state.

    Actions are printed at full precision so replaying a case set is exact.
    """

    name = "mock"
    deterministic = True

    def __init__(self, case_set: CaseSet, sig_digits: int | None = None):
        if len(case_set) == 0:
            raise MockError("mock backend needs a nonempty case set")
        self.case_set = case_set
        self.sig_digits = sig_digits
        self.calls = 0

    def nearest(self, state: np.ndarray):
        d, idx = case_distances(self.case_set, state)
        if not idx:
            raise MockError(f"no stored case with state shape {state.shape}")
        return self.case_set[idx[int(np.argmin(d))]]

    def complete(self, prompt: str) -> str:
        self.calls += 1
        try:
            text = extract_query_state(prompt)
        except ValueError as exc:
            raise MockError(str(exc)) from exc
        shapes = {r.state.shape for r in self.case_set.records()}
        for shape in sorted(shapes):
            try:
                state = parse_matrix(text, *shape)
            except ValueError:
                continue
            return render_matrix(self.nearest(state).action, self.sig_digits)
        raise MockError("query state matches no stored case shape")


def mock_backend(case_set: CaseSet) -> MockBackend:
    return MockBackend(case_set)
