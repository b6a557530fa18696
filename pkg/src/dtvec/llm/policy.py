"""In-context-learning decision agent.

Per slot: pick nearby cases, build the prompt, ask the backend, parse,
project. Failed calls are retried; when retries run out the nearest
case's action is replayed instead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..decision import ActionMatrix, project_feasible
from .backends import BackendError, CompletionBackend
from .cases import CaseRecord, CaseSet
from .parse import ParseError, parse_action_matrix
from .prompt import PromptConfig, build_prompt, case_distances, select_cases

log = logging.getLogger(__name__)


class DecisionError(RuntimeError):
    pass


@dataclass
class LLMConfig:
    prompt: PromptConfig = field(default_factory=PromptConfig)
    max_retries: int = 3
    append_cases: bool = True


def nearest_case(case_set: CaseSet, state) -> CaseRecord | None:
    d, idx = case_distances(case_set, state)
    if not idx:
        return None
    return case_set[idx[int(np.argmin(d))]]


def decide(state, backend: CompletionBackend, case_set: CaseSet, config: LLMConfig,
           twin_bias, fE: float, alpha_min: float, stats: dict | None = None) -> ActionMatrix:
    """One in-context decision for an N x (K+3) state matrix."""
    state = np.asarray(state, dtype=float)
    N = state.shape[0]
    K = state.shape[1] - 3
    stats = stats if stats is not None else {}
    cases = select_cases(case_set, state, config.prompt.token_budget, config.prompt)
    bundle = build_prompt(cases, state, config.prompt)
    raw = None
    failures = 0
    for attempt in range(config.max_retries + 1):
        try:
            text = backend.complete(bundle.text)
            raw = parse_action_matrix(text, N, K)
            break
        except (BackendError, ParseError, TimeoutError) as exc:
            failures += 1
            log.warning("decision attempt %d failed: %s", attempt + 1, exc)
    # the first call is not a retry
    stats["retries"] = stats.get("retries", 0) + (failures if raw is not None else failures - 1)
    if raw is None:
        case = nearest_case(case_set, state)
        if case is None:
            raise DecisionError("backend failed and no case is available to fall back on")
        stats["fallbacks"] = stats.get("fallbacks", 0) + 1
        log.warning("falling back to nearest case (ts=%s)", case.ts)
        raw = ActionMatrix.from_rows(case.action, K)
    return project_feasible(raw, twin_bias, fE, alpha_min)


class LLMPolicy:
    name = "llm"

    def __init__(self, case_set: CaseSet, backend: CompletionBackend, config: LLMConfig | None = None):
        self.case_set = case_set
        self.backend = backend
        self.config = config or LLMConfig()
        self.stats: dict = {}

    def reset(self, config) -> None:
        self.stats = {}

    def decide(self, ctx, config) -> ActionMatrix:
        return decide(ctx.obs, self.backend, self.case_set, self.config, ctx.bias,
                      config.server_cpu_fE, config.alpha_min, self.stats)

    def after_slot(self, ctx, record) -> None:
        if self.config.append_cases:
            self.case_set.append(CaseRecord(ctx.obs, record.actions.as_rows(),
                                            record.metrics.summary(), ctx.t))
