"""Prompt construction and nearest-case selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cases import CaseRecord, CaseSet

TASK_DESCRIPTION = (
    "You act as a numerical predictor for an edge computing controller. "
    "Each example below pairs a state matrix (one row per vehicle) with the action matrix "
    "chosen for it. An action row holds the offloading ratios of every task type followed by "
    "the server resource ratios, all between 0 and 1. Using the examples, predict the action "
    "matrix for the final state, with one row per vehicle."
)
INSTRUCTION = "Answer with the action matrix only, no other text."
DATASET_MARKER = "(data set)"
QUERY_MARKER = "Query"


class PromptBudgetError(ValueError):
    pass


@dataclass
class PromptConfig:
    token_budget: int = 6000
    sig_digits: int = 4
    include_outcomes: bool = False
    task_description: str = TASK_DESCRIPTION
    instruction: str = INSTRUCTION


@dataclass
class PromptBundle:
    task_description: str
    selected_cases: list[CaseRecord]
    current_state: str
    token_estimate: int
    text: str = field(repr=False, default="")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def format_number(x: float, sig: int | None) -> str:
    if sig is None:
        return repr(float(x))
    s = f"{float(x):.{sig}g}"
    return "0" if s == "-0" else s


def render_matrix(m, sig: int | None = 4) -> str:
    """Bracketed rows of decimals, one row per line."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rows = ["[" + ", ".join(format_number(x, sig) for x in row) + "]" for row in m]
    return "[" + ",\n ".join(rows) + "]"


def _render_case(case: CaseRecord, cfg: PromptConfig) -> str:
    key = (cfg.sig_digits, cfg.include_outcomes)
    if key in case.rendered:
        return case.rendered[key]
    text = f"state: {render_matrix(case.state, cfg.sig_digits)}\naction: {render_matrix(case.action, cfg.sig_digits)}\n"
    if cfg.include_outcomes and case.outcome:
        items = ", ".join(f"{k}={format_number(v, cfg.sig_digits)}" for k, v in sorted(case.outcome.items()))
        text += f"outcome: {items}\n"
    case.rendered[key] = text
    return text


def _frame(cfg: PromptConfig, state_text: str) -> tuple[str, str]:
    head = f"{cfg.task_description}\n{DATASET_MARKER}\n"
    tail = f"{QUERY_MARKER}\nstate: {state_text}\n{cfg.instruction}\n"
    return head, tail


def case_distances(case_set: CaseSet, state) -> tuple[np.ndarray, list[int]]:
    state = np.asarray(state, dtype=float)
    stacked, idx = case_set.states_for(state.shape)
    if not idx:
        return np.zeros(0), []
    d = np.sqrt(((stacked - state) ** 2).reshape(len(idx), -1).sum(axis=1))
    return d, idx


def select_cases(case_set: CaseSet, state, budget: int | None = None,
                 config: PromptConfig | None = None) -> list[CaseRecord]:
    """Nearest cases first (Euclidean on the state matrix) until the token budget is spent.

    With ``budget=None`` every shape-compatible case is returned, sorted.
    """
    cfg = config or PromptConfig()
    d, idx = case_distances(case_set, state)
    order = np.argsort(d, kind="stable")
    recs = case_set.records()
    ranked = [recs[idx[i]] for i in order]
    if budget is None:
        return ranked
    head, tail = _frame(cfg, render_matrix(state, cfg.sig_digits))
    used = estimate_tokens(head + tail)
    out = []
    for case in ranked:
        cost = estimate_tokens(_render_case(case, cfg))
        if used + cost > budget:
            break
        out.append(case)
        used += cost
    return out


def build_prompt(cases: list[CaseRecord], state, config: PromptConfig | None = None,
                 allow_empty: bool = True) -> PromptBundle:
    """Render header, the cases (farthest first, nearest just above the query), then the query."""
    cfg = config or PromptConfig()
    if not cases and not allow_empty:
        raise ValueError("no cases to render")
    state_text = render_matrix(state, cfg.sig_digits)
    head, tail = _frame(cfg, state_text)
    cases = list(cases)
    while True:
        body = "".join(_render_case(c, cfg) + "\n" for c in reversed(cases))
        text = head + body + tail
        tokens = estimate_tokens(text)
        if tokens <= cfg.token_budget:
            break
        if not cases:
            raise PromptBudgetError(
                f"prompt needs {tokens} tokens without any case; budget is {cfg.token_budget}")
        cases.pop()  # drop the farthest case
    return PromptBundle(cfg.task_description, cases, state_text, tokens, text)


def extract_query_state(prompt: str) -> str:
    """Text of the query state matrix in a prompt produced by ``build_prompt``."""
    pos = prompt.rfind(f"{QUERY_MARKER}\nstate:")
    if pos < 0:
        raise ValueError("no query state in prompt")
    return prompt[pos + len(QUERY_MARKER) + len("\nstate:"):]
