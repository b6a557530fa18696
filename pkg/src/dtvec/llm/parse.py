"""Extract numeric matrices from free-form model output."""
from __future__ import annotations

import re

import numpy as np

from ..decision import ActionMatrix


class ParseError(ValueError):
    """No well-formed numeric matrix found."""


class ShapeError(ParseError):
    """Matrices were found, but none had the expected shape."""


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?\Z")


def _candidates(text: str):
    """Yield the source of every top-level ``[[ ... ]]`` block in order."""
    i, n = 0, len(text)
    while i < n:
        if text[i] != "[":
            i += 1
            continue
        j = i + 1
        while j < n and text[j].isspace():
            j += 1
        if j >= n or text[j] != "[":
            i += 1
            continue
        depth, k = 0, i
        while k < n:
            c = text[k]
            if c == "[":
                depth += 1
                if depth > 2:
                    break
            elif c == "]":
                depth -= 1
                if depth == 0:
                    yield text[i:k + 1]
                    break
            k += 1
        i = k + 1 if depth == 0 else i + 1


def _parse_block(block: str) -> np.ndarray | None:
    inner = block.strip()[1:-1]
    rows = []
    pos = 0
    for m in re.finditer(r"\[([^\[\]]*)\]", inner):
        gap = inner[pos:m.start()]
        if gap.strip(" \t\r\n,"):
            return None
        pos = m.end()
        tokens = [t for t in re.split(r"[,\s]+", m.group(1).strip()) if t]
        if not tokens or not all(_NUMBER.match(t) for t in tokens):
            return None
        rows.append([float(t) for t in tokens])
    if inner[pos:].strip(" \t\r\n,") or not rows:
        return None
    if len({len(r) for r in rows}) != 1:
        return None
    return np.array(rows, dtype=float)


def parse_matrix(text: str, n_rows: int, n_cols: int) -> np.ndarray:
    found_any = False
    for block in _candidates(text):
        m = _parse_block(block)
        if m is None:
            continue
        found_any = True
        if m.shape == (n_rows, n_cols) and np.all(np.isfinite(m)):
            return m
    if found_any:
        raise ShapeError(f"no {n_rows}x{n_cols} matrix in output")
    raise ParseError("no numeric matrix in output")


def parse_action_matrix(text: str, N: int, K: int) -> ActionMatrix:
    """First N x 2K matrix in ``text``: omega columns, then alpha columns."""
    return ActionMatrix.from_rows(parse_matrix(text, N, 2 * K), K)
