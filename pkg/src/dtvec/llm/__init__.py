"""In-context-learning policy: case set, prompts, parsing, backends."""
from .backends import BackendError, HttpChatBackend, MockBackend, mock_backend
from .cases import CaseRecord, CaseSet, StorageError, append_case
from .parse import ParseError, ShapeError, parse_action_matrix, parse_matrix
from .policy import DecisionError, LLMConfig, LLMPolicy, decide
from .prompt import PromptBundle, PromptConfig, build_prompt, render_matrix, select_cases

__all__ = [
    "BackendError", "CaseRecord", "CaseSet", "DecisionError", "HttpChatBackend", "LLMConfig",
    "LLMPolicy", "MockBackend", "ParseError", "PromptBundle", "PromptConfig", "ShapeError",
    "StorageError", "append_case", "build_prompt", "decide", "mock_backend",
    "parse_action_matrix", "parse_matrix", "render_matrix", "select_cases",
]
