import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtvec.config import SimConfig
from dtvec.decision import ActionMatrix, project_feasible
from dtvec.harness import collect_cases, run_episode
from dtvec.learners.baselines import UniformPolicy
from dtvec.llm.backends import BackendError, HttpChatBackend, MockBackend, MockError, mock_backend
from dtvec.llm.cases import CaseRecord, CaseSet, StorageError, append_case
from dtvec.llm.parse import ParseError, ShapeError, parse_action_matrix, parse_matrix
from dtvec.llm.policy import DecisionError, LLMConfig, LLMPolicy, decide, nearest_case
from dtvec.llm.prompt import (DATASET_MARKER, PromptBudgetError, PromptConfig, build_prompt,
                              estimate_tokens, render_matrix, select_cases)

FE = 8e9
ALPHA_MIN = 0.005

# ten-vehicle, three-type answer in the bracketed-rows layout the parser must accept
RESPONSE_BOX = """[[0.091, 0.196, 0.271, 0.038, 0.038, 0.038],
[0.1, 0.223, 0.108, 0.038, 0.038, 0.038],
[0.203, 0.101, 0.109, 0.038, 0.0325, 0.038],
[0.208, 0.113, 0.144, 0.0225, 0.038, 0.038],
[0.01, 0.01, 0.99, 0.011, 0.005, 0.005],
[0.01, 0.99, 0.01, 0.0065, 0.005, 0.005],
[0.162, 0.08, 0.074, 0.038, 0.038, 0.038],
[0.105, 0.117, 0.247, 0.038, 0.038, 0.0365],
[0.341, 0.119, 0.099, 0.038, 0.038, 0.038],
[0.01, 0.01, 0.01, 0.0085, 0.038, 0.005]]"""


def random_case(rng, N=2, K=1, ts=0):
    state = rng.random((N, K + 3))
    omega = rng.random((N, K))
    alpha = rng.dirichlet(np.ones(N * K)).reshape(N, K) * 0.5
    return CaseRecord(state, np.hstack([omega, alpha]), None, ts)


def random_set(rng, n, N=2, K=1):
    return CaseSet([random_case(rng, N, K, ts=i) for i in range(n)])


# --- prompt -------------------------------------------------------------------

def test_prompt_without_cases():
    state = np.array([[0.5, 0.25, 0.125, 1.0]])
    b = build_prompt([], state)
    assert b.selected_cases == []
    assert b.text.count("state:") == 1 and "action:" not in b.text
    assert b.text.startswith(b.task_description) and DATASET_MARKER in b.text
    assert b.current_state == "[[0.5, 0.25, 0.125, 1]]"
    with pytest.raises(ValueError):
        build_prompt([], state, allow_empty=False)


def test_prompt_with_one_case_uses_bracketed_rows():
    case = CaseRecord([[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8]],
                      [[0.091, 0.038], [0.123456, 0.0225]])
    b = build_prompt([case], case.state)
    assert "action: [[0.091, 0.038],\n [0.1235, 0.0225]]" in b.text
    assert b.token_estimate == estimate_tokens(b.text) <= 6000


def test_prompt_is_pure(rng):
    cs = random_set(rng, 20)
    state = rng.random((2, 4))
    a = build_prompt(select_cases(cs, state, 6000), state)
    b = build_prompt(select_cases(cs, state, 6000), state)
    assert a.text == b.text


def test_prompt_budget_errors():
    with pytest.raises(PromptBudgetError):
        build_prompt([], np.zeros((2, 4)), PromptConfig(token_budget=10))


def test_prompt_prunes_farthest_to_fit(rng):
    cs = random_set(rng, 50)
    state = rng.random((2, 4))
    ranked = select_cases(cs, state)
    b = build_prompt(ranked, state, PromptConfig(token_budget=800))
    assert 0 < len(b.selected_cases) < 50
    assert b.selected_cases == ranked[:len(b.selected_cases)]
    assert b.token_estimate <= 800


# --- selection ----------------------------------------------------------------

def test_select_all_when_budget_allows(rng):
    cs = random_set(rng, 10)
    state = rng.random((2, 4))
    out = select_cases(cs, state, 10 ** 6)
    d = [np.linalg.norm(c.state - state) for c in out]
    assert len(out) == 10 and d == sorted(d)


def test_exact_state_ranked_first(rng):
    cs = random_set(rng, 30)
    target = cs[17]
    assert select_cases(cs, target.state, 6000)[0] is target


@pytest.mark.parametrize("seed", range(5))
def test_selection_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    cs = random_set(rng, 100)
    # duplicate a few states to exercise the insertion-order tie-break
    for j in (3, 40, 77):
        cs.append(CaseRecord(cs[j].state.copy(), cs[j].action, None, 100 + j))
    state = rng.random((2, 4))
    cfg = PromptConfig(token_budget=1500)
    recs = cs.records()
    order = sorted(range(len(recs)), key=lambda i: (float(np.sqrt(((recs[i].state - state) ** 2).sum())), i))
    _, _ = build_prompt([], state, cfg), None
    frame = estimate_tokens(build_prompt([], state, cfg).text)
    expected, used = [], frame
    for i in order:
        c = recs[i]
        cost = estimate_tokens(f"state: {render_matrix(c.state)}\naction: {render_matrix(c.action)}\n")
        if used + cost > cfg.token_budget:
            break
        expected.append(c)
        used += cost
    assert select_cases(cs, state, cfg.token_budget, cfg) == expected


def test_selection_ignores_other_shapes(rng):
    cs = random_set(rng, 5, N=2)
    cs.append(random_case(rng, N=3))
    assert all(c.state.shape == (2, 4) for c in select_cases(cs, rng.random((2, 4))))


def test_new_case_selected_first_for_repeat_state(rng):
    cs = random_set(rng, 10)
    state = rng.random((2, 4))
    case = append_case(cs, state, [[0.2, 0.1], [0.3, 0.1]], ts=99)[-1]
    assert select_cases(cs, state, 6000)[0] is case


# --- parsing ------------------------------------------------------------------

def test_parse_ten_by_six_answer():
    a = parse_action_matrix(RESPONSE_BOX, 10, 3)
    assert a.offload_omega[0].tolist() == [0.091, 0.196, 0.271]
    assert a.alloc_alpha[0].tolist() == [0.038, 0.038, 0.038]
    assert a.alloc_alpha[2].tolist() == [0.038, 0.0325, 0.038]
    assert a.shape == (10, 3)


def test_parse_zero_matrix():
    a = parse_action_matrix("[[0.0, 0.0]]", 1, 1)
    assert a.offload_omega.tolist() == [[0.0]] and a.alloc_alpha.tolist() == [[0.0]]


@pytest.mark.parametrize("wrap", [
    "```\n{}\n```",
    "```python\n{}\n```",
    "Here is the action matrix:\n{}\nHope this helps.",
    "Sure! The answer is {} as requested.",
    "{}",
])
def test_parse_tolerates_wrapping(wrap):
    bare = parse_action_matrix(RESPONSE_BOX, 10, 3)
    got = parse_action_matrix(wrap.format(RESPONSE_BOX), 10, 3)
    assert got.equals(bare)


def test_parse_trailing_commas_and_scientific():
    m = parse_matrix("[[1e-2, 0.5,], [2.5E-1, .75],]", 2, 2)
    assert m.tolist() == [[0.01, 0.5], [0.25, 0.75]]


def test_parse_skips_wrong_shapes_before_the_answer():
    text = "the state was [[0.1, 0.2, 0.3, 0.4]] and the action is [[0.5, 0.25]]"
    assert parse_matrix(text, 1, 2).tolist() == [[0.5, 0.25]]


@pytest.mark.parametrize("text,err", [
    ("no numbers here", ParseError),
    ("[[0.1, abc]]", ParseError),
    ("[[0.1, 0.2], [0.3]]", ParseError),
    ("[0.1, 0.2]", ParseError),
    ("[[0.1, 0.2, 0.3]]", ShapeError),
    ("[[nan, 0.2]]", ParseError),
])
def test_parse_rejects_malformed(text, err):
    with pytest.raises(err):
        parse_action_matrix(text, 1, 1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), N=st.integers(1, 6), K=st.integers(1, 3),
       prose=st.sampled_from(["", "Answer:\n", "```\n", "The matrix [is] below "]))
def test_parse_fuzz_matches_bare(seed, N, K, prose):
    rng = np.random.default_rng(seed)
    m = rng.random((N, 2 * K))
    text = render_matrix(m)
    assert np.array_equal(parse_matrix(prose + text + "\n```", N, 2 * K), parse_matrix(text, N, 2 * K))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), N=st.integers(1, 10), K=st.integers(1, 3))
def test_render_parse_roundtrip(seed, N, K):
    rng = np.random.default_rng(seed)
    raw = ActionMatrix(rng.random((N, K)), rng.random((N, K)))
    a = project_feasible(raw, np.zeros((N, K)), FE, ALPHA_MIN)
    back = parse_action_matrix(render_matrix(a.as_rows(), 4), N, K)
    assert np.max(np.abs(back.as_rows() - a.as_rows())) <= 5e-5


# --- case set -----------------------------------------------------------------

def test_case_record_invariants():
    with pytest.raises(ValueError):
        CaseRecord(np.zeros((2, 4)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        CaseRecord(np.zeros((1, 4)), [[1.5, 0.1]])


def test_append_and_fifo_cap(rng):
    cs = CaseSet()
    append_case(cs, rng.random((1, 4)), [[0.5, 0.1]])
    assert len(cs) == 1
    small = CaseSet(capacity=10_000)
    for i in range(10_005):
        small.append(CaseRecord(np.full((1, 4), i, float), [[0.5, 0.1]], None, i))
    assert len(small) == 10_000 and small[0].ts == 5 and small[-1].ts == 10_004


def test_jsonl_roundtrip_bit_exact(tmp_path, rng):
    cs = random_set(rng, 30)
    cs[3].outcome = {"qos": 0.1 + 0.2, "e": 1e-300}
    cs.save(tmp_path / "c.jsonl")
    back = CaseSet.load(tmp_path / "c.jsonl")
    assert [r.to_json() for r in back] == [r.to_json() for r in cs]
    for a, b in zip(cs, back):
        assert a.state.tobytes() == b.state.tobytes() and a.action.tobytes() == b.action.tobytes()
    line = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert set(line) == {"state", "action", "outcome", "ts"}


def test_write_through_persistence(tmp_path, rng):
    path = tmp_path / "live.jsonl"
    cs = CaseSet(capacity=3, path=path)
    for i in range(5):
        cs.append(random_case(rng, ts=i))
    assert [r.ts for r in CaseSet.load(path)] == [2, 3, 4]


def test_storage_errors(tmp_path, rng):
    with pytest.raises(StorageError):
        CaseSet.load(tmp_path / "missing.jsonl")
    cs = CaseSet(path=tmp_path / "no" / "dir.jsonl")
    with pytest.raises(StorageError):
        cs.append(random_case(rng))


# --- mock backend ---------------------------------------------------------------

def test_mock_returns_exact_action_text(rng):
    cs = random_set(rng, 20)
    mock = mock_backend(cs)
    target = cs[5]
    prompt = build_prompt(select_cases(cs, target.state, 6000), target.state).text
    out = mock.complete(prompt)
    assert out == render_matrix(target.action, None)
    assert mock.complete(prompt) == out
    assert np.array_equal(parse_matrix(out, 2, 2), target.action)


def test_mock_errors(rng):
    with pytest.raises(MockError):
        MockBackend(CaseSet())
    mock = MockBackend(random_set(rng, 3))
    with pytest.raises(MockError):
        mock.complete("a prompt with no query in it")


# --- decide -------------------------------------------------------------------

class Scripted:
    name = "scripted"
    deterministic = True

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_decide_through_mock_equals_nearest_lookup(rng):
    cs = random_set(rng, 40)
    for _ in range(10):
        state = rng.random((2, 4))
        got = decide(state, MockBackend(cs), cs, LLMConfig(), np.zeros((2, 1)), FE, ALPHA_MIN)
        want = project_feasible(ActionMatrix.from_rows(nearest_case(cs, state).action, 1),
                                np.zeros((2, 1)), FE, ALPHA_MIN)
        assert got.equals(want)


def test_decide_retries_then_succeeds(rng):
    cs = random_set(rng, 5)
    be = Scripted(["I think", BackendError("timeout"), "[[0.4, 0.2], [0.6, 0.3]]"])
    stats = {}
    got = decide(rng.random((2, 4)), be, cs, LLMConfig(), np.zeros((2, 1)), FE, ALPHA_MIN, stats)
    assert stats == {"retries": 2}
    assert got.offload_omega.ravel().tolist() == [0.4, 0.6]
    assert len(set(be.prompts)) == 1


def test_decide_falls_back_to_nearest_case(rng):
    cs = random_set(rng, 5)
    state = cs[2].state
    be = Scripted(["garbage"] * 4)
    stats = {}
    got = decide(state, be, cs, LLMConfig(max_retries=3), np.zeros((2, 1)), FE, ALPHA_MIN, stats)
    assert stats == {"retries": 3, "fallbacks": 1}
    assert np.allclose(got.as_rows(), cs[2].action)


def test_decide_without_any_case_raises(rng):
    with pytest.raises(DecisionError):
        decide(rng.random((2, 4)), Scripted(["x"] * 4), CaseSet(), LLMConfig(), np.zeros((2, 1)), FE, ALPHA_MIN)


def test_decide_output_is_always_feasible(rng):
    cs = random_set(rng, 3)
    be = Scripted(["[[1.0, 0.9], [1.0, 0.9]]"])
    bias = np.full((2, 1), 0.5e9)
    got = decide(rng.random((2, 4)), be, cs, LLMConfig(), bias, FE, ALPHA_MIN)
    assert got.equals(project_feasible(got, bias, FE, ALPHA_MIN))
    assert got.alloc_alpha.sum() <= 1 + 1e-12


def test_replay_of_uniform_cases_is_exact():
    cfg = SimConfig(n_vehicles=3, n_task_types=2, seed=21)
    cs = collect_cases(cfg, UniformPolicy(), 60)
    direct = run_episode(cfg, UniformPolicy(), 60)
    replay = run_episode(cfg, LLMPolicy(cs, MockBackend(cs)), 60)
    assert replay.fallbacks == 0
    assert replay.slot_rows() == direct.slot_rows()


# --- http backend -------------------------------------------------------------

def test_http_backend_wire_format():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "[[0.5, 0.1]]"}}]})

    be = HttpChatBackend("http://llm.local/v1", "k3y", transport=httpx.MockTransport(handler))
    assert be.complete("hello") == "[[0.5, 0.1]]"
    assert seen["url"] == "http://llm.local/v1/chat/completions"
    assert seen["auth"] == "Bearer k3y"
    assert seen["body"]["temperature"] == 0.0
    assert seen["body"]["messages"] == [{"role": "user", "content": "hello"}]


@pytest.mark.parametrize("resp", [httpx.Response(500), httpx.Response(200, json={"nope": 1}),
                                  httpx.Response(200, text="not json")])
def test_http_backend_failures_are_backend_errors(resp):
    be = HttpChatBackend("http://llm.local/v1/chat/completions", "",
                         transport=httpx.MockTransport(lambda r: resp))
    with pytest.raises(BackendError):
        be.complete("x")


def test_http_backend_reads_environment(monkeypatch):
    monkeypatch.delenv("LLM_ENDPOINT", raising=False)
    with pytest.raises(BackendError):
        HttpChatBackend()
    monkeypatch.setenv("LLM_ENDPOINT", "http://env.local")
    monkeypatch.setenv("LLM_API_KEY", "abc")
    be = HttpChatBackend()
    assert be.endpoint == "http://env.local/chat/completions" and be.api_key == "abc"
