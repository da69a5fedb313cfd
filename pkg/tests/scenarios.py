"""Scripted end-to-end sessions over the DBLP fixture with canned endpoint responses."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from fixtures import FINAL_QUERY, PID, PROBE_QUERY, make_env

from kgsparql.agent import FunctionSet, SessionConfig, SessionTrace, run_session
from kgsparql.chat import ScriptedChatModel
from kgsparql.testing import FixtureEndpoint, select_json

QUESTION = "Who published the most papers at the top 5 conferences in deep learning?"

CANNED = {
    PROBE_QUERY: select_json(["papers"], [[2]]),
    FINAL_QUERY: select_json(["author", "count"], [[f"<{PID}levine>", 4]]),
}

WRONG_QUERY = FINAL_QUERY.replace("LIMIT 1", "LIMIT 3")


def call(name: str, **args) -> dict:
    return {"name": name, "args": args}


def step(*calls: dict, text: str | None = None) -> dict:
    return {"text": text, "calls": list(calls)}


ANSWER = call("answer", kg="dblp", sparql=FINAL_QUERY, answer="Sergey Levine, with 4 papers")

DBLP_FLOW = [
    step(*(call("search_entity", kg="dblp", query=q) for q in ("NeurIPS", "CVPR", "ICML", "AAAI", "ICLR")),
         text="The top deep learning venues are NeurIPS, CVPR, ICML, AAAI and ICLR. I need their IRIs."),
    step(call("search_property", kg="dblp", query="published in stream"),
         call("search_property", kg="dblp", query="authored by"),
         text="Now the properties linking papers to venues and authors."),
    step(call("execute", kg="dblp", sparql=PROBE_QUERY), text="Check that papers link to streams."),
    step(call("execute", kg="dblp", sparql=FINAL_QUERY), text="The probe works. Count papers per author."),
    step(ANSWER, text="Sergey Levine has the most papers."),
]


@dataclass
class Scenario:
    name: str
    steps: list
    feedback: list = field(default_factory=list)
    config: SessionConfig = field(default_factory=SessionConfig)
    expected_outcome: str = "answered"
    expected_sparql: str | None = FINAL_QUERY
    check: Callable[[SessionTrace, ScriptedChatModel, ScriptedChatModel, FixtureEndpoint], None] | None = None


def _check_dblp(trace, main, fb, ep):
    assert trace.turns == 5
    assert trace.function_calls == 10
    assert ep.requests == [PROBE_QUERY, FINAL_QUERY]


def _check_cancel(trace, main, fb, ep):
    assert trace.outcome.expl.startswith("DBLP has no")
    assert trace.outcome.best_attempt is None


def _check_feedback_once(trace, main, fb, ep):
    answers = [c for m in trace.messages for c in m.calls if c["name"] == "answer"]
    assert len(answers) == 2
    assert len(trace.feedback_messages()) == 1
    assert trace.feedback_loops == 1 and [v.status for v in trace.verdicts] == ["refine", "done"]
    # the judge sees only the answer arguments and the rules
    for convo in trace.feedback_conversations:
        text = "\n".join(m["content"] or "" for m in convo)
        assert "search_entity" not in text and "NeurIPS" not in text
        assert QUESTION not in text


def _check_guard(trace, main, fb, ep):
    first = next(m for m in trace.messages if m.role == "function")
    assert first.content.startswith("error: the query uses IRIs")
    assert "streams:neurips2099" in first.content
    assert ep.requests == [FINAL_QUERY]


def _check_turn_cap(trace, main, fb, ep):
    assert trace.turns == 4 and len(main.received) == 4
    assert trace.outcome.best_attempt == {"kg": "dblp", "sparql": PROBE_QUERY}


def _check_feedback_cap(trace, main, fb, ep):
    assert trace.feedback_loops == 2
    assert len(fb.received) == 2
    assert len(trace.feedback_messages()) == 2


GUARD_BAD = """PREFIX dblp: <https://dblp.org/rdf/schema#>
PREFIX streams: <https://dblp.org/streams/conf/>
SELECT ?paper WHERE { ?paper dblp:publishedInStream streams:neurips2099 }"""

REFINE = {"text": '{"status": "refine", "feedback": "Return only the single top author."}'}
DONE = {"text": '{"status": "done", "feedback": ""}'}

SCENARIOS = [
    Scenario("dblp_flow", DBLP_FLOW, check=_check_dblp),
    Scenario(
        "cancel",
        [step(call("search_entity", kg="dblp", query="Atlantis Symposium")),
         step(call("cancel", expl="DBLP has no venue called Atlantis Symposium."))],
        expected_outcome="cancelled", expected_sparql=None, check=_check_cancel,
    ),
    Scenario(
        "feedback_refine_done",
        [step(call("answer", kg="dblp", sparql=WRONG_QUERY, answer="top three authors")), step(ANSWER)],
        feedback=[REFINE, DONE],
        config=SessionConfig(feedback_enabled=True),
        check=_check_feedback_once,
    ),
    Scenario(
        "strict_iri_guard",
        [step(call("execute", kg="dblp", sparql=GUARD_BAD)),
         step(*(call("search_entity", kg="dblp", query=q) for q in ("NeurIPS", "CVPR", "ICML", "AAAI", "ICLR"))),
         step(call("search_property", kg="dblp", query="published in stream"),
              call("search_property", kg="dblp", query="authored by")),
         step(call("execute", kg="dblp", sparql=FINAL_QUERY)),
         step(ANSWER)],
        config=SessionConfig(strict_iri_guard=True),
        check=_check_guard,
    ),
    Scenario(
        "turn_cap",
        [step(call("execute", kg="dblp", sparql=PROBE_QUERY), text="probe"), step(text="Still thinking.")],
        config=SessionConfig(max_llm_turns=4),
        expected_outcome="exhausted", expected_sparql=None, check=_check_turn_cap,
    ),
    Scenario(
        "feedback_cap",
        [step(call("answer", kg="dblp", sparql=WRONG_QUERY, answer="a")),
         step(call("answer", kg="dblp", sparql=WRONG_QUERY, answer="b")),
         step(ANSWER)],
        feedback=[REFINE],
        config=SessionConfig(feedback_enabled=True),
        check=_check_feedback_cap,
    ),
]


def run_scenario(sc: Scenario, directory: Path) -> tuple[SessionTrace, ScriptedChatModel, ScriptedChatModel,
                                                          FixtureEndpoint]:
    with FixtureEndpoint(CANNED) as ep:
        env = make_env(directory, ep, examples=False)
        main = ScriptedChatModel(sc.steps, repeat_last=sc.name == "turn_cap")
        fb = ScriptedChatModel(sc.feedback, repeat_last=True)
        trace = run_session(QUESTION, sc.config, env.catalog, env.toolbox, main, fb)
    return trace, main, fb, ep


def outcome_sparql(trace: SessionTrace) -> str | None:
    return getattr(trace.outcome, "sparql", None)


__all__ = ["SCENARIOS", "Scenario", "run_scenario", "outcome_sparql", "QUESTION", "FunctionSet"]
