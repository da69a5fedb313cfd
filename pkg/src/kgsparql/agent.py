"""The generation loop: one conversation from instruction and question to answer or cancel."""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence

from kgsparql.catalog import Catalog
from kgsparql.chat import ChatModel, ToolCall, TransportError
from kgsparql.iris import WELL_KNOWN_PREFIXES, PrefixMap, find_iris
from kgsparql.toolbox import FUNCTION_SPECS, NAME_TO_MNEMONIC, FunctionResult, Toolbox, tool_schemas

logger = logging.getLogger(__name__)

BASE_SET = frozenset({"ANS", "CAN", "EXE"})
FUNCTION_SETS: dict[str, frozenset[str]] = {
    "B": BASE_SET,
    "S": BASE_SET | {"LST", "SEN", "SPR"},
    "S_E": BASE_SET | {"LST", "SEN", "SPR", "SPE", "SOP"},
    "S_A": BASE_SET | {"LST", "SAC"},
    "S_C": BASE_SET | {"LST", "SCN"},
}
CLI_SET_IDS = {"b": "B", "s": "S", "se": "S_E", "sa": "S_A", "sc": "S_C"}
FEW_SHOT_FUNCTION = {"similar": "FSE", "random": "FEX"}
MAX_FEEDBACK_LOOPS = 2
DEFAULT_MAX_TURNS = 30

DEFAULT_RULES: tuple[str, ...] = (
    "Always search for the IRIs of entities and properties before using them in a query; never guess IRIs.",
    "Verify your query with execute before calling answer.",
    "Prefer SELECT DISTINCT to avoid duplicate rows in the result.",
    "Answer on the knowledge graph the question is about.",
    "Include the IRIs of answer entities in the result, labels may be added as extra columns.",
)


@dataclass(frozen=True)
class FunctionSet:
    id: str = "S_E"
    few_shot: Literal["similar", "random"] | None = None

    def __post_init__(self):
        if self.id not in FUNCTION_SETS:
            raise ValueError(f"unknown function set {self.id!r}, expected one of {', '.join(FUNCTION_SETS)}")
        if self.few_shot not in (None, "similar", "random"):
            raise ValueError(f"few_shot must be similar or random, got {self.few_shot!r}")

    @classmethod
    def from_cli(cls, name: str, few_shot: str | None = None) -> "FunctionSet":
        return cls(CLI_SET_IDS.get(name.lower(), name), few_shot)

    @property
    def members(self) -> frozenset[str]:
        members = FUNCTION_SETS[self.id]
        if self.few_shot:
            members = members | {FEW_SHOT_FUNCTION[self.few_shot]}
        return members


@dataclass(frozen=True)
class SessionConfig:
    function_set: FunctionSet = FunctionSet()
    max_llm_turns: int = DEFAULT_MAX_TURNS
    max_feedback_loops: int = MAX_FEEDBACK_LOOPS
    feedback_enabled: bool = False
    strict_iri_guard: bool = False
    seed: int = 0
    few_shot_kg: str | None = None
    rules: tuple[str, ...] = DEFAULT_RULES

    def __post_init__(self):
        if self.max_llm_turns < 1:
            raise ValueError("max_llm_turns must be >= 1")
        if not 0 <= self.max_feedback_loops <= MAX_FEEDBACK_LOOPS:
            raise ValueError(f"max_feedback_loops must be between 0 and {MAX_FEEDBACK_LOOPS}")


@dataclass
class Message:
    role: Literal["system", "user", "model", "function"]
    content: str | None = None
    calls: list[dict] = field(default_factory=list)
    name: str | None = None
    call_id: str | None = None
    kind: str | None = None

    def to_openai(self) -> dict:
        if self.role in ("system", "user"):
            return {"role": self.role, "content": self.content or ""}
        if self.role == "model":
            msg: dict[str, Any] = {"role": "assistant", "content": self.content}
            if self.calls:
                msg["tool_calls"] = [
                    {"id": c["id"], "type": "function",
                     "function": {"name": c["name"], "arguments": json.dumps(c["args"], ensure_ascii=False)}}
                    for c in self.calls
                ]
            return msg
        return {"role": "tool", "tool_call_id": self.call_id, "content": self.content or ""}

    def to_dict(self) -> dict:
        d = {"role": self.role, "content": self.content}
        for key in ("calls", "name", "call_id", "kind"):
            if getattr(self, key):
                d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Message":
        return cls(d["role"], d.get("content"), list(d.get("calls", [])), d.get("name"),
                   d.get("call_id"), d.get("kind"))


@dataclass(frozen=True)
class Answered:
    kg: str
    sparql: str
    answer: str
    type: str = "answered"


@dataclass(frozen=True)
class Cancelled:
    expl: str
    best_attempt: Mapping[str, str] | None = None
    type: str = "cancelled"


@dataclass(frozen=True)
class Exhausted:
    best_attempt: Mapping[str, str] | None = None
    type: str = "exhausted"


Outcome = Answered | Cancelled | Exhausted


def outcome_to_dict(o: Outcome | None) -> dict | None:
    if o is None:
        return None
    d = dict(o.__dict__)
    if d.get("best_attempt") is not None:
        d["best_attempt"] = dict(d["best_attempt"])
    return d


def outcome_from_dict(d: Mapping | None) -> Outcome | None:
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("type")
    return {"answered": Answered, "cancelled": Cancelled, "exhausted": Exhausted}[kind](**d)


@dataclass(frozen=True)
class FeedbackVerdict:
    status: Literal["done", "refine", "retry"]
    message: str = ""

    def __post_init__(self):
        if self.status not in ("done", "refine", "retry"):
            raise ValueError(f"invalid feedback status {self.status!r}")
        if self.status != "done" and not self.message.strip():
            raise ValueError("refine/retry feedback needs a message")


@dataclass
class SessionTrace:
    question: str
    messages: list[Message] = field(default_factory=list)
    outcome: Outcome | None = None
    turns: int = 0
    function_calls: int = 0
    feedback_loops: int = 0
    seen_iris: set[str] = field(default_factory=set)
    verdicts: list[FeedbackVerdict] = field(default_factory=list)
    feedback_conversations: list[list[dict]] = field(default_factory=list)
    last_executed: dict | None = None
    offered: list[str] = field(default_factory=list)

    def add(self, msg: Message) -> Message:
        self.messages.append(msg)
        return msg

    def function_results(self) -> list[Message]:
        return [m for m in self.messages if m.role == "function"]

    def calls_by_name(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for m in self.messages:
            for c in m.calls:
                counts[c["name"]] = counts.get(c["name"], 0) + 1
        return counts

    def feedback_messages(self) -> list[Message]:
        return [m for m in self.messages if m.kind == "feedback"]

    def to_records(self) -> list[dict]:
        """One structured record per event, suitable for line-delimited JSON."""
        records: list[dict] = [{"event": "start", "question": self.question, "offered": self.offered}]
        records += [{"event": "message", **m.to_dict()} for m in self.messages]
        records += [{"event": "verdict", "status": v.status, "message": v.message} for v in self.verdicts]
        records.append({
            "event": "end",
            "outcome": outcome_to_dict(self.outcome),
            "turns": self.turns,
            "function_calls": self.function_calls,
            "feedback_loops": self.feedback_loops,
            "calls_by_name": dict(sorted(self.calls_by_name().items())),
        })
        return records

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.to_records():
                f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "SessionTrace":
        trace = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                event = rec.pop("event")
                if event == "start":
                    trace = cls(rec["question"], offered=list(rec.get("offered", [])))
                elif trace is None:
                    raise ValueError(f"{path}: trace does not start with a start event")
                elif event == "message":
                    trace.messages.append(Message.from_dict(rec))
                elif event == "verdict":
                    trace.verdicts.append(FeedbackVerdict(rec["status"], rec["message"]))
                elif event == "end":
                    trace.outcome = outcome_from_dict(rec["outcome"])
                    trace.turns = rec["turns"]
                    trace.function_calls = rec["function_calls"]
                    trace.feedback_loops = rec["feedback_loops"]
        if trace is None:
            raise ValueError(f"{path}: empty trace")
        return trace


class SessionAborted(TransportError):
    """The chat endpoint failed; ``trace`` holds the partial session."""

    def __init__(self, message: str, trace: SessionTrace):
        super().__init__(message)
        self.trace = trace


def format_rules(rules: Sequence[str]) -> str:
    return "\n".join(f"- {r}" for r in rules)


def build_instruction(catalog: Catalog, config: SessionConfig | None = None,
                      rules: Sequence[str] | None = None) -> str:
    """System instruction shared by all graphs: graph list, method and rules."""
    if rules is None:
        rules = config.rules if config is not None else DEFAULT_RULES
    graphs = "\n".join(f"- {kg.name} at {kg.endpoint}" for kg in catalog.graphs.values())
    parts = [
        "You answer questions by writing SPARQL queries over RDF knowledge graphs. "
        "You explore the graphs only through the functions you are given.",
        f"Available knowledge graphs:\n{graphs}",
        "How to proceed:\n"
        "1. Think before and after each step: state what you know, what is missing and what you will do next.\n"
        "2. Find the IRIs and literals the question refers to with the search and listing functions.\n"
        "3. Build the query incrementally and execute intermediate versions to check that each part "
        "returns what you expect.\n"
        "4. When a query answers the question, call answer with the graph, the query and a short "
        "human-readable answer.\n"
        "5. If no satisfactory query can be found, call cancel with an explanation and your best attempt.",
    ]
    if rules:
        parts.append(f"Rules:\n{format_rules(rules)}")
    return "\n\n".join(parts)


_VERDICT_JSON = re.compile(r"\{.*\}", re.S)


def parse_verdict(text: str | None) -> FeedbackVerdict | None:
    if not text:
        return None
    m = _VERDICT_JSON.search(text)
    if m:
        try:
            data = json.loads(m.group(0))
            status = str(data.get("status", "")).strip().lower()
            message = str(data.get("feedback") or data.get("message") or "").strip()
            if status == "done":
                return FeedbackVerdict("done", message)
            if status in ("refine", "retry"):
                return FeedbackVerdict(status, message or "Please revise your output.")
        except (ValueError, AttributeError):
            pass
    m = re.search(r"status\W+(done|refine|retry)\b", text, re.I)
    if m:
        status = m.group(1).lower()
        rest = text[m.end():].strip(" \n:.-")
        return FeedbackVerdict(status, rest or ("" if status == "done" else "Please revise your output."))
    return None


FEEDBACK_INSTRUCTION = (
    "You review the final output of a system that translates questions into SPARQL queries. "
    "You only see the arguments of its final function call. Check them against these rules:\n{rules}\n\n"
    "Reply with a JSON object {{\"status\": \"done\" | \"refine\" | \"retry\", \"feedback\": \"...\"}}. "
    "Use done if the output is fine, refine if it needs small fixes and retry if it should start over."
)


def feedback_round(
    outcome_args: Mapping[str, Any],
    rules: Sequence[str],
    model: ChatModel,
    function: str = "answer",
) -> tuple[FeedbackVerdict, list[dict]]:
    """Judge an answer/cancel call in a fresh conversation that sees only its arguments.

    Returns the verdict and the feedback conversation. Unparsable replies count as done.
    """
    messages = [
        {"role": "system", "content": FEEDBACK_INSTRUCTION.format(rules=format_rules(rules))},
        {"role": "user", "content": f"Function called: {function}\nArguments:\n"
                                    f"{json.dumps(dict(outcome_args), indent=2, ensure_ascii=False)}"},
    ]
    reply = model.complete(messages, [])
    messages.append({"role": "assistant", "content": reply.text})
    verdict = parse_verdict(reply.text)
    if verdict is None:
        logger.warning("unparsable feedback reply, treating as done: %r", reply.text)
        verdict = FeedbackVerdict("done")
    return verdict, messages


def guard_execute(trace: SessionTrace, kg: str, sparql: str, toolbox: Toolbox) -> FunctionResult:
    """Refuse queries that use IRIs the model has not seen in any earlier result."""
    pm = toolbox.prefixes(kg) if kg in toolbox.catalog else PrefixMap()
    used = find_iris(sparql, pm, sparql=True)
    allowed_ns = tuple(WELL_KNOWN_PREFIXES.values())
    unknown = sorted(i for i in used if i not in trace.seen_iris and not i.startswith(allowed_ns))
    if unknown:
        listed = ", ".join(pm.shorten(i) for i in unknown)
        return FunctionResult.failure(
            f"error: the query uses IRIs that did not appear in any previous function result: {listed}. "
            "Search for the correct IRIs first."
        )
    return toolbox.fn_execute(kg, sparql)


def inject_few_shot(
    trace: SessionTrace,
    mode: str | None,
    question: str,
    kg: str,
    toolbox: Toolbox,
    rng: random.Random,
) -> SessionTrace:
    """Run FSE or FEX before the first model turn and record it as a function event."""
    if not mode:
        return trace
    res = toolbox.resources.get(kg)
    if res is None or res.examples is None:
        logger.warning("few-shot mode %s requested but graph %r has no example store", mode, kg)
        return trace
    mnemonic = FEW_SHOT_FUNCTION[mode]
    args = {"kg": kg, "question": question} if mnemonic == "FSE" else {"kg": kg}
    call_id = "few_shot_0"
    result = toolbox.call(FUNCTION_SPECS[mnemonic].name, args, rng=rng)
    trace.add(Message("model", None, [{"id": call_id, "name": FUNCTION_SPECS[mnemonic].name, "args": args}],
                      kind="few_shot"))
    trace.add(Message("function", result.rendered, name=FUNCTION_SPECS[mnemonic].name, call_id=call_id,
                      kind="few_shot"))
    trace.function_calls += 1
    trace.seen_iris |= result.mentioned_iris
    return trace


def _instruction_iris(instruction: str, catalog: Catalog) -> set[str]:
    out: set[str] = set()
    for kg in catalog.graphs.values():
        out |= find_iris(instruction, kg.prefix_map)
    return out


class _Session:
    def __init__(self, question, config, catalog, toolbox, model, feedback_model):
        self.config = config
        self.catalog = catalog
        self.toolbox = toolbox
        self.model = model
        self.feedback_model = feedback_model or model
        self.rng = random.Random(config.seed)
        self.members = config.function_set.members
        self.tools = tool_schemas(self.members, catalog.names())
        self.trace = SessionTrace(question, offered=sorted(offered_functions(self.tools)))

    def _result(self, call: ToolCall, content: str, kind: str | None = None) -> None:
        self.trace.add(Message("function", content, name=call.name, call_id=call.id, kind=kind))

    def _run_function(self, call: ToolCall, mnemonic: str) -> None:
        args = call.arguments
        if mnemonic == "EXE" and self.config.strict_iri_guard:
            result = guard_execute(self.trace, str(args.get("kg", "")), str(args.get("sparql", "")), self.toolbox)
        else:
            result = self.toolbox.call(call.name, args, rng=self.rng)
        if mnemonic == "EXE" and not result.error:
            self.trace.last_executed = {"kg": args.get("kg"), "sparql": args.get("sparql")}
        self.trace.seen_iris |= result.mentioned_iris
        self._result(call, result.rendered)

    def _terminal(self, call: ToolCall, mnemonic: str) -> Answered | Cancelled | None:
        args = call.arguments
        if mnemonic == "ANS":
            missing = [p for p in ("kg", "sparql", "answer") if not isinstance(args.get(p), str)]
            if missing:
                self._result(call, f"error: answer needs the argument(s) {', '.join(missing)}")
                return None
            if args["kg"] not in self.catalog:
                self._result(call, f"error: unknown knowledge graph {args['kg']!r}")
                return None
            return Answered(args["kg"], args["sparql"], args["answer"])
        if not isinstance(args.get("expl"), str):
            self._result(call, "error: cancel needs the argument expl")
            return None
        best = args.get("best_attempt")
        if best is not None and not (isinstance(best, Mapping) and best.get("sparql") and best.get("kg")):
            best = None
        return Cancelled(args["expl"], dict(best) if best else None)

    def run(self) -> SessionTrace:
        cfg = self.config
        trace = self.trace
        instruction = build_instruction(self.catalog, cfg)
        trace.add(Message("system", instruction))
        trace.add(Message("user", trace.question))
        trace.seen_iris |= _instruction_iris(instruction, self.catalog)
        if cfg.function_set.few_shot:
            kg = cfg.few_shot_kg or self.catalog.names()[0]
            inject_few_shot(trace, cfg.function_set.few_shot, trace.question, kg, self.toolbox, self.rng)

        while trace.turns < cfg.max_llm_turns:
            try:
                reply = self.model.complete([m.to_openai() for m in trace.messages], self.tools)
            except TransportError as e:
                raise SessionAborted(str(e), trace) from e
            trace.turns += 1
            trace.add(Message(
                "model", reply.text,
                [{"id": c.id, "name": c.name, "args": c.arguments} for c in reply.calls],
            ))
            pending = list(reply.calls)
            while pending:
                call = pending.pop(0)
                trace.function_calls += 1
                mnemonic = NAME_TO_MNEMONIC.get(call.name)
                if mnemonic is None or mnemonic not in self.members:
                    self._result(call, f"error: function {call.name!r} is not available")
                    continue
                if call.parse_error:
                    self._result(call, f"error: {call.parse_error}")
                    continue
                if mnemonic not in ("ANS", "CAN"):
                    self._run_function(call, mnemonic)
                    continue
                outcome = self._terminal(call, mnemonic)
                if outcome is None:
                    continue
                if not cfg.feedback_enabled or trace.feedback_loops >= cfg.max_feedback_loops:
                    trace.outcome = outcome
                    return trace
                try:
                    verdict, convo = feedback_round(call.arguments, cfg.rules, self.feedback_model, call.name)
                except TransportError as e:
                    raise SessionAborted(str(e), trace) from e
                trace.verdicts.append(verdict)
                trace.feedback_conversations.append(convo)
                if verdict.status == "done":
                    trace.outcome = outcome
                    return trace
                trace.feedback_loops += 1
                lead = ("Feedback on your output (refine it):" if verdict.status == "refine"
                        else "Feedback on your output (start over):")
                self._result(call, f"{lead} {verdict.message}", kind="feedback")
                for skipped in pending:
                    self._result(skipped, "skipped: the previous call ended the step")
                pending = []

        trace.outcome = Exhausted(trace.last_executed)
        return trace


def run_session(
    question: str,
    config: SessionConfig,
    catalog: Catalog,
    toolbox: Toolbox,
    model: ChatModel,
    feedback_model: ChatModel | None = None,
) -> SessionTrace:
    """Generate a SPARQL query for ``question``.

    Raises SessionAborted if the chat endpoint fails; running out of turns
    yields an Exhausted outcome carrying the last successfully executed query.
    """
    if not question.strip():
        raise ValueError("question must not be empty")
    return _Session(question, config, catalog, toolbox, model, feedback_model).run()


def offered_functions(tools: Iterable[Mapping]) -> set[str]:
    return {NAME_TO_MNEMONIC[t["function"]["name"]] for t in tools}
