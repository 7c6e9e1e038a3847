"""Chat-completion LLM backend: HTTP client, flowsheet tool executor, proposer and scorer."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Optional, Sequence

import httpx

from .. import flowsheet as fsmod
from ..errors import (
    LlmUnavailable,
    LoopCapReached,
    ProcAgentError,
    SchemaError,
    ToolArgumentError,
)
from ..evaluator import DimensionScores, score_dimensions
from ..flowsheet import Flowsheet, create_flowsheet
from ..task import TaskSpec
from ..thermo import method_for
from .base import ExperienceLog

logger = logging.getLogger(__name__)

CREDENTIAL_ENV = ("PROCAGENT_API_KEY", "OPENAI_API_KEY")
TOOL_CALL_CAP = 40
CREATIVE_TEMPERATURE = 0.9  # topology generation, parameter configuration
PRECISE_TEMPERATURE = 0.1  # task understanding, evaluation
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


def load_prompt(name: str) -> str:
    return resources.files("procagent.prompts").joinpath(name).read_text(encoding="utf-8")


def fill(template: str, **values: str) -> str:
    """Placeholder substitution that leaves literal JSON braces alone."""
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------


@dataclass
class LlmConfig:
    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "gpt-4o"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    creative_temperature: float = CREATIVE_TEMPERATURE
    precise_temperature: float = PRECISE_TEMPERATURE

    def credential(self) -> Optional[str]:
        for name in CREDENTIAL_ENV:
            value = os.environ.get(name)
            if value:
                return value
        return None


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]
    id: str = ""
    # set when the model sent arguments that are not a JSON object
    malformed: Optional[str] = None


@dataclass
class AgentMessage:
    role: str
    content: str = ""
    tool_calls: list[ToolCall] = field(default_factory=list)
    tool_call_id: Optional[str] = None

    @property
    def tool_call(self) -> Optional[tuple[str, dict]]:
        return (self.tool_calls[0].name, self.tool_calls[0].arguments) if self.tool_calls else None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            doc["tool_calls"] = [
                {
                    "id": tc.id,
                    "type": "function",
                    "function": {
                        "name": tc.name,
                        "arguments": tc.malformed if tc.malformed is not None else json.dumps(tc.arguments),
                    },
                }
                for tc in self.tool_calls
            ]
        if self.tool_call_id is not None:
            doc["tool_call_id"] = self.tool_call_id
        return doc


@dataclass
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0
    attempts: int = 0
    seconds: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "calls": self.calls,
            "attempts": self.attempts,
            "seconds": self.seconds,
        }


def _parse_message(doc: dict[str, Any]) -> AgentMessage:
    try:
        msg = doc["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise LlmUnavailable(f"malformed chat-completion response: {exc}") from exc
    calls = []
    for raw in msg.get("tool_calls") or []:
        fn = raw.get("function", {})
        text = fn.get("arguments") or "{}"
        try:
            args = json.loads(text) if isinstance(text, str) else text
            bad = None if isinstance(args, dict) else text
        except json.JSONDecodeError:
            args, bad = {}, text
        calls.append(ToolCall(fn.get("name", ""), args if bad is None else {}, raw.get("id", ""), bad))
    return AgentMessage("assistant", msg.get("content") or "", calls)


class LlmClient:
    """OpenAI-style ``/chat/completions`` client with retries and usage accounting."""

    def __init__(self, config: LlmConfig = LlmConfig(), transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.usage = TokenUsage()
        self._lock = threading.Lock()
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = config.credential()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(base_url=config.base_url.rstrip("/"), headers=headers,
                                  timeout=config.timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def chat(self, messages: Sequence[AgentMessage], temperature: float,
             tools: Optional[list[dict]] = None, seed: Optional[int] = None) -> AgentMessage:
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": [m.to_wire() for m in messages],
            "temperature": temperature,
        }
        if tools:
            body["tools"] = tools
        if seed is not None:
            body["seed"] = seed
        start = time.perf_counter()
        last = "no attempt made"
        for attempt in range(self.config.max_attempts):
            with self._lock:
                self.usage.attempts += 1
            try:
                resp = self._http.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code < 300:
                    doc = resp.json()
                    usage = doc.get("usage") or {}
                    with self._lock:
                        self.usage.calls += 1
                        self.usage.prompt_tokens += int(usage.get("prompt_tokens", 0))
                        self.usage.completion_tokens += int(usage.get("completion_tokens", 0))
                        self.usage.seconds += time.perf_counter() - start
                    return _parse_message(doc)
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in RETRY_STATUS:
                    break
            logger.warning("chat attempt %d failed: %s", attempt + 1, last)
            if attempt + 1 < self.config.max_attempts:
                self._sleep(self.config.backoff * 2 ** attempt)
        with self._lock:
            self.usage.seconds += time.perf_counter() - start
        raise LlmUnavailable(last)


# ---------------------------------------------------------------------------
# Flowsheet tools
# ---------------------------------------------------------------------------


def _fn(name: str, description: str, properties: dict, required: list[str]) -> dict:
    return {
        "type": "function",
        "function": {
            "name": name,
            "description": description,
            "parameters": {"type": "object", "properties": properties, "required": required,
                           "additionalProperties": False},
        },
    }


TOOL_SCHEMAS = [
    _fn("create_flowsheet", "Start a new empty flowsheet, discarding the current one.",
        {"flowsheet_id": {"type": "string"}}, []),
    _fn("add_component", "Declare a chemical component by name.",
        {"name": {"type": "string"}}, ["name"]),
    _fn("set_property_method", "Choose IdealRaoult or Margules.",
        {"variant": {"type": "string", "enum": ["IdealRaoult", "Margules"]}}, ["variant"]),
    _fn("add_unit", "Add a unit operation and return its id.",
        {"kind": {"type": "string", "enum": list(fsmod.UNIT_KINDS)}, "params": {"type": "object"},
         "unit_id": {"type": "string"}}, ["kind"]),
    _fn("connect_streams", "Connect an outlet port to an inlet port with a new stream.",
        {"source_unit": {"type": "string"}, "source_port": {"type": "integer"},
         "target_unit": {"type": "string"}, "target_port": {"type": "integer"}},
        ["source_unit", "source_port", "target_unit", "target_port"]),
    _fn("delete_unit", "Delete a unit together with its attached streams.",
        {"unit_id": {"type": "string"}}, ["unit_id"]),
    _fn("save_design", "Finish and submit the current flowsheet.", {}, []),
]
TOOL_NAMES = tuple(t["function"]["name"] for t in TOOL_SCHEMAS)


class WorkflowTools:
    """Executes tool calls against one scratch flowsheet."""

    def __init__(self, fs: Flowsheet, task: Optional[TaskSpec] = None):
        self.fs = fs
        self.task = task
        self.saved = False

    def execute(self, call: ToolCall) -> str:
        if call.name not in TOOL_NAMES:
            raise ToolArgumentError(f"unknown tool {call.name!r}; available: {', '.join(TOOL_NAMES)}")
        if call.malformed is not None:
            raise ToolArgumentError(f"arguments for {call.name} are not a JSON object: {call.malformed[:100]}")
        schema = TOOL_SCHEMAS[TOOL_NAMES.index(call.name)]["function"]["parameters"]
        missing = [k for k in schema["required"] if k not in call.arguments]
        extra = [k for k in call.arguments if k not in schema["properties"]]
        if missing or extra:
            raise ToolArgumentError(f"{call.name}: missing {missing}, unexpected {extra}")
        try:
            return getattr(self, "_" + call.name)(**call.arguments)
        except (TypeError, ValueError) as exc:
            raise ToolArgumentError(f"{call.name}: {exc}") from exc

    def _create_flowsheet(self, flowsheet_id: Optional[str] = None) -> str:
        self.fs = create_flowsheet(self.task, flowsheet_id or self.fs.id)
        return f"created flowsheet {self.fs.id}"

    def _add_component(self, name: str) -> str:
        return f"component {self.fs.add_component(name)} declared"

    def _set_property_method(self, variant: str) -> str:
        pm = method_for(self.fs.components, variant)
        self.fs.set_property_method(pm.variant, pm.margules_params)
        return f"property method {variant}"

    def _add_unit(self, kind: str, params: Optional[dict] = None, unit_id: Optional[str] = None) -> str:
        uid = self.fs.add_unit(kind, params or {}, unit_id)
        n_in, n_out = self.fs.units[uid].arity
        return f"added {kind} {uid} with {n_in} inlet(s) and {n_out} outlet(s)"

    def _connect_streams(self, source_unit: str, source_port: int, target_unit: str, target_port: int) -> str:
        sid = self.fs.connect((source_unit, int(source_port)), (target_unit, int(target_port)))
        return f"stream {sid}: {source_unit}.out{source_port} -> {target_unit}.in{target_port}"

    def _delete_unit(self, unit_id: str) -> str:
        removed = self.fs.cascade_delete(unit_id)
        return "removed " + ", ".join(sorted(removed, key=fsmod.id_key))

    def _save_design(self) -> str:
        self.saved = True
        problems = fsmod.validate_topology(self.fs)
        return "saved" + ("" if not problems else "; open issues: " + "; ".join(map(str, problems)))


def llm_propose(client: LlmClient, messages: list[AgentMessage], tools: WorkflowTools, temperature: float,
                seed: Optional[int] = None, cap: int = TOOL_CALL_CAP) -> Flowsheet:
    """Tool-call loop until save_design or ``cap`` calls; returns the scratch flowsheet."""
    calls = 0
    failed_last = False
    while calls < cap:
        reply = client.chat(messages, temperature, TOOL_SCHEMAS, seed)
        messages.append(reply)
        if not reply.tool_calls:
            calls += 1
            messages.append(AgentMessage("user", "Continue with tool calls and finish with save_design."))
            continue
        for tc in reply.tool_calls:
            calls += 1
            try:
                result = tools.execute(tc)
                failed_last = False
            except ToolArgumentError as exc:
                if failed_last:
                    raise
                failed_last = True
                result = f"error: {exc}"
            except ProcAgentError as exc:
                result = f"error: {type(exc).__name__}: {exc}"
            messages.append(AgentMessage("tool", result, tool_call_id=tc.id))
            if tools.saved:
                return tools.fs
            if calls >= cap:
                break
    warnings.warn(LoopCapReached(f"no save_design after {cap} tool calls"), stacklevel=2)
    return tools.fs


def _few_shot() -> str:
    return json.dumps(json.loads(load_prompt("few_shot.json")), indent=1)


class LlmProposer:
    """Topology generation and parameter configuration through tool calls."""

    name = "llm"

    def __init__(self, client: LlmClient, count: int = 3):
        self.client = client
        self.count = count

    def seed_configurations(self, task: TaskSpec, seed: int) -> list[Flowsheet]:
        system = fill(load_prompt("topology_system.md"), few_shot=_few_shot())
        out = []
        for k in range(self.count):
            user = fill(load_prompt("seed_user.md"), task=json.dumps(task.to_dict()),
                        variant=str(k + 1), count=str(self.count))
            scratch = create_flowsheet(task, f"{task.id}-seed{k}")
            messages = [AgentMessage("system", system), AgentMessage("user", user)]
            try:
                out.append(llm_propose(self.client, messages, WorkflowTools(scratch, task),
                                       self.client.config.creative_temperature, seed + k))
            except (LlmUnavailable, ToolArgumentError) as exc:
                logger.warning("seed %d failed: %s", k, exc)
        return out

    def refine(self, fs: Flowsheet, directives: Sequence[str], log: ExperienceLog, seed: int,
               task: Optional[TaskSpec] = None) -> Flowsheet:
        scratch = fs.copy()
        scratch.clear_states()
        system = fill(load_prompt("refine_system.md"), few_shot=_few_shot())
        user = fill(
            load_prompt("refine_user.md"),
            task=json.dumps(task.to_dict()) if task else "(see flowsheet)",
            flowsheet=fsmod.dumps(scratch),
            directives="\n".join(f"- {d}" for d in directives) or "(none)",
            log=log.render(),
        )
        messages = [AgentMessage("system", system), AgentMessage("user", user)]
        return llm_propose(self.client, messages, WorkflowTools(scratch, task),
                           self.client.config.creative_temperature, seed)


def _json_object(text: str) -> dict:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in reply")
    return json.loads(text[start:end + 1])


class LlmScorer:
    """Dimension scorer backed by the chat model; falls back to the heuristic on bad replies."""

    def __init__(self, client: LlmClient):
        self.client = client

    def __call__(self, fs: Flowsheet, sim, task=None) -> DimensionScores:
        user = fill(
            load_prompt("evaluation_user.md"),
            task=json.dumps(task.to_dict()) if task else "(none)",
            flowsheet=fsmod.dumps(fs),
            simulation=json.dumps(sim.to_dict(), sort_keys=True),
        )
        messages = [AgentMessage("system", load_prompt("evaluation_system.md")), AgentMessage("user", user)]
        reply = self.client.chat(messages, self.client.config.precise_temperature)
        try:
            doc = _json_object(reply.content)
            return DimensionScores(*(min(100.0, max(0.0, float(doc[k]))) for k in ("Ef", "Es", "Ps", "Tf", "Tr")))
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("unusable evaluation reply (%s); using heuristic scores", exc)
            return score_dimensions(fs, sim, task)


def llm_parse_task(client: LlmClient, text: str, task_id: str = "task") -> TaskSpec:
    """Task understanding through the chat model, same result type as the rule-based parser."""
    messages = [AgentMessage("system", load_prompt("task_system.md")), AgentMessage("user", text)]
    reply = client.chat(messages, client.config.precise_temperature)
    try:
        doc = _json_object(reply.content)
    except ValueError as exc:
        raise SchemaError("/", f"task reply is not JSON: {exc}") from exc
    doc.setdefault("notes", text)
    doc["id"] = task_id
    return TaskSpec.from_dict(doc).validate()
