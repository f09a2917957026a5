"""Conversation management: routing policy, control levers, session state.

Per turn the engine runs a fixed decision procedure: rules first, and the
LLM path only under the configured invocation policy — on any non-conclusive
match, or only when the rules found nothing relevant at all. Every turn
yields a RoutingTrace recording which path answered and why, against the
exact configuration snapshot in force, so any answer can be audited and
replayed.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import generation as gen
from . import nlu
from . import retrieval
from .errors import BackendError, InvalidConfig
from .knowledge import KnowledgeBase

DEFAULT_REFUSAL = "I don't know based on the available information."


class Policy(str, Enum):
    ON_NOT_CONCLUSIVE = "OnNotConclusive"
    ON_NONE_FOUND = "OnNoneFound"


class RoutePath(str, Enum):
    RULE_CONCLUSIVE = "RuleConclusive"
    RULE_SUPPORTIVE_HEDGED = "RuleSupportiveHedged"
    RAG_GENERATED = "RagGenerated"
    RAG_NO_GENERATION = "RagNoGeneration"
    REFUSAL = "Refusal"


@dataclass
class ControlConfig:
    retrieval: retrieval.RetrievalConfig = field(default_factory=retrieval.RetrievalConfig)
    generation: gen.GenerationConfig = field(default_factory=gen.GenerationConfig)
    invocation_policy: Policy = Policy.ON_NOT_CONCLUSIVE
    nlu_enabled: bool = True
    refusal_text: str = DEFAULT_REFUSAL

    def validate(self) -> None:
        self.retrieval.validate()
        self.generation.validate()

    def to_dict(self) -> dict:
        return {
            "retrieval": {
                "method": self.retrieval.method.value,
                "w_text": self.retrieval.w_text,
                "w_meta": self.retrieval.w_meta,
                "w_vec": self.retrieval.w_vec,
                "k": self.retrieval.k,
            },
            "generation": {
                "mode": self.generation.mode.value,
                "temperature": self.generation.temperature,
                "max_context_chars": self.generation.max_context_chars,
                "backend_id": self.generation.backend_id,
            },
            "invocation_policy": self.invocation_policy.value,
            "nlu_enabled": self.nlu_enabled,
            "refusal_text": self.refusal_text,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlConfig":
        """Parse the config document schema shared by PUT /config and the
        CLI --config file. Raises InvalidConfig on any violation."""
        if not isinstance(data, dict):
            raise InvalidConfig("config document must be an object")
        unknown = set(data) - {"retrieval", "generation", "invocation_policy",
                               "nlu_enabled", "refusal_text"}
        if unknown:
            raise InvalidConfig(f"unknown config field(s): {', '.join(sorted(unknown))}")
        try:
            r = data.get("retrieval") or {}
            g = data.get("generation") or {}
            config = cls(
                retrieval=retrieval.RetrievalConfig(
                    method=retrieval.Method(r.get("method", "FullText")),
                    w_text=float(r.get("w_text", 0.5)),
                    w_meta=float(r.get("w_meta", 0.3)),
                    w_vec=float(r.get("w_vec", 0.2)),
                    k=int(r.get("k", 5)),
                ),
                generation=gen.GenerationConfig(
                    mode=gen.Mode(g.get("mode", "StandardPrompt")),
                    temperature=float(g.get("temperature", 0.0)),
                    max_context_chars=int(g.get("max_context_chars", 2000)),
                    backend_id=str(g.get("backend_id", "mock")),
                ),
                invocation_policy=Policy(data.get("invocation_policy", "OnNotConclusive")),
                nlu_enabled=bool(data.get("nlu_enabled", True)),
                refusal_text=str(data.get("refusal_text", DEFAULT_REFUSAL)),
            )
        except (ValueError, TypeError) as exc:
            raise InvalidConfig(str(exc)) from exc
        config.validate()
        return config


@dataclass
class ConversationState:
    session_id: str
    history: list[tuple[str, str]] = field(default_factory=list)  # (role, text)
    entities: list[tuple[str, Optional[str]]] = field(default_factory=list)
    created_at: float = 0.0
    last_active: float = 0.0

    def reset(self) -> None:
        self.history.clear()
        self.entities.clear()


@dataclass
class RoutingTrace:
    turn_id: int
    path: RoutePath
    match: nlu.MatchResult
    retrieved: list[retrieval.ScoredDocument]
    prompt: Optional[gen.Prompt]
    grounding: Optional[dict]
    config_snapshot: ControlConfig
    latency_ms: int
    question_kind: str = "Unknown"
    hedged: bool = False
    error: Optional[str] = None


def derive_query_metadata(utterance: nlu.ParsedUtterance) -> dict[str, str]:
    """Query-side metadata: the question kind becomes the 'intent' field and
    the first resolved concept becomes 'topic'."""
    metadata: dict[str, str] = {}
    if utterance.question_kind != nlu.QuestionKind.UNKNOWN:
        metadata["intent"] = utterance.question_kind.value.lower()
    for term in utterance.terms:
        if term.concept:
            metadata["topic"] = term.concept
            break
    return metadata


def handle_turn(state: ConversationState, utterance: str, config: ControlConfig,
                kb: KnowledgeBase, index: retrieval.Index,
                backends: dict[str, gen.Backend],
                clock: Callable[[], float] = time.time) -> tuple[str, RoutingTrace]:
    """Run one conversation turn through the routing procedure.

    Internal failures never escape: backend errors turn into the refusal
    answer with the error recorded in the trace.
    """
    config.validate()
    started = time.perf_counter()

    if config.nlu_enabled:
        parsed = nlu.understand(utterance, kb, state)
        match = nlu.match_knowledge(parsed, kb)
    else:
        parsed = nlu.ParsedUtterance(raw=utterance, normalized=utterance.lower(),
                                     tokens=[], chunks=[], clauses=[], terms=[],
                                     question_kind=nlu.QuestionKind.UNKNOWN)
        match = nlu.MatchResult(nlu.Strength.NONE, None)

    path: RoutePath
    answer: str
    retrieved: list[retrieval.ScoredDocument] = []
    prompt: Optional[gen.Prompt] = None
    grounding: Optional[dict] = None
    hedged = False
    error: Optional[str] = None

    if match.strength == nlu.Strength.CONCLUSIVE:
        rule_answer = nlu.formulate_answer(match, kb)
        answer, path = rule_answer.text, RoutePath.RULE_CONCLUSIVE
    elif match.strength == nlu.Strength.SUPPORTIVE and \
            config.invocation_policy == Policy.ON_NONE_FOUND:
        rule_answer = nlu.formulate_answer(match, kb)
        answer, path, hedged = rule_answer.text, RoutePath.RULE_SUPPORTIVE_HEDGED, True
    else:
        retrieved = retrieval.search(index, utterance, config.retrieval, kb,
                                     query_metadata=derive_query_metadata(parsed))
        if not retrieved:
            answer, path = config.refusal_text, RoutePath.REFUSAL
        elif config.generation.mode == gen.Mode.NO_GENERATION:
            top = kb.documents[retrieved[0].id]
            answer = f"{top.title}\n{top.body[:config.generation.max_context_chars]}"
            path = RoutePath.RAG_NO_GENERATION
        else:
            prompt = gen.build_prompt(
                utterance, retrieved, kb.documents, config.generation.mode,
                parsed.question_kind,
                max_context_chars=config.generation.max_context_chars)
            try:
                result = gen.generate(backends, prompt, config.generation)
                answer, path = result.answer, RoutePath.RAG_GENERATED
                grounding = {"grounded": result.grounded,
                             "ungrounded_spans": list(result.ungrounded_spans)}
            except BackendError as exc:
                answer, path = config.refusal_text, RoutePath.REFUSAL
                error = f"{type(exc).__name__}: {exc}"

    state.history.append(("user", utterance))
    state.history.append(("assistant", answer))
    for term in parsed.terms:
        if term.concept:
            sheet_id = None
            if match.sheet is not None and match.strength != nlu.Strength.NONE:
                sheet = kb.factsheets.get(match.sheet)
                if sheet is not None and nlu._compatible_concepts(sheet.concept,
                                                                  term.concept, kb):
                    sheet_id = match.sheet
            state.entities.append((term.concept, sheet_id))
    state.last_active = clock()

    trace = RoutingTrace(
        turn_id=len(state.history) // 2,
        path=path,
        match=match,
        retrieved=retrieved,
        prompt=prompt,
        grounding=grounding,
        config_snapshot=config,
        latency_ms=int((time.perf_counter() - started) * 1000),
        question_kind=parsed.question_kind.value,
        hedged=hedged,
        error=error,
    )
    return answer, trace


def trace_to_dict(trace: RoutingTrace) -> dict:
    """JSON-ready view of a trace, shared by the service API and the CLI."""
    return {
        "turn_id": trace.turn_id,
        "path": trace.path.value,
        "question_kind": trace.question_kind,
        "hedged": trace.hedged,
        "match": {
            "strength": trace.match.strength.value,
            "sheet": trace.match.sheet,
            "satisfied": [list(c) for c in trace.match.satisfied],
            "unverifiable": [list(c) for c in trace.match.unverifiable],
            "contradicted": [list(c) for c in trace.match.contradicted],
        },
        "retrieved": [
            {"id": s.id, "score": s.score,
             "components": {"text": s.components[0], "meta": s.components[1],
                            "vec": s.components[2]},
             "matched_fields": list(s.matched_fields)}
            for s in trace.retrieved
        ],
        "prompt": None if trace.prompt is None else {
            "template_id": trace.prompt.template_id,
            "system_instruction": trace.prompt.system_instruction,
            "context_blocks": [list(b) for b in trace.prompt.context_blocks],
            "user_query": trace.prompt.user_query,
        },
        "grounding": trace.grounding,
        "config_snapshot": trace.config_snapshot.to_dict(),
        "latency_ms": trace.latency_ms,
        "error": trace.error,
    }


# --- control level -----------------------------------------------------------

def control_level(config: ControlConfig) -> tuple[int, str]:
    """Ordinal control summary: retrieval tightness plus generation restraint.

    (MetadataOnly, NoGeneration) is the unique maximum; vectorized retrieval
    with a standard prompt sits at the bottom of the scale.
    """
    config.validate()
    method = config.retrieval.method
    if method == retrieval.Method.METADATA_ONLY:
        r = 2
    elif method in (retrieval.Method.FULL_TEXT, retrieval.Method.SEMANTIC):
        r = 1
    elif method == retrieval.Method.HYBRID:
        r = 1 if config.retrieval.w_meta > 0 else 0
    else:  # Vector
        r = 0
    mode = config.generation.mode
    g = {gen.Mode.NO_GENERATION: 3, gen.Mode.DYNAMIC_PROMPT: 2,
         gen.Mode.STANDARD_PROMPT: 1}[mode]
    ordinal = r + g - 1
    if ordinal >= 4:
        label = "maximum control"
    elif ordinal <= 1:
        label = "low control"
    else:
        label = "medium control"
    return ordinal, label


# --- sessions ------------------------------------------------------------------

class SessionStore:
    """Owns conversation states; turns within one session are serialized by
    the caller holding the per-session lock."""

    def __init__(self, clock: Callable[[], float] = time.time):
        self._clock = clock
        self._sessions: dict[str, ConversationState] = {}
        self._lock = threading.Lock()
        self._turn_locks: dict[str, threading.Lock] = {}

    def get_or_create(self, session_id: Optional[str] = None) -> ConversationState:
        with self._lock:
            if session_id is None:
                session_id = uuid.uuid4().hex
            state = self._sessions.get(session_id)
            if state is None:
                now = self._clock()
                state = ConversationState(session_id=session_id,
                                          created_at=now, last_active=now)
                self._sessions[session_id] = state
            return state

    def get(self, session_id: str) -> Optional[ConversationState]:
        with self._lock:
            return self._sessions.get(session_id)

    def turn_lock(self, session_id: str):
        with self._lock:
            return self._turn_locks.setdefault(session_id, threading.Lock())

    def expire_sessions(self, max_idle: float) -> int:
        """Evict sessions idle strictly longer than max_idle seconds."""
        now = self._clock()
        with self._lock:
            stale = [sid for sid, s in self._sessions.items()
                     if now - s.last_active > max_idle]
            for sid in stale:
                del self._sessions[sid]
                self._turn_locks.pop(sid, None)
            return len(stale)

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


# --- engine aggregate -------------------------------------------------------------

class Engine:
    """Single source of truth behind both the CLI and the HTTP service.

    Config changes land at the next turn boundary: each turn works from a
    snapshot taken when it starts, and the trace records that snapshot.
    """

    def __init__(self, kb: KnowledgeBase, index: Optional[retrieval.Index] = None,
                 config: Optional[ControlConfig] = None,
                 backends: Optional[dict[str, gen.Backend]] = None,
                 clock: Callable[[], float] = time.time):
        self.kb = kb
        self.index = index if index is not None else retrieval.build_index(
            kb.documents.values(), kb)
        self.config = config or ControlConfig()
        self.config.validate()
        self.backends = backends if backends is not None else {
            "mock": gen.MockExtractiveBackend()}
        self.sessions = SessionStore(clock)
        self.clock = clock

    def chat(self, message: str, session_id: Optional[str] = None
             ) -> tuple[str, str, RoutingTrace]:
        state = self.sessions.get_or_create(session_id)
        with self.sessions.turn_lock(state.session_id):
            snapshot = self.config
            answer, trace = handle_turn(state, message, snapshot, self.kb,
                                        self.index, self.backends, self.clock)
        return state.session_id, answer, trace

    def set_config(self, config: ControlConfig) -> tuple[int, str]:
        config.validate()
        self.config = config
        return control_level(config)

    def reindex(self) -> retrieval.Index:
        new_index = retrieval.build_index(self.kb.documents.values(), self.kb)
        self.index = new_index
        return new_index
