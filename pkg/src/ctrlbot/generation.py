"""Prompt construction, pluggable LLM backends, and grounding verification.

Nothing in this module can see the knowledge base: generation only receives
the contexts retrieval supplied, so an answer can never draw on knowledge
the retrieval step did not hand over. The built-in mock backend answers
extractively (verbatim sentences from the context), which keeps the whole
test suite offline and makes grounded=true provable rather than hoped for.
"""

from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol

import httpx

from .errors import (
    BackendRefusal,
    BackendTimeout,
    BackendUnavailable,
    EmptyContext,
    InvalidConfig,
)
from .knowledge import Document
from .nlu import preprocess, _is_word
from .retrieval import STOP_WORDS, ScoredDocument


class Mode(str, Enum):
    NO_GENERATION = "NoGeneration"
    DYNAMIC_PROMPT = "DynamicPrompt"
    STANDARD_PROMPT = "StandardPrompt"


@dataclass
class GenerationConfig:
    mode: Mode = Mode.STANDARD_PROMPT
    temperature: float = 0.0
    max_context_chars: int = 2000
    backend_id: str = "mock"

    def validate(self) -> None:
        if self.temperature < 0:
            raise InvalidConfig(f"temperature must be >= 0, got {self.temperature}")
        if self.max_context_chars < 1:
            raise InvalidConfig("max_context_chars must be positive")


@dataclass(frozen=True)
class Prompt:
    system_instruction: str  # raw template text with {context}/{query} placeholders
    context_blocks: tuple[tuple[str, str], ...]  # (document id, excerpt)
    user_query: str
    template_id: str


@dataclass
class GenerationResult:
    answer: str
    backend_id: str
    prompt: Prompt
    grounded: bool
    ungrounded_spans: list[str] = field(default_factory=list)


TEMPLATE_DIR = Path(__file__).parent / "templates"

# question kind -> template id for dynamic prompting
DYNAMIC_TEMPLATES = {
    "Factoid": "factoid",
    "Definition": "definition",
    "Procedural": "procedural",
    "YesNo": "yesno",
    "Smalltalk": "standard",
    "Unknown": "standard",
}

MOCK_REFUSAL = "I don't know."

# fixed strings whose vocabulary is always considered grounded
REFUSAL_STRINGS = (
    MOCK_REFUSAL,
    "I don't know based on the available information.",
)


def load_template(template_id: str, template_dir: Optional[Path] = None) -> str:
    """Read the template file on every call so editors can hot-edit them."""
    directory = Path(template_dir) if template_dir else TEMPLATE_DIR
    path = directory / f"{template_id}.txt"
    return path.read_text(encoding="utf-8")


def build_prompt(query: str, contexts: list[ScoredDocument],
                 documents: dict[str, Document], mode: Mode, question_kind,
                 max_context_chars: int = 2000,
                 template_dir: Optional[Path] = None) -> Prompt:
    """Assemble the augmented query: instruction template, retrieved context
    blocks in score order (prefix-truncated to max_context_chars each), then
    the user's question."""
    if mode == Mode.NO_GENERATION:
        raise InvalidConfig("build_prompt requires a generating mode")
    if not contexts:
        raise EmptyContext("no retrieved contexts to build a prompt from")
    if mode == Mode.DYNAMIC_PROMPT:
        template_id = DYNAMIC_TEMPLATES.get(getattr(question_kind, "value", str(question_kind)),
                                            "standard")
    else:
        template_id = "standard"
    blocks = tuple(
        (scored.id, documents[scored.id].body[:max_context_chars])
        for scored in contexts
    )
    return Prompt(
        system_instruction=load_template(template_id, template_dir),
        context_blocks=blocks,
        user_query=query,
        template_id=template_id,
    )


def render_prompt(prompt: Prompt) -> str:
    context = "\n\n".join(f"[{doc_id}]\n{excerpt}"
                          for doc_id, excerpt in prompt.context_blocks)
    return prompt.system_instruction.format(context=context, query=prompt.user_query)


# --- backends -----------------------------------------------------------------

class Backend(Protocol):
    def complete(self, prompt: Prompt, temperature: float) -> str: ...

    def healthy(self) -> bool: ...


_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def _word_tokens(text: str) -> list[str]:
    _, tokens = preprocess(text)
    return [t.surface for t in tokens if _is_word(t.surface)]


def extractive_generate(prompt: Prompt) -> str:
    """Mock generation: return the two context sentences sharing the most
    non-stop-word query lemmas, verbatim and in document order; refuse when
    nothing overlaps."""
    query_terms = {t for t in _word_tokens(prompt.user_query) if t not in STOP_WORDS}
    sentences: list[str] = []
    for _doc_id, excerpt in prompt.context_blocks:
        sentences.extend(s.strip() for s in _SENTENCE_RE.split(excerpt) if s.strip())
    scored = []
    for order, sentence in enumerate(sentences):
        overlap = len(query_terms & set(_word_tokens(sentence)))
        if overlap > 0:
            scored.append((-overlap, order, sentence))
    if not scored:
        return MOCK_REFUSAL
    scored.sort()
    top = sorted(scored[:2], key=lambda item: item[1])
    return " ".join(sentence for _, _, sentence in top)


class MockExtractiveBackend:
    """Deterministic offline backend used throughout the test suite."""

    def complete(self, prompt: Prompt, temperature: float) -> str:
        return extractive_generate(prompt)

    def healthy(self) -> bool:
        return True


class RemoteChatBackend:
    """Chat-completions-style HTTP backend.

    The auth token comes from an environment variable only, never from
    configuration files. In-flight requests are capped by a semaphore; the
    rest queue.
    """

    def __init__(self, base_url: str, model: str,
                 path: str = "/v1/chat/completions",
                 auth_env: str = "CTRLBOT_BACKEND_TOKEN",
                 timeout: float = 30.0, max_in_flight: int = 4):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.path = path
        self.auth_env = auth_env
        self.timeout = timeout
        self._slots = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        token = os.environ.get(self.auth_env)
        if token:
            headers["authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: Prompt, temperature: float) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": render_prompt(prompt)}],
            "temperature": temperature,
        }
        with self._slots:
            try:
                response = httpx.post(self.base_url + self.path, json=payload,
                                      headers=self._headers(), timeout=self.timeout)
                response.raise_for_status()
            except httpx.TimeoutException as exc:
                raise BackendTimeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise BackendUnavailable(str(exc)) from exc
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(f"malformed backend response: {exc}") from exc

    def healthy(self) -> bool:
        try:
            httpx.get(self.base_url, timeout=5.0)
            return True
        except httpx.HTTPError:
            return False


def generate(backends: dict[str, Backend], prompt: Prompt,
             config: GenerationConfig) -> GenerationResult:
    """Invoke the configured backend and attach a grounding report. Backend
    failures surface as errors; they are never converted into answers."""
    backend = backends.get(config.backend_id)
    if backend is None:
        raise BackendUnavailable(f"no backend registered as {config.backend_id!r}")
    answer = backend.complete(prompt, config.temperature)
    if not answer or not answer.strip():
        raise BackendRefusal(f"backend {config.backend_id!r} returned an empty answer")
    grounded, spans = check_grounding(answer, prompt)
    return GenerationResult(answer=answer, backend_id=config.backend_id,
                            prompt=prompt, grounded=grounded, ungrounded_spans=spans)


# --- grounding -----------------------------------------------------------------

def check_grounding(answer: str, prompt: Prompt) -> tuple[bool, list[str]]:
    """Every content lemma of the answer must occur in a context block, in
    the prompt template, or in a fixed refusal string. Maximal runs of
    failing tokens are reported as ungrounded spans."""
    allowed: set[str] = set()
    for _doc_id, excerpt in prompt.context_blocks:
        allowed.update(_word_tokens(excerpt))
    allowed.update(_word_tokens(prompt.system_instruction))
    for fixed in REFUSAL_STRINGS:
        allowed.update(_word_tokens(fixed))

    normalized, tokens = preprocess(answer)
    spans: list[str] = []
    run_start = None
    run_end = None
    for token in tokens:
        # stop words and punctuation neither start, extend, nor close a run
        if not _is_word(token.surface) or token.surface in STOP_WORDS:
            continue
        if token.surface not in allowed:
            if run_start is None:
                run_start = token.span[0]
            run_end = token.span[1]
        elif run_start is not None:
            spans.append(normalized[run_start:run_end])
            run_start = None
    if run_start is not None:
        spans.append(normalized[run_start:run_end])
    return (not spans, spans)
