"""Exception hierarchy shared by all ctrlbot modules."""

from __future__ import annotations


class CtrlbotError(Exception):
    """Base class for every error raised by this package."""


# --- knowledge base -------------------------------------------------------

class KnowledgeError(CtrlbotError):
    pass


class MalformedFile(KnowledgeError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class DanglingReference(KnowledgeError):
    def __init__(self, source: str, target: str):
        super().__init__(f"{source} references unknown target {target!r}")
        self.source = source
        self.target = target


class CyclicOntology(KnowledgeError):
    def __init__(self, cycle: list[str]):
        super().__init__("isa cycle: " + " -> ".join(cycle))
        self.cycle = list(cycle)


class KnowledgeLoadError(KnowledgeError):
    """Aggregate of every problem found while loading a knowledge base."""

    def __init__(self, errors: list[KnowledgeError]):
        super().__init__(f"{len(errors)} error(s) loading knowledge base")
        self.errors = list(errors)


class UnknownDocument(KnowledgeError):
    pass


class UnknownConcept(KnowledgeError):
    pass


class EmptyBody(KnowledgeError):
    pass


# --- matching / generation ------------------------------------------------

class NoAnswerableMatch(CtrlbotError):
    """A rule answer was requested for a match with strength None."""


class InvalidConfig(CtrlbotError):
    """A retrieval/generation/control configuration violates an invariant."""


class EmptyContext(CtrlbotError):
    """Prompt construction was attempted without any retrieved context."""


class BackendError(CtrlbotError):
    pass


class BackendUnavailable(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class BackendRefusal(BackendError):
    """The backend returned an empty answer."""
