"""ctrlbot: a controllable hybrid chatbot engine.

Rule-based NLU answers what the fact sheets settle conclusively; everything
else goes through ranked retrieval and (optionally) generation, under
operator-selected control levers that decide which subsystem is allowed to
speak.
"""

from .control import ControlConfig, Engine, Policy, RoutePath, control_level
from .knowledge import KnowledgeBase, load_knowledge_base, save_knowledge_base
from .nlu import MatchResult, QuestionKind, Strength
from .retrieval import Method, RetrievalConfig, build_index, search

__version__ = "0.1.0"

__all__ = [
    "ControlConfig",
    "Engine",
    "KnowledgeBase",
    "MatchResult",
    "Method",
    "Policy",
    "QuestionKind",
    "RetrievalConfig",
    "RoutePath",
    "Strength",
    "build_index",
    "control_level",
    "load_knowledge_base",
    "save_knowledge_base",
    "search",
    "__version__",
]
