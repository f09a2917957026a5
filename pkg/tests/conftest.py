from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from ctrlbot.control import ControlConfig, Engine, Policy
from ctrlbot.generation import GenerationConfig, MockExtractiveBackend, Mode
from ctrlbot.knowledge import load_knowledge_base
from ctrlbot.retrieval import Method, RetrievalConfig

FIXTURES = Path(__file__).parent / "fixtures"
CONFECTIONER = FIXTURES / "confectioner"
QA_EVAL = FIXTURES / "qa_eval.jsonl"
DIALOGUES = FIXTURES / "dialogues.jsonl"
EVAL_CONFIG = FIXTURES / "eval_config.json"


@pytest.fixture
def kb():
    return load_knowledge_base(CONFECTIONER)


@pytest.fixture
def engine(kb):
    return Engine(kb, config=eval_config())


def eval_config(**overrides) -> ControlConfig:
    """The corpus default: Hybrid retrieval, standard prompting, rules keep
    supportive answers."""
    config = ControlConfig(
        retrieval=RetrievalConfig(method=Method.HYBRID, w_text=0.5, w_meta=0.3,
                                  w_vec=0.2, k=3),
        generation=GenerationConfig(mode=Mode.STANDARD_PROMPT),
        invocation_policy=Policy.ON_NONE_FOUND,
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


class CountingBackend:
    """Wraps the mock backend and counts every completion call."""

    def __init__(self):
        self.calls = 0
        self._inner = MockExtractiveBackend()

    def complete(self, prompt, temperature):
        self.calls += 1
        return self._inner.complete(prompt, temperature)

    def healthy(self):
        return True
