from __future__ import annotations

import itertools
import json
import threading

import pytest

from conftest import DIALOGUES, CountingBackend, eval_config

from ctrlbot import retrieval
from ctrlbot.control import (
    ControlConfig,
    ConversationState,
    Engine,
    Policy,
    RoutePath,
    SessionStore,
    control_level,
    handle_turn,
    trace_to_dict,
)
from ctrlbot.errors import BackendUnavailable, InvalidConfig
from ctrlbot.generation import GenerationConfig, Mode
from ctrlbot.nlu import Strength
from ctrlbot.retrieval import Method, RetrievalConfig


def load_dialogues():
    dialogues = []
    for line in DIALOGUES.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            dialogues.append(json.loads(line))
    return dialogues


def config_for(method=Method.HYBRID, mode=Mode.STANDARD_PROMPT,
               policy=Policy.ON_NONE_FOUND, **kw):
    return eval_config(
        retrieval=RetrievalConfig(method=method, w_text=0.5, w_meta=0.3,
                                  w_vec=0.2, k=3),
        generation=GenerationConfig(mode=mode),
        invocation_policy=policy, **kw)


class TestHandleTurn:
    def test_conclusive_never_calls_backend_or_retrieval(self, kb, monkeypatch):
        calls = {"search": 0}
        original = retrieval.search

        def counting_search(*args, **kwargs):
            calls["search"] += 1
            return original(*args, **kwargs)

        monkeypatch.setattr(retrieval, "search", counting_search)
        backend = CountingBackend()
        for policy, mode in itertools.product(Policy, Mode):
            engine = Engine(kb, config=config_for(mode=mode, policy=policy),
                            backends={"mock": backend})
            _, _, trace = engine.chat("Do you sell pralines?")
            assert trace.path == RoutePath.RULE_CONCLUSIVE
        assert backend.calls == 0
        assert calls["search"] == 0

    def test_supportive_on_none_found_stays_hedged(self, kb):
        engine = Engine(kb, config=config_for(policy=Policy.ON_NONE_FOUND))
        _, answer, trace = engine.chat("Do you have chocolate containing nuts?")
        assert trace.path == RoutePath.RULE_SUPPORTIVE_HEDGED
        assert trace.hedged
        assert "could not verify" in answer

    def test_supportive_on_not_conclusive_goes_to_rag(self, kb):
        engine = Engine(kb, config=config_for(policy=Policy.ON_NOT_CONCLUSIVE))
        _, _, trace = engine.chat("Do you have chocolate containing nuts?")
        assert trace.path == RoutePath.RAG_GENERATED
        assert trace.grounding is not None and trace.grounding["grounded"]

    def test_empty_retrieval_refuses(self, kb):
        engine = Engine(kb, config=config_for())
        _, answer, trace = engine.chat("xyzzy blorp")
        assert trace.path == RoutePath.REFUSAL
        assert answer == engine.config.refusal_text

    def test_no_generation_answers_with_title_and_excerpt(self, kb):
        config = config_for(mode=Mode.NO_GENERATION)
        config.generation.max_context_chars = 40
        engine = Engine(kb, config=config, backends={})
        _, answer, trace = engine.chat("How do I return an order?")
        assert trace.path == RoutePath.RAG_NO_GENERATION
        top = kb.documents[trace.retrieved[0].id]
        assert answer == f"{top.title}\n{top.body[:40]}"

    def test_no_generation_requires_no_backend(self, kb):
        engine = Engine(kb, config=config_for(mode=Mode.NO_GENERATION), backends={})
        for question in ["When is the workshop store open?", "xyzzy blorp",
                         "Do you sell pralines?"]:
            engine.chat(question)  # must not raise

    def test_backend_error_becomes_refusal_with_trace_note(self, kb):
        class FailingBackend:
            def complete(self, prompt, temperature):
                raise BackendUnavailable("llm down")

            def healthy(self):
                return False

        engine = Engine(kb, config=config_for(),
                        backends={"mock": FailingBackend()})
        _, answer, trace = engine.chat("How do I return an order?")
        assert trace.path == RoutePath.REFUSAL
        assert answer == engine.config.refusal_text
        assert "BackendUnavailable" in trace.error

    def test_nlu_disabled_routes_everything_to_rag(self, kb):
        engine = Engine(kb, config=config_for(nlu_enabled=False))
        _, _, trace = engine.chat("Do you sell pralines?")
        assert trace.path in (RoutePath.RAG_GENERATED, RoutePath.RAG_NO_GENERATION)
        assert trace.match.strength == Strength.NONE

    def test_entities_accumulate_for_reference(self, kb):
        engine = Engine(kb, config=config_for())
        sid, _, trace1 = engine.chat("Tell me about dark chocolate.")
        state = engine.sessions.get(sid)
        assert ("dark_chocolate", "dark-chocolate") in state.entities
        _, answer, trace2 = engine.chat("Does it contain nuts?", sid)
        assert trace2.path == RoutePath.RULE_SUPPORTIVE_HEDGED
        assert trace2.match.unverifiable == [("contains", "nut")]

    def test_trace_invariants(self, kb):
        engine = Engine(kb, config=config_for())
        for question in ["Do you sell pralines?", "How do I return an order?",
                         "xyzzy blorp"]:
            _, _, trace = engine.chat(question)
            if trace.path == RoutePath.RULE_CONCLUSIVE:
                assert trace.prompt is None
            if trace.path == RoutePath.RAG_GENERATED:
                assert trace.prompt is not None
            assert trace.config_snapshot is not None
            assert trace.latency_ms >= 0

    def test_invalid_config_rejected(self, kb):
        bad = config_for()
        bad.retrieval = RetrievalConfig(method=Method.HYBRID, w_text=0.9,
                                        w_meta=0.3, w_vec=0.3)
        state = ConversationState(session_id="s")
        index = retrieval.build_index(kb.documents.values(), kb)
        with pytest.raises(InvalidConfig):
            handle_turn(state, "hi", bad, kb, index, {})


class TestPolicyRefinement:
    def test_rag_turns_under_on_none_found_subset_of_on_not_conclusive(self, kb):
        rag_paths = {RoutePath.RAG_GENERATED, RoutePath.RAG_NO_GENERATION,
                     RoutePath.REFUSAL}
        strict_somewhere = False
        for dialogue in load_dialogues():
            routed = {}
            for policy in (Policy.ON_NONE_FOUND, Policy.ON_NOT_CONCLUSIVE):
                engine = Engine(kb, config=config_for(policy=policy))
                sid = None
                turns = set()
                for i, text in enumerate(dialogue["turns"]):
                    sid, _, trace = engine.chat(text, sid)
                    if trace.path in rag_paths:
                        turns.add(i)
                routed[policy] = turns
            assert routed[Policy.ON_NONE_FOUND] <= routed[Policy.ON_NOT_CONCLUSIVE], \
                dialogue["name"]
            if routed[Policy.ON_NONE_FOUND] < routed[Policy.ON_NOT_CONCLUSIVE]:
                strict_somewhere = True
        assert strict_somewhere


class TestControlLevel:
    def test_maximum_anchor(self):
        config = config_for(method=Method.METADATA_ONLY, mode=Mode.NO_GENERATION)
        assert control_level(config) == (4, "maximum control")

    def test_minimum_anchor(self):
        config = config_for(method=Method.VECTOR, mode=Mode.STANDARD_PROMPT)
        ordinal, label = control_level(config)
        assert ordinal == 0 and label == "low control"

    def test_hybrid_without_metadata_shares_minimum(self):
        config = config_for(mode=Mode.STANDARD_PROMPT)
        config.retrieval = RetrievalConfig(method=Method.HYBRID, w_text=0.7,
                                           w_meta=0.0, w_vec=0.3)
        assert control_level(config) == (0, "low control")

    def test_unique_maximum_and_total_order(self):
        seen = []
        for method in Method:
            for mode in Mode:
                config = config_for(method=method, mode=mode)
                ordinal, label = control_level(config)
                seen.append(((method, mode), ordinal, label))
        top = [combo for combo, ordinal, _ in seen if ordinal == 4]
        assert top == [(Method.METADATA_ONLY, Mode.NO_GENERATION)]
        for combo, ordinal, label in seen:
            assert 0 <= ordinal <= 4
            if combo != (Method.METADATA_ONLY, Mode.NO_GENERATION) and \
                    combo != (Method.VECTOR, Mode.STANDARD_PROMPT):
                assert ordinal < 4
                if label == "medium control":
                    assert 2 <= ordinal <= 3


class TestSessions:
    def test_expire_empty_store(self):
        store = SessionStore(clock=lambda: 100.0)
        assert store.expire_sessions(60) == 0

    def test_expire_idle_session(self):
        now = {"t": 0.0}
        store = SessionStore(clock=lambda: now["t"])
        store.get_or_create("s1")
        now["t"] = 61.0
        assert store.expire_sessions(60) == 1
        assert len(store) == 0

    def test_boundary_exactly_max_idle_is_retained(self):
        now = {"t": 0.0}
        store = SessionStore(clock=lambda: now["t"])
        store.get_or_create("s1")
        now["t"] = 60.0
        assert store.expire_sessions(60) == 0
        assert store.get("s1") is not None

    def test_active_sessions_untouched(self):
        now = {"t": 0.0}
        store = SessionStore(clock=lambda: now["t"])
        store.get_or_create("old")
        now["t"] = 100.0
        store.get_or_create("fresh")
        assert store.expire_sessions(60) == 1
        assert store.get("fresh") is not None


class TestSnapshotSemantics:
    def test_in_flight_turn_keeps_old_config(self, kb):
        entered = threading.Event()
        release = threading.Event()

        class GatedBackend:
            def complete(self, prompt, temperature):
                entered.set()
                release.wait(timeout=5)
                return "Gift boxes are available in three sizes."

            def healthy(self):
                return True

        engine = Engine(kb, config=config_for(),
                        backends={"mock": GatedBackend()})
        result = {}

        def run_turn():
            _, _, trace = engine.chat("Do you have gift boxes?")
            result["trace"] = trace

        thread = threading.Thread(target=run_turn)
        thread.start()
        assert entered.wait(timeout=5)
        engine.set_config(config_for(method=Method.METADATA_ONLY,
                                     mode=Mode.NO_GENERATION))
        release.set()
        thread.join(timeout=5)
        snap = result["trace"].config_snapshot
        assert snap.retrieval.method == Method.HYBRID
        assert snap.generation.mode == Mode.STANDARD_PROMPT
        # and the *next* turn uses the new regime
        _, _, trace = engine.chat("Do you have gift boxes?")
        assert trace.config_snapshot.retrieval.method == Method.METADATA_ONLY


class TestReplay:
    def test_replaying_a_session_reproduces_paths_and_answers(self, kb):
        engine = Engine(kb, config=config_for())
        script = ["Tell me about dark chocolate.", "Does it contain nuts?",
                  "How do I return an order?", "xyzzy blorp"]
        sid = None
        logged = []
        for text in script:
            sid, answer, trace = engine.chat(text, sid)
            logged.append((text, answer, trace.path, trace_to_dict(trace)))
        replay_engine = Engine(kb, config=config_for())
        rid = None
        for text, answer, path, snapshot in logged:
            replay_config = ControlConfig.from_dict(snapshot["config_snapshot"])
            replay_engine.set_config(replay_config)
            rid, replay_answer, replay_trace = replay_engine.chat(text, rid)
            assert replay_answer == answer
            assert replay_trace.path == path


class TestConfigDocument:
    def test_round_trip(self):
        config = config_for(method=Method.SEMANTIC, mode=Mode.DYNAMIC_PROMPT,
                            policy=Policy.ON_NOT_CONCLUSIVE)
        assert ControlConfig.from_dict(config.to_dict()) == config

    def test_rejects_unknown_fields(self):
        with pytest.raises(InvalidConfig):
            ControlConfig.from_dict({"bogus": 1})

    def test_rejects_bad_weights(self):
        with pytest.raises(InvalidConfig):
            ControlConfig.from_dict({"retrieval": {
                "method": "Hybrid", "w_text": 0.5, "w_meta": 0.3, "w_vec": 0.3}})

    def test_rejects_bad_enum(self):
        with pytest.raises(InvalidConfig):
            ControlConfig.from_dict({"retrieval": {"method": "Telepathy"}})
