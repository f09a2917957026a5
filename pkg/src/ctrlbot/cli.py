"""Operator command line: validate and index knowledge bases, ask one-off
questions, run eval corpora, chat interactively, and launch the service.

Exit codes: 0 success, 1 validation/eval failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import retrieval
from .control import ControlConfig, Engine, control_level, trace_to_dict
from .errors import KnowledgeLoadError
from .knowledge import knowledge_base_counts, load_knowledge_base


def _load_config(path: Optional[str]) -> ControlConfig:
    if not path:
        return ControlConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ControlConfig.from_dict(data)


def _load_engine(kb_dir: str, config_path: Optional[str]) -> Engine:
    kb = load_knowledge_base(kb_dir)
    return Engine(kb, config=_load_config(config_path))


def _trace_line(trace) -> str:
    top = ",".join(s.id for s in trace.retrieved[:3]) or "-"
    return (f"[path={trace.path.value} strength={trace.match.strength.value} "
            f"kind={trace.question_kind} docs={top}]")


# --- commands ------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        kb = load_knowledge_base(args.kb_dir)
    except KnowledgeLoadError as exc:
        for error in exc.errors:
            print(f"error: {error}", file=sys.stderr)
        print(f"{len(exc.errors)} error(s) found", file=sys.stderr)
        return 1
    counts = knowledge_base_counts(kb)
    print("knowledge base OK: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_ask(args) -> int:
    engine = _load_engine(args.kb_dir, args.config)
    _sid, answer, trace = engine.chat(args.question)
    print(answer)
    print(_trace_line(trace))
    return 0


def cmd_index(args) -> int:
    kb = load_knowledge_base(args.kb_dir)
    index = retrieval.build_index(kb.documents.values(), kb)
    retrieval.save_index(index, args.out_file)
    print(f"indexed {index.doc_count} document(s), "
          f"{len(index.vocabulary)} term(s) -> {args.out_file}")
    return 0


def run_eval(engine: Engine, cases: list[dict]) -> dict:
    """Run a QA corpus and build the deterministic machine-readable report.

    Each case: question, expected_path, optional expected_substring,
    optional prior_turns (scripted turns replayed into a fresh session).
    """
    results = []
    path_counts: dict[str, int] = {}
    hedged = 0
    grounding_violations = 0
    rag_routed = 0
    rag_with_contexts = 0
    for case in cases:
        session_id = None
        for prior in case.get("prior_turns", []):
            session_id, _, _ = engine.chat(prior, session_id)
        session_id, answer, trace = engine.chat(case["question"], session_id)
        actual = trace.path.value
        path_counts[actual] = path_counts.get(actual, 0) + 1
        if trace.hedged:
            hedged += 1
        if trace.path.value in ("RagGenerated", "RagNoGeneration", "Refusal"):
            rag_routed += 1
            if trace.retrieved:
                rag_with_contexts += 1
        grounded = None
        if trace.grounding is not None:
            grounded = trace.grounding["grounded"]
            if not grounded:
                grounding_violations += 1
        passed = actual == case["expected_path"]
        substring = case.get("expected_substring")
        if passed and substring is not None:
            passed = substring in answer
        results.append({
            "question": case["question"],
            "expected_path": case["expected_path"],
            "actual_path": actual,
            "expected_substring": substring,
            "answer": answer,
            "hedged": trace.hedged,
            "grounded": grounded,
            "passed": passed,
        })
    total = len(results)
    report = {
        "cases": results,
        "summary": {
            "total": total,
            "passed": sum(1 for r in results if r["passed"]),
            "failed": sum(1 for r in results if not r["passed"]),
            "path_distribution": dict(sorted(path_counts.items())),
            "hedge_rate": f"{hedged / total:.4f}" if total else "0.0000",
            "grounding_violations": grounding_violations,
            "retrieval_hit_rate": (f"{rag_with_contexts / rag_routed:.4f}"
                                   if rag_routed else "n/a"),
        },
    }
    return report


def render_eval_report(report: dict) -> str:
    lines = []
    for case in report["cases"]:
        status = "PASS" if case["passed"] else "FAIL"
        lines.append(f"{status}  expected={case['expected_path']:<22} "
                     f"actual={case['actual_path']:<22} {case['question']}")
    summary = report["summary"]
    lines.append("")
    lines.append("path distribution:")
    for path, count in summary["path_distribution"].items():
        lines.append(f"  {path:<22} {count}")
    lines.append(f"hedge rate:            {summary['hedge_rate']}")
    lines.append(f"retrieval hit rate:    {summary['retrieval_hit_rate']}")
    lines.append(f"grounding violations:  {summary['grounding_violations']}")
    lines.append(f"passed {summary['passed']}/{summary['total']}")
    return "\n".join(lines)


def load_qa_file(path: str) -> list[dict]:
    cases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            cases.append(json.loads(line))
    return cases


def cmd_eval(args) -> int:
    engine = _load_engine(args.kb_dir, args.config)
    cases = load_qa_file(args.qa_file)
    report = run_eval(engine, cases)
    print(render_eval_report(report))
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8")
    return 0 if report["summary"]["failed"] == 0 else 1


def cmd_chat(args) -> int:
    engine = _load_engine(args.kb_dir, args.config)
    session_id = None
    last_trace = None
    print("ctrlbot chat — /config [file], /trace, /reset, /quit")
    while True:
        try:
            line = input("> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/trace":
            print(json.dumps(trace_to_dict(last_trace), indent=2)
                  if last_trace else "no turns yet")
            continue
        if line == "/reset":
            if session_id:
                state = engine.sessions.get(session_id)
                if state:
                    state.reset()
            print("session reset")
            continue
        if line.startswith("/config"):
            parts = line.split(maxsplit=1)
            if len(parts) == 2:
                engine.set_config(_load_config(parts[1]))
            ordinal, label = control_level(engine.config)
            print(json.dumps({"ordinal": ordinal, "label": label,
                              "config": engine.config.to_dict()}, indent=2))
            continue
        session_id, answer, last_trace = engine.chat(line, session_id)
        print(answer)
        print(_trace_line(last_trace))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    engine = _load_engine(args.kb, args.config)
    app = create_app(engine, data_dir=args.data_dir, ui_dir=args.ui)
    host, _, port = args.listen.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080),
                log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrlbot")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a knowledge base and report problems")
    p.add_argument("kb_dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ask", help="answer one question and print the route taken")
    p.add_argument("kb_dir")
    p.add_argument("question")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("index", help="build and serialize a retrieval index")
    p.add_argument("kb_dir")
    p.add_argument("out_file")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("eval", help="run a question/expected-path corpus")
    p.add_argument("kb_dir")
    p.add_argument("qa_file")
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="interactive REPL")
    p.add_argument("kb_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--kb", required=True)
    p.add_argument("--listen", default="127.0.0.1:8080")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--ui", default=None, help="static console directory to mount at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KnowledgeLoadError as exc:
        for error in exc.errors:
            print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
