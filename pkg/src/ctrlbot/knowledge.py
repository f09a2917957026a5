"""Knowledge store: documents, fact sheets, ontology, lexicon, language rules.

Everything the assistant is allowed to say comes from here. A knowledge base
is loaded from a human-editable directory (layout in docs/kb-format.md) and
fully cross-validated before use: every concept reference must resolve, the
isa hierarchy must be acyclic, and a lemma may belong to at most one synonym
set so that term-to-concept mapping stays deterministic.
"""

from __future__ import annotations

import datetime as _dt
import json
import re
import threading
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from .errors import (
    CyclicOntology,
    DanglingReference,
    EmptyBody,
    KnowledgeError,
    KnowledgeLoadError,
    MalformedFile,
    UnknownConcept,
    UnknownDocument,
)

Scalar = Union[str, int, float, _dt.date]
MetaValue = Union[Scalar, list]


def normalize(text: str) -> str:
    """Canonical form used for all lemma/concept/value comparisons."""
    return unicodedata.normalize("NFKC", text).strip().lower()


class Pos(str, Enum):
    NOUN = "Noun"
    VERB = "Verb"
    ADJECTIVE = "Adjective"
    PRONOUN = "Pronoun"
    DETERMINER = "Determiner"
    PREPOSITION = "Preposition"
    OTHER = "Other"


class SheetKind(str, Enum):
    INDIVIDUAL = "Individual"
    KIND = "Kind"
    PROCESS = "Process"
    COLLECTION = "Collection"


@dataclass
class Document:
    id: str
    title: str
    body: str
    metadata: dict[str, MetaValue] = field(default_factory=dict)
    annotations: dict[str, str] = field(default_factory=dict)
    source: str = ""
    revision: int = 1


@dataclass(frozen=True)
class ConceptRef:
    """Explicit concept-valued slot entry ({"concept": ...} on disk)."""

    concept: str


SlotValue = Union[str, int, float, ConceptRef, list]


@dataclass
class FactSheet:
    id: str
    sheet_kind: SheetKind
    concept: str
    label: str
    slots: dict[str, SlotValue] = field(default_factory=dict)
    relations: list[tuple[str, str]] = field(default_factory=list)
    answer_text: Optional[str] = None


@dataclass(frozen=True)
class SynonymSet:
    concept: str
    lemmas: tuple[str, ...]


@dataclass(frozen=True)
class ParaphraseRule:
    pattern: tuple[str, ...]
    concept: str


@dataclass
class Ontology:
    concepts: set[str] = field(default_factory=set)
    isa: set[tuple[str, str]] = field(default_factory=set)
    synonym_sets: list[SynonymSet] = field(default_factory=list)
    paraphrase_rules: list[ParaphraseRule] = field(default_factory=list)
    implication_rules: list[tuple[str, str]] = field(default_factory=list)

    def parents(self, concept: str) -> list[str]:
        return sorted(p for c, p in self.isa if c == concept)


@dataclass
class LexiconEntry:
    surface: str
    lemma: str
    pos: Pos
    features: dict[str, object] = field(default_factory=dict)
    concept: Optional[str] = None


@dataclass(frozen=True)
class SuffixRule:
    suffix: str
    replace: str = ""
    features: tuple[tuple[str, object], ...] = ()


@dataclass(frozen=True)
class ChunkPattern:
    kind: str  # NP | VP | PP | Other
    items: tuple[tuple[str, str], ...]  # (pos name, quantifier in {"", "?", "*", "+"})
    head_pos: Optional[str] = None  # head = last matched token with this pos (else last token)


@dataclass
class LanguageRules:
    """Editor-extendable rule file content (rules.json in the kb directory)."""

    suffix_rules: list[SuffixRule] = field(default_factory=list)
    chunk_grammar: list[ChunkPattern] = field(default_factory=list)
    constraint_prepositions: dict[str, str] = field(default_factory=dict)
    constraint_verbs: dict[str, str] = field(default_factory=dict)


DEFAULT_RULES = LanguageRules(
    suffix_rules=[
        SuffixRule("es", "", (("number", "plural"),)),
        SuffixRule("s", "", (("number", "plural"),)),
    ],
    chunk_grammar=[
        ChunkPattern("NP", (("Determiner", "?"), ("Adjective", "*"), ("Noun", "+")), "Noun"),
        ChunkPattern("PP", (("Preposition", ""), ("Determiner", "?"), ("Adjective", "*"), ("Noun", "+")), "Noun"),
        ChunkPattern("VP", (("Verb", "+"),), "Verb"),
    ],
    constraint_prepositions={"with": "contains", "containing": "contains"},
    constraint_verbs={"contain": "contains"},
)


@dataclass
class KnowledgeBase:
    documents: dict[str, Document] = field(default_factory=dict)
    factsheets: dict[str, FactSheet] = field(default_factory=dict)
    ontology: Ontology = field(default_factory=Ontology)
    lexicon: list[LexiconEntry] = field(default_factory=list)
    rules: LanguageRules = field(default_factory=lambda: DEFAULT_RULES)

    # derived lookup tables, rebuilt whenever the lexicon/ontology change
    _by_surface: dict[str, list[LexiconEntry]] = field(
        default_factory=dict, compare=False, repr=False)
    _synonym_concept: dict[str, str] = field(default_factory=dict, compare=False, repr=False)
    _lemmas_by_concept: dict[str, tuple[str, ...]] = field(
        default_factory=dict, compare=False, repr=False)
    _write_lock: threading.Lock = field(
        default_factory=threading.Lock, compare=False, repr=False)

    def __post_init__(self):
        self.rebuild_caches()

    def rebuild_caches(self) -> None:
        by_surface: dict[str, list[LexiconEntry]] = {}
        for entry in self.lexicon:
            by_surface.setdefault(normalize(entry.surface), []).append(entry)
        self._by_surface = by_surface

        syn = {}
        for sset in self.ontology.synonym_sets:
            for lemma in sset.lemmas:
                syn[normalize(lemma)] = sset.concept
        self._synonym_concept = syn

        by_concept: dict[str, set[str]] = {}
        for sset in self.ontology.synonym_sets:
            by_concept.setdefault(sset.concept, set()).update(
                normalize(l) for l in sset.lemmas)
        for entry in self.lexicon:
            if entry.concept:
                by_concept.setdefault(entry.concept, set()).add(normalize(entry.lemma))
        self._lemmas_by_concept = {c: tuple(sorted(ls)) for c, ls in by_concept.items()}

    # --- lookups ----------------------------------------------------------

    def lexicon_entries(self, surface: str) -> list[LexiconEntry]:
        return self._by_surface.get(normalize(surface), [])

    def concept_of_lemma(self, lemma: str) -> Optional[str]:
        """Concept a lemma denotes, via its synonym set or lexicon entry."""
        lemma_n = normalize(lemma)
        concept = self._synonym_concept.get(lemma_n)
        if concept:
            return concept
        for entry in self.lexicon:
            if normalize(entry.lemma) == lemma_n and entry.concept:
                return entry.concept
        return None

    def lemmas_of_concept(self, concept: str) -> tuple[str, ...]:
        return self._lemmas_by_concept.get(concept, ())

    # --- document mutations (exclusive access via _write_lock) -------------

    def next_document_id(self) -> str:
        highest = 0
        for doc_id in self.documents:
            m = re.fullmatch(r"doc-(\d+)", doc_id)
            if m:
                highest = max(highest, int(m.group(1)))
        return f"doc-{highest + 1:04d}"


def ingest_document(kb: KnowledgeBase, title: str, body: str,
                    metadata: Optional[dict[str, MetaValue]] = None,
                    source: str = "api") -> str:
    """Store a new document with revision 1 and return its generated id."""
    if not body or not body.strip():
        raise EmptyBody("document body must be non-empty")
    with kb._write_lock:
        doc_id = kb.next_document_id()
        kb.documents[doc_id] = Document(
            id=doc_id, title=title, body=body,
            metadata=dict(metadata or {}), annotations={},
            source=source, revision=1)
        return doc_id


def annotate_document(kb: KnowledgeBase, doc_id: str, key: str, value: str) -> int:
    """Set one annotation (last write wins) and bump the revision by 1."""
    with kb._write_lock:
        doc = kb.documents.get(doc_id)
        if doc is None:
            raise UnknownDocument(doc_id)
        doc.annotations[key] = value
        doc.revision += 1
        return doc.revision


def delete_document(kb: KnowledgeBase, doc_id: str) -> None:
    with kb._write_lock:
        if doc_id not in kb.documents:
            raise UnknownDocument(doc_id)
        del kb.documents[doc_id]


# --- ontology queries -------------------------------------------------------

def is_subconcept(ontology: Ontology, a: str, b: str) -> bool:
    """True iff a reaches b through zero or more isa edges."""
    if a not in ontology.concepts:
        raise UnknownConcept(a)
    if b not in ontology.concepts:
        raise UnknownConcept(b)
    if a == b:
        return True
    seen = {a}
    frontier = [a]
    while frontier:
        nxt = []
        for c in frontier:
            for child, parent in ontology.isa:
                if child == c and parent not in seen:
                    if parent == b:
                        return True
                    seen.add(parent)
                    nxt.append(parent)
        frontier = nxt
    return False


def ancestors(ontology: Ontology, concept: str) -> tuple[str, ...]:
    """Proper ancestors of a concept along isa edges, sorted."""
    seen: set[str] = set()
    frontier = [concept]
    while frontier:
        nxt = []
        for c in frontier:
            for child, parent in ontology.isa:
                if child == c and parent not in seen:
                    seen.add(parent)
                    nxt.append(parent)
        frontier = nxt
    return tuple(sorted(seen))


def implied_concepts(ontology: Ontology, concept: str) -> tuple[str, ...]:
    """Concepts reachable over isa+implication edges using at least one
    implication edge (chocolate implies food; food isa product, so chocolate
    also implies product)."""
    out = set()
    seen = {(concept, False)}
    frontier = [(concept, False)]
    edges = [(c, p, False) for c, p in ontology.isa] + \
            [(a, b, True) for a, b in ontology.implication_rules]
    while frontier:
        nxt = []
        for node, used in frontier:
            for src, dst, is_impl in edges:
                if src != node:
                    continue
                state = (dst, used or is_impl)
                if state in seen:
                    continue
                seen.add(state)
                nxt.append(state)
                if state[1]:
                    out.add(dst)
        frontier = nxt
    out.discard(concept)
    return tuple(sorted(out))


@dataclass(frozen=True)
class TermExpansion:
    concept: Optional[str]
    synonyms: tuple[str, ...]
    generalizations: tuple[str, ...]
    implications: tuple[str, ...]


EMPTY_EXPANSION = TermExpansion(None, (), (), ())


def expand_term(kb: KnowledgeBase, lemma: str) -> TermExpansion:
    """Synonyms, isa generalizations, and implication consequents of a lemma.

    A lemma outside every synonym set yields the empty expansion.
    """
    concept = kb._synonym_concept.get(normalize(lemma))
    if concept is None:
        return EMPTY_EXPANSION
    synonyms = tuple(sorted({normalize(l) for s in kb.ontology.synonym_sets
                             if s.concept == concept for l in s.lemmas}))
    return TermExpansion(
        concept=concept,
        synonyms=synonyms,
        generalizations=ancestors(kb.ontology, concept),
        implications=implied_concepts(kb.ontology, concept),
    )


# --- directory loader -------------------------------------------------------

_RESERVED_DOC_KEYS = {"id", "title", "source", "revision"}

_DOC_FIELDS = _RESERVED_DOC_KEYS  # alias: the schema's reserved namespace
_SHEET_FIELDS = {"id", "kind", "concept", "label", "slots", "relations", "answer_text"}
_ONTOLOGY_FIELDS = {"concepts", "isa", "synonyms", "paraphrases", "implications"}
_LEXICON_FIELDS = {"entries"}
_LEXICON_ENTRY_FIELDS = {"surface", "lemma", "pos", "features", "concept"}
_RULES_FIELDS = {"suffix_rules", "chunk_grammar", "constraint_prepositions", "constraint_verbs"}

_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}")
_INT_RE = re.compile(r"[+-]?\d+")
_FLOAT_RE = re.compile(r"[+-]?\d+\.\d+")


def parse_meta_value(raw: str) -> MetaValue:
    """Front-matter value typing: date, int, float, tag list, else text."""
    raw = raw.strip()
    if _DATE_RE.fullmatch(raw):
        return _dt.date.fromisoformat(raw)
    if _INT_RE.fullmatch(raw):
        return int(raw)
    if _FLOAT_RE.fullmatch(raw):
        return float(raw)
    if "," in raw:
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw


def format_meta_value(value: MetaValue) -> str:
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, _dt.date):
        return value.isoformat()
    return str(value)


def _parse_front_matter(text: str, path: str) -> tuple[dict[str, str], str]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "---":
        raise MalformedFile(path, "missing front-matter opening '---'")
    fields: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            body_start = i + 1
            break
        if not line.strip():
            continue
        if ":" not in line:
            raise MalformedFile(path, f"front-matter line without ':': {line!r}")
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    if body_start is None:
        raise MalformedFile(path, "missing front-matter closing '---'")
    body = "\n".join(lines[body_start:]).strip("\n")
    return fields, body


def _load_document(path: Path) -> Document:
    fields, body = _parse_front_matter(path.read_text(encoding="utf-8"), str(path))
    if not body.strip():
        raise MalformedFile(str(path), "empty body")
    metadata: dict[str, MetaValue] = {}
    annotations: dict[str, str] = {}
    for key, value in fields.items():
        if key in _RESERVED_DOC_KEYS:
            continue
        if key.startswith("@"):
            annotations[key[1:]] = value
        else:
            metadata[key] = parse_meta_value(value)
    revision = fields.get("revision", "1")
    if not _INT_RE.fullmatch(revision):
        raise MalformedFile(str(path), f"revision is not an integer: {revision!r}")
    return Document(
        id=fields.get("id", path.stem),
        title=fields.get("title", path.stem),
        body=body,
        metadata=metadata,
        annotations=annotations,
        source=fields.get("source", str(path)),
        revision=int(revision),
    )


def _load_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedFile(str(path), "top level must be a JSON object")
    return data


def _reject_unknown(data: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise MalformedFile(path, f"unknown top-level field(s): {', '.join(unknown)}")


def _parse_slot_value(value, path: str) -> SlotValue:
    if isinstance(value, dict):
        if set(value) != {"concept"}:
            raise MalformedFile(path, f"slot object must be {{'concept': ...}}, got {value!r}")
        return ConceptRef(normalize(str(value["concept"])))
    if isinstance(value, list):
        return [_parse_slot_value(v, path) for v in value]
    if isinstance(value, (str, int, float)) and not isinstance(value, bool):
        return value
    raise MalformedFile(path, f"unsupported slot value {value!r}")


def _load_factsheet(path: Path) -> FactSheet:
    data = _load_json(path)
    _reject_unknown(data, _SHEET_FIELDS, str(path))
    for required in ("id", "kind", "concept", "label"):
        if required not in data:
            raise MalformedFile(str(path), f"missing field {required!r}")
    try:
        kind = SheetKind(data["kind"])
    except ValueError:
        raise MalformedFile(str(path), f"unknown sheet kind {data['kind']!r}") from None
    slots = {str(k): _parse_slot_value(v, str(path))
             for k, v in (data.get("slots") or {}).items()}
    relations = []
    for rel in data.get("relations") or []:
        if not (isinstance(rel, list) and len(rel) == 2):
            raise MalformedFile(str(path), f"relation must be [name, target]: {rel!r}")
        relations.append((str(rel[0]), str(rel[1])))
    return FactSheet(
        id=str(data["id"]),
        sheet_kind=kind,
        concept=normalize(str(data["concept"])),
        label=str(data["label"]),
        slots=slots,
        relations=relations,
        answer_text=data.get("answer_text"),
    )


def _load_ontology(path: Path) -> Ontology:
    data = _load_json(path)
    _reject_unknown(data, _ONTOLOGY_FIELDS, str(path))
    concepts = {normalize(str(c)) for c in data.get("concepts", [])}
    isa = set()
    for edge in data.get("isa", []):
        if not (isinstance(edge, list) and len(edge) == 2):
            raise MalformedFile(str(path), f"isa edge must be [child, parent]: {edge!r}")
        isa.add((normalize(str(edge[0])), normalize(str(edge[1]))))
    synonym_sets = []
    for sset in data.get("synonyms", []):
        if not isinstance(sset, dict) or set(sset) != {"concept", "lemmas"}:
            raise MalformedFile(str(path), f"synonym set must have concept+lemmas: {sset!r}")
        synonym_sets.append(SynonymSet(
            concept=normalize(str(sset["concept"])),
            lemmas=tuple(normalize(str(l)) for l in sset["lemmas"]),
        ))
    paraphrases = []
    for rule in data.get("paraphrases", []):
        if not isinstance(rule, dict) or set(rule) != {"pattern", "concept"}:
            raise MalformedFile(str(path), f"paraphrase must have pattern+concept: {rule!r}")
        paraphrases.append(ParaphraseRule(
            pattern=tuple(normalize(str(l)) for l in rule["pattern"]),
            concept=normalize(str(rule["concept"])),
        ))
    implications = []
    for rule in data.get("implications", []):
        if not (isinstance(rule, list) and len(rule) == 2):
            raise MalformedFile(str(path), f"implication must be [antecedent, consequent]: {rule!r}")
        implications.append((normalize(str(rule[0])), normalize(str(rule[1]))))
    return Ontology(concepts=concepts, isa=isa, synonym_sets=synonym_sets,
                    paraphrase_rules=paraphrases, implication_rules=implications)


def _load_lexicon(path: Path) -> list[LexiconEntry]:
    data = _load_json(path)
    _reject_unknown(data, _LEXICON_FIELDS, str(path))
    entries = []
    for raw in data.get("entries", []):
        if not isinstance(raw, dict):
            raise MalformedFile(str(path), f"lexicon entry must be an object: {raw!r}")
        _reject_unknown(raw, _LEXICON_ENTRY_FIELDS, str(path))
        if "surface" not in raw or "pos" not in raw:
            raise MalformedFile(str(path), f"lexicon entry needs surface+pos: {raw!r}")
        try:
            pos = Pos(raw["pos"])
        except ValueError:
            raise MalformedFile(str(path), f"unknown pos {raw['pos']!r}") from None
        surface = normalize(str(raw["surface"]))
        entries.append(LexiconEntry(
            surface=surface,
            lemma=normalize(str(raw.get("lemma", surface))),
            pos=pos,
            features=dict(raw.get("features") or {}),
            concept=normalize(str(raw["concept"])) if raw.get("concept") else None,
        ))
    return entries


def _load_rules(path: Path) -> LanguageRules:
    data = _load_json(path)
    _reject_unknown(data, _RULES_FIELDS, str(path))
    suffix_rules = []
    for raw in data.get("suffix_rules", []):
        suffix_rules.append(SuffixRule(
            suffix=str(raw["suffix"]),
            replace=str(raw.get("replace", "")),
            features=tuple(sorted((raw.get("features") or {}).items())),
        ))
    grammar = []
    for raw in data.get("chunk_grammar", []):
        items = []
        for item in raw["pattern"]:
            m = re.fullmatch(r"(\w+)([?*+]?)", item)
            if not m:
                raise MalformedFile(str(path), f"bad pattern item {item!r}")
            items.append((m.group(1), m.group(2)))
        grammar.append(ChunkPattern(kind=str(raw["kind"]), items=tuple(items),
                                    head_pos=raw.get("head")))
    return LanguageRules(
        suffix_rules=suffix_rules or list(DEFAULT_RULES.suffix_rules),
        chunk_grammar=grammar or list(DEFAULT_RULES.chunk_grammar),
        constraint_prepositions=dict(data.get("constraint_prepositions")
                                     or DEFAULT_RULES.constraint_prepositions),
        constraint_verbs=dict(data.get("constraint_verbs")
                              or DEFAULT_RULES.constraint_verbs),
    )


def _find_cycle(ontology: Ontology) -> Optional[list[str]]:
    children: dict[str, list[str]] = {}
    for child, parent in ontology.isa:
        children.setdefault(child, []).append(parent)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {c: WHITE for c in ontology.concepts}
    path: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        color[node] = GREY
        path.append(node)
        for parent in sorted(children.get(node, [])):
            if color.get(parent) == GREY:
                return path[path.index(parent):] + [parent]
            if color.get(parent) == WHITE:
                cycle = visit(parent)
                if cycle:
                    return cycle
        path.pop()
        color[node] = BLACK
        return None

    for concept in sorted(ontology.concepts):
        if color[concept] == WHITE:
            cycle = visit(concept)
            if cycle:
                return cycle
    return None


def validate_knowledge_base(kb: KnowledgeBase) -> list[KnowledgeError]:
    """Cross-reference checks; returns every violation found."""
    errors: list[KnowledgeError] = []
    onto = kb.ontology

    for child, parent in sorted(onto.isa):
        for end in (child, parent):
            if end not in onto.concepts:
                errors.append(DanglingReference(f"isa edge {child}->{parent}", end))
    cycle = _find_cycle(onto)
    if cycle:
        errors.append(CyclicOntology(cycle))

    seen_lemmas: dict[str, str] = {}
    for sset in onto.synonym_sets:
        if sset.concept not in onto.concepts:
            errors.append(DanglingReference(f"synonym set {sset.lemmas}", sset.concept))
        for lemma in sset.lemmas:
            if lemma in seen_lemmas and seen_lemmas[lemma] != sset.concept:
                errors.append(MalformedFile(
                    "ontology", f"lemma {lemma!r} appears in synonym sets for "
                    f"{seen_lemmas[lemma]!r} and {sset.concept!r}"))
            seen_lemmas[lemma] = sset.concept
    for rule in onto.paraphrase_rules:
        if rule.concept not in onto.concepts:
            errors.append(DanglingReference(f"paraphrase {rule.pattern}", rule.concept))
    for antecedent, consequent in onto.implication_rules:
        for end in (antecedent, consequent):
            if end not in onto.concepts:
                errors.append(DanglingReference(
                    f"implication {antecedent}->{consequent}", end))

    seen_pairs: set[tuple[str, Pos]] = set()
    for entry in kb.lexicon:
        pair = (entry.surface, entry.pos)
        if pair in seen_pairs:
            errors.append(MalformedFile(
                "lexicon", f"duplicate (surface, pos) pair {pair!r}"))
        seen_pairs.add(pair)
        if entry.concept and entry.concept not in onto.concepts:
            errors.append(DanglingReference(f"lexicon entry {entry.surface!r}", entry.concept))

    for sheet in sorted(kb.factsheets.values(), key=lambda s: s.id):
        if sheet.concept not in onto.concepts:
            errors.append(DanglingReference(f"factsheet {sheet.id}", sheet.concept))
        for name, target in sheet.relations:
            if target not in kb.factsheets:
                errors.append(DanglingReference(f"factsheet {sheet.id} relation {name}", target))
        for slot, value in sheet.slots.items():
            values = value if isinstance(value, list) else [value]
            for v in values:
                if isinstance(v, ConceptRef) and v.concept not in onto.concepts:
                    errors.append(DanglingReference(
                        f"factsheet {sheet.id} slot {slot}", v.concept))

    return errors


def load_knowledge_base(root_path: str | Path) -> KnowledgeBase:
    """Load and cross-validate a knowledge-base directory.

    Raises KnowledgeLoadError carrying every problem found, so `ctrlbot
    validate` can list them all at once. An empty directory is a valid,
    empty knowledge base.
    """
    root = Path(root_path)
    errors: list[KnowledgeError] = []

    documents: dict[str, Document] = {}
    doc_dir = root / "documents"
    if doc_dir.is_dir():
        for path in sorted(doc_dir.glob("*.md")):
            try:
                doc = _load_document(path)
                if doc.id in documents:
                    errors.append(MalformedFile(str(path), f"duplicate document id {doc.id!r}"))
                else:
                    documents[doc.id] = doc
            except KnowledgeError as exc:
                errors.append(exc)

    factsheets: dict[str, FactSheet] = {}
    sheet_dir = root / "factsheets"
    if sheet_dir.is_dir():
        for path in sorted(sheet_dir.glob("*.json")):
            try:
                sheet = _load_factsheet(path)
                if sheet.id in factsheets:
                    errors.append(MalformedFile(str(path), f"duplicate factsheet id {sheet.id!r}"))
                else:
                    factsheets[sheet.id] = sheet
            except KnowledgeError as exc:
                errors.append(exc)

    ontology = Ontology()
    onto_path = root / "ontology.json"
    if onto_path.is_file():
        try:
            ontology = _load_ontology(onto_path)
        except KnowledgeError as exc:
            errors.append(exc)

    lexicon: list[LexiconEntry] = []
    lex_path = root / "lexicon.json"
    if lex_path.is_file():
        try:
            lexicon = _load_lexicon(lex_path)
        except KnowledgeError as exc:
            errors.append(exc)

    rules = DEFAULT_RULES
    rules_path = root / "rules.json"
    if rules_path.is_file():
        try:
            rules = _load_rules(rules_path)
        except KnowledgeError as exc:
            errors.append(exc)

    kb = KnowledgeBase(documents=documents, factsheets=factsheets,
                       ontology=ontology, lexicon=lexicon, rules=rules)
    errors.extend(validate_knowledge_base(kb))
    if errors:
        raise KnowledgeLoadError(errors)
    return kb


# --- directory writer (round-trip support) ----------------------------------

def _slot_value_to_json(value: SlotValue):
    if isinstance(value, ConceptRef):
        return {"concept": value.concept}
    if isinstance(value, list):
        return [_slot_value_to_json(v) for v in value]
    return value


def save_knowledge_base(kb: KnowledgeBase, root_path: str | Path) -> None:
    """Write a knowledge base back out in the documented directory format."""
    root = Path(root_path)
    doc_dir = root / "documents"
    sheet_dir = root / "factsheets"
    doc_dir.mkdir(parents=True, exist_ok=True)
    sheet_dir.mkdir(parents=True, exist_ok=True)

    for doc in kb.documents.values():
        lines = ["---", f"id: {doc.id}", f"title: {doc.title}",
                 f"source: {doc.source}", f"revision: {doc.revision}"]
        for key in sorted(doc.metadata):
            lines.append(f"{key}: {format_meta_value(doc.metadata[key])}")
        for key in sorted(doc.annotations):
            lines.append(f"@{key}: {doc.annotations[key]}")
        lines.append("---")
        lines.append(doc.body)
        (doc_dir / f"{doc.id}.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

    for sheet in kb.factsheets.values():
        data = {
            "id": sheet.id,
            "kind": sheet.sheet_kind.value,
            "concept": sheet.concept,
            "label": sheet.label,
            "slots": {k: _slot_value_to_json(v) for k, v in sheet.slots.items()},
            "relations": [[name, target] for name, target in sheet.relations],
        }
        if sheet.answer_text is not None:
            data["answer_text"] = sheet.answer_text
        (sheet_dir / f"{sheet.id}.json").write_text(
            json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    onto = kb.ontology
    (root / "ontology.json").write_text(json.dumps({
        "concepts": sorted(onto.concepts),
        "isa": [list(edge) for edge in sorted(onto.isa)],
        "synonyms": [{"concept": s.concept, "lemmas": list(s.lemmas)}
                     for s in onto.synonym_sets],
        "paraphrases": [{"pattern": list(r.pattern), "concept": r.concept}
                        for r in onto.paraphrase_rules],
        "implications": [list(edge) for edge in onto.implication_rules],
    }, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    (root / "lexicon.json").write_text(json.dumps({
        "entries": [
            {k: v for k, v in {
                "surface": e.surface, "lemma": e.lemma, "pos": e.pos.value,
                "features": e.features or None, "concept": e.concept,
            }.items() if v is not None}
            for e in kb.lexicon
        ],
    }, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    (root / "rules.json").write_text(json.dumps({
        "suffix_rules": [
            {"suffix": r.suffix, "replace": r.replace, "features": dict(r.features)}
            for r in kb.rules.suffix_rules
        ],
        "chunk_grammar": [
            {"kind": p.kind, "pattern": [pos + quant for pos, quant in p.items],
             "head": p.head_pos}
            for p in kb.rules.chunk_grammar
        ],
        "constraint_prepositions": kb.rules.constraint_prepositions,
        "constraint_verbs": kb.rules.constraint_verbs,
    }, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def knowledge_base_counts(kb: KnowledgeBase) -> dict[str, int]:
    return {
        "documents": len(kb.documents),
        "factsheets": len(kb.factsheets),
        "concepts": len(kb.ontology.concepts),
        "lexicon_entries": len(kb.lexicon),
    }
