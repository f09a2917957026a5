"""Rule-based understanding pipeline.

Stages: preprocess -> morphology -> chunking -> clause integration ->
referent resolution -> fact-sheet matching -> template answering. Every
stage is deterministic; the same input text and conversation state always
produce the same parse, byte for byte. Match strength is a three-way grade
(Conclusive / Supportive / None) computed from which query constraints the
best fact sheet satisfies, leaves unverifiable, or contradicts: the engine
knows what it does not know, and says so.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, TYPE_CHECKING

from .errors import NoAnswerableMatch
from .knowledge import (
    ConceptRef,
    FactSheet,
    KnowledgeBase,
    LanguageRules,
    Pos,
    implied_concepts,
    is_subconcept,
    normalize,
)

if TYPE_CHECKING:  # pragma: no cover
    from .control import ConversationState


class QuestionKind(str, Enum):
    FACTOID = "Factoid"
    DEFINITION = "Definition"
    PROCEDURAL = "Procedural"
    YESNO = "YesNo"
    SMALLTALK = "Smalltalk"
    UNKNOWN = "Unknown"


class Strength(str, Enum):
    CONCLUSIVE = "Conclusive"
    SUPPORTIVE = "Supportive"
    NONE = "None"


class ChunkKind(str, Enum):
    NP = "NP"
    VP = "VP"
    PP = "PP"
    OTHER = "Other"


@dataclass
class Token:
    surface: str
    lemma: str
    pos: Pos
    features: dict[str, object]
    concept: Optional[str]
    span: tuple[int, int]


@dataclass
class Chunk:
    kind: ChunkKind
    token_indices: tuple[int, ...]
    head: int  # position of the head token within token_indices


@dataclass
class Clause:
    predicate: Optional[int]  # chunk index of the VP
    arguments: list[int] = field(default_factory=list)


Constraint = tuple[str, str]  # (slot or relation name, expected concept/scalar)


@dataclass
class Term:
    concept: Optional[str]
    constraints: list[Constraint]
    origin: int  # chunk index
    referential: bool = False
    unresolved: bool = False


@dataclass
class ParsedUtterance:
    raw: str
    normalized: str
    tokens: list[Token]
    chunks: list[Chunk]
    clauses: list[Clause]
    terms: list[Term]
    question_kind: QuestionKind


@dataclass
class MatchResult:
    strength: Strength
    sheet: Optional[str]
    satisfied: list[Constraint] = field(default_factory=list)
    unverifiable: list[Constraint] = field(default_factory=list)
    contradicted: list[Constraint] = field(default_factory=list)


NO_MATCH = MatchResult(Strength.NONE, None)


@dataclass
class RuleAnswer:
    text: str
    hedged: bool


HEDGE_MARKER = "I could not verify"

# wh-words recognized for question classification (surface cue set)
WH_LEMMAS = frozenset({"what", "who", "whom", "which", "when", "where", "why", "how"})
PROCEDURAL_PREFIXES = (("how", "do", "i"), ("how", "can", "i"), ("how", "do", "we"))

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WORD_RE = re.compile(r"\w", re.UNICODE)


# --- stage 1: preprocessing --------------------------------------------------

def preprocess(text: str) -> tuple[str, list[Token]]:
    """NFKC-normalize and lowercase; split into word and punctuation tokens.

    Spans index into the returned normalized text, not the raw input.
    """
    normalized = unicodedata.normalize("NFKC", text).lower()
    tokens = []
    for m in _TOKEN_RE.finditer(normalized):
        tokens.append(Token(surface=m.group(), lemma=m.group(), pos=Pos.OTHER,
                            features={}, concept=None, span=(m.start(), m.end())))
    return normalized, tokens


def _is_word(surface: str) -> bool:
    return bool(_WORD_RE.match(surface))


# --- stage 2: morphology -----------------------------------------------------

def analyze_morphology(tokens: list[Token], kb: KnowledgeBase) -> list[Token]:
    """Fill lemma/pos/features/concept from the lexicon.

    Lookup order: exact surface match, then suffix-strip fallback rules in
    file order (first rule whose stripped form hits the lexicon wins), then
    identity lemma with pos Other.
    """
    for token in tokens:
        if not _is_word(token.surface):
            continue
        entries = kb.lexicon_entries(token.surface)
        if entries:
            entry = entries[0]
            token.lemma = entry.lemma
            token.pos = entry.pos
            token.features = dict(entry.features)
            token.concept = entry.concept or kb.concept_of_lemma(entry.lemma)
            continue
        matched = False
        for rule in kb.rules.suffix_rules:
            if not token.surface.endswith(rule.suffix):
                continue
            stem = token.surface[: len(token.surface) - len(rule.suffix)] + rule.replace
            if not stem:
                continue
            entries = kb.lexicon_entries(stem)
            if not entries:
                continue
            entry = entries[0]
            token.lemma = entry.lemma
            token.pos = entry.pos
            token.features = dict(entry.features)
            # inflection features (e.g. plural) only make sense on nouns
            if entry.pos == Pos.NOUN:
                token.features.update(dict(rule.features))
            token.concept = entry.concept or kb.concept_of_lemma(entry.lemma)
            matched = True
            break
        if not matched:
            token.lemma = token.surface
            token.pos = Pos.OTHER
            token.concept = None
    return tokens


# --- stage 3: chunking -------------------------------------------------------

def _match_pattern(pattern, tokens: list[Token], start: int) -> int:
    """Greedy match of one chunk pattern at a position; returns match length."""
    i = start
    for pos_name, quant in pattern.items:
        count = 0
        limit = 1 if quant in ("", "?") else len(tokens)
        while i < len(tokens) and count < limit and tokens[i].pos.value == pos_name:
            i += 1
            count += 1
        if quant in ("", "+") and count == 0:
            return 0
    return i - start


def chunk(tokens: list[Token], rules: LanguageRules) -> list[Chunk]:
    """Longest-match, left-to-right chunking; uncovered tokens become
    singleton Other chunks, so chunks always partition the token sequence."""
    chunks: list[Chunk] = []
    i = 0
    while i < len(tokens):
        best_len = 0
        best_rule = None
        for rule in rules.chunk_grammar:
            length = _match_pattern(rule, tokens, i)
            if length > best_len:
                best_len = length
                best_rule = rule
        if best_rule is None:
            chunks.append(Chunk(ChunkKind.OTHER, (i,), 0))
            i += 1
            continue
        indices = tuple(range(i, i + best_len))
        head = best_len - 1
        if best_rule.head_pos:
            for offset in range(best_len - 1, -1, -1):
                if tokens[i + offset].pos.value == best_rule.head_pos:
                    head = offset
                    break
        chunks.append(Chunk(ChunkKind(best_rule.kind), indices, head))
        i += best_len
    return chunks


# --- stage 4: clause integration ----------------------------------------------

def _chunk_lemmas(chunk_: Chunk, tokens: list[Token]) -> list[str]:
    return [tokens[i].lemma for i in chunk_.token_indices]


def _np_concept(chunk_: Chunk, tokens: list[Token], kb: KnowledgeBase,
                skip_leading: int = 0) -> Optional[str]:
    """Concept of an NP: longest matching paraphrase pattern wins, else the
    head token's concept. skip_leading drops a PP's preposition."""
    lemmas = _chunk_lemmas(chunk_, tokens)[skip_leading:]
    best: Optional[str] = None
    best_len = 0
    for rule in kb.ontology.paraphrase_rules:
        n = len(rule.pattern)
        if n <= best_len:
            continue
        for i in range(len(lemmas) - n + 1):
            if tuple(lemmas[i:i + n]) == rule.pattern:
                best = rule.concept
                best_len = n
                break
    if best:
        return best
    head_token = tokens[chunk_.token_indices[chunk_.head]]
    return head_token.concept


def _is_punct_chunk(chunk_: Chunk, tokens: list[Token]) -> bool:
    return (chunk_.kind == ChunkKind.OTHER and len(chunk_.token_indices) == 1
            and not _is_word(tokens[chunk_.token_indices[0]].surface))


def integrate_clauses(raw: str, normalized: str, tokens: list[Token],
                      chunks: list[Chunk], kb: KnowledgeBase) -> ParsedUtterance:
    """Attach arguments to predicates, derive terms with constraints, and
    classify the question kind from surface cues."""
    rules = kb.rules

    # clauses: one per VP; NPs/PPs attach to the nearest predicate
    vp_indices = [i for i, c in enumerate(chunks) if c.kind == ChunkKind.VP]
    clauses = [Clause(predicate=i) for i in vp_indices]
    for j, c in enumerate(chunks):
        if c.kind not in (ChunkKind.NP, ChunkKind.PP) or not vp_indices:
            continue
        nearest = min(range(len(vp_indices)),
                      key=lambda k: (abs(vp_indices[k] - j), vp_indices[k]))
        clauses[nearest].arguments.append(j)

    # terms: NPs with concepts, third-person pronouns, PP objects
    terms: list[Term] = []
    term_by_chunk: dict[int, Term] = {}

    def add_term(term: Term) -> None:
        terms.append(term)
        term_by_chunk[term.origin] = term

    for j, c in enumerate(chunks):
        if c.kind == ChunkKind.NP:
            concept = _np_concept(c, tokens, kb)
            if concept is None:
                continue
            first = tokens[c.token_indices[0]]
            definite = first.pos == Pos.DETERMINER and bool(first.features.get("definite"))
            add_term(Term(concept=concept, constraints=[], origin=j, referential=definite))
        elif c.kind == ChunkKind.PP:
            prep = tokens[c.token_indices[0]]
            object_concept = _np_concept(c, tokens, kb, skip_leading=1)
            slot = rules.constraint_prepositions.get(prep.lemma)
            prev_term = term_by_chunk.get(j - 1)
            if slot and prev_term is not None and object_concept is not None:
                # "chocolate containing nuts" -> constraint on the host NP
                prev_term.constraints.append((slot, object_concept))
            elif object_concept is not None:
                add_term(Term(concept=object_concept, constraints=[], origin=j))
        elif c.kind == ChunkKind.OTHER and len(c.token_indices) == 1:
            token = tokens[c.token_indices[0]]
            if token.pos == Pos.PRONOUN and \
                    token.features.get("person") not in ("first", "second"):
                add_term(Term(concept=token.concept, constraints=[], origin=j,
                              referential=True))

    # verb-mediated constraints: "does X contain Y" -> (contains, Y) on X
    for clause in clauses:
        if clause.predicate is None:
            continue
        vp = chunks[clause.predicate]
        head_lemma = tokens[vp.token_indices[vp.head]].lemma
        slot = rules.constraint_verbs.get(head_lemma)
        if not slot:
            continue
        subject = None
        for j in range(clause.predicate - 1, -1, -1):
            if j in term_by_chunk:
                subject = term_by_chunk[j]
                break
        obj = None
        for j in range(clause.predicate + 1, len(chunks)):
            if j in term_by_chunk and term_by_chunk[j].concept is not None:
                obj = term_by_chunk[j]
                break
        if subject is None or obj is None or obj is subject:
            continue
        subject.constraints.append((slot, obj.concept))
        terms.remove(obj)  # the object was consumed into the constraint
        del term_by_chunk[obj.origin]

    kind = _classify_question(tokens, chunks)
    return ParsedUtterance(raw=raw, normalized=normalized, tokens=tokens,
                           chunks=chunks, clauses=clauses, terms=terms,
                           question_kind=kind)


def _classify_question(tokens: list[Token], chunks: list[Chunk]) -> QuestionKind:
    words = [t for t in tokens if _is_word(t.surface)]
    if not words:
        return QuestionKind.UNKNOWN
    lemmas = [t.lemma for t in words]
    first = words[0]
    if first.features.get("greeting"):
        return QuestionKind.SMALLTALK
    if tuple(lemmas[:3]) in PROCEDURAL_PREFIXES:
        return QuestionKind.PROCEDURAL
    if lemmas[0] in WH_LEMMAS:
        if _is_definition_shape(lemmas, tokens, chunks):
            return QuestionKind.DEFINITION
        return QuestionKind.FACTOID
    if first.pos == Pos.VERB and first.features.get("aux"):
        return QuestionKind.YESNO
    return QuestionKind.UNKNOWN


def _is_definition_shape(lemmas: list[str], tokens: list[Token],
                         chunks: list[Chunk]) -> bool:
    """'what/who is <one NP>' with nothing else."""
    if lemmas[0] not in ("what", "who") or len(lemmas) < 3 or lemmas[1] != "be":
        return False
    be_chunk = None
    for i, c in enumerate(chunks):
        if c.kind == ChunkKind.VP and tokens[c.token_indices[c.head]].lemma == "be":
            be_chunk = i
            break
    if be_chunk is None:
        return False
    rest = [c for c in chunks[be_chunk + 1:] if not _is_punct_chunk(c, tokens)]
    return len(rest) == 1 and rest[0].kind == ChunkKind.NP


# --- stage 5: referent resolution ---------------------------------------------

def resolve_referents(utterance: ParsedUtterance, state: "ConversationState",
                      kb: KnowledgeBase) -> ParsedUtterance:
    """Bind referential terms to the most recent compatible entity in the
    conversation history.

    A concept-bearing definite NP falls back to its own concept when the
    history offers nothing compatible; only concept-less terms (pronouns)
    end up unresolved.
    """
    for term in utterance.terms:
        if not term.referential:
            continue
        resolved = False
        for concept, _sheet in reversed(state.entities):
            if _compatible_concepts(concept, term.concept, kb):
                term.concept = concept
                resolved = True
                break
        if not resolved and term.concept is None:
            term.unresolved = True
    return utterance


def _compatible_concepts(entity_concept: str, term_concept: Optional[str],
                         kb: KnowledgeBase) -> bool:
    if term_concept is None:
        return True
    onto = kb.ontology
    if entity_concept not in onto.concepts or term_concept not in onto.concepts:
        return False
    return is_subconcept(onto, entity_concept, term_concept) or \
        is_subconcept(onto, term_concept, entity_concept)


# --- stage 6: fact-sheet matching -----------------------------------------------

def _slot_values(sheet: FactSheet, slot: str, kb: KnowledgeBase) -> list:
    values: list = []
    if slot in sheet.slots:
        raw = sheet.slots[slot]
        values.extend(raw if isinstance(raw, list) else [raw])
    for name, target in sheet.relations:
        if name == slot and target in kb.factsheets:
            values.append(ConceptRef(kb.factsheets[target].concept))
    return values


def _value_compatible(value, expected: str, kb: KnowledgeBase) -> bool:
    onto = kb.ontology
    expected_n = normalize(str(expected))
    if isinstance(value, ConceptRef):
        value_concept = value.concept
    else:
        value_n = normalize(str(value))
        value_concept = value_n if value_n in onto.concepts else kb.concept_of_lemma(value_n)
        if value_concept is None:
            if expected_n in onto.concepts:
                return False
            if isinstance(value, (int, float)) and _is_number(expected_n):
                return float(value) == float(expected_n)
            return value_n == expected_n
    expected_concept = expected_n if expected_n in onto.concepts \
        else kb.concept_of_lemma(expected_n)
    if expected_concept is None:
        return normalize(str(value_concept)) == expected_n
    return is_subconcept(onto, value_concept, expected_concept) or \
        is_subconcept(onto, expected_concept, value_concept)


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def check_constraints(sheet: FactSheet, constraints: list[Constraint],
                      kb: KnowledgeBase) -> tuple[list[Constraint], list[Constraint], list[Constraint]]:
    """Trichotomy per constraint: satisfied / unverifiable / contradicted."""
    satisfied, unverifiable, contradicted = [], [], []
    for constraint in constraints:
        slot, expected = constraint
        values = _slot_values(sheet, slot, kb)
        if not values:
            unverifiable.append(constraint)
        elif any(_value_compatible(v, expected, kb) for v in values):
            satisfied.append(constraint)
        else:
            contradicted.append(constraint)
    return satisfied, unverifiable, contradicted


def candidate_sheets(term: Term, kb: KnowledgeBase) -> list[FactSheet]:
    """Sheets whose concept equals the term concept, specializes it, or
    implies it (via implication rules interleaved with isa edges)."""
    out = []
    concept = term.concept
    if concept is None or concept not in kb.ontology.concepts:
        return out
    for sheet in sorted(kb.factsheets.values(), key=lambda s: s.id):
        if sheet.concept == concept:
            out.append(sheet)
        elif sheet.concept in kb.ontology.concepts and \
                is_subconcept(kb.ontology, sheet.concept, concept):
            out.append(sheet)
        elif concept in implied_concepts(kb.ontology, sheet.concept):
            out.append(sheet)
    return out


def match_knowledge(utterance: ParsedUtterance, kb: KnowledgeBase) -> MatchResult:
    """Best graded match of the utterance's terms against the fact sheets.

    Candidates are ranked contradiction-free first, then by most satisfied,
    fewest unverifiable, smallest sheet id. Unresolved referential terms
    force strength None: the engine will not guess what "it" means.
    """
    if any(t.unresolved for t in utterance.terms):
        return MatchResult(Strength.NONE, None)
    scored = []
    for term in utterance.terms:
        for sheet in candidate_sheets(term, kb):
            satisfied, unverifiable, contradicted = check_constraints(
                sheet, term.constraints, kb)
            key = (1 if contradicted else 0, -len(satisfied), len(unverifiable), sheet.id)
            scored.append((key, sheet, satisfied, unverifiable, contradicted))
    if not scored:
        return MatchResult(Strength.NONE, None)
    scored.sort(key=lambda item: item[0])
    _, sheet, satisfied, unverifiable, contradicted = scored[0]
    if contradicted:
        strength = Strength.NONE
    elif unverifiable:
        strength = Strength.SUPPORTIVE
    else:
        strength = Strength.CONCLUSIVE
    return MatchResult(strength=strength, sheet=sheet.id, satisfied=satisfied,
                       unverifiable=unverifiable, contradicted=contradicted)


# --- stage 7: answer formulation -------------------------------------------------

def _render_slot_value(value) -> str:
    if isinstance(value, ConceptRef):
        return value.concept
    if isinstance(value, list):
        return ", ".join(_render_slot_value(v) for v in value)
    return str(value)


def formulate_answer(match: MatchResult, kb: KnowledgeBase) -> RuleAnswer:
    """Render the matched sheet: its authored answer text when present, else
    a fixed template over its slots. Supportive matches get a hedging prefix
    naming exactly the constraints that could not be verified."""
    if match.strength == Strength.NONE or match.sheet is None:
        raise NoAnswerableMatch("cannot formulate an answer for strength None")
    sheet = kb.factsheets[match.sheet]
    if sheet.answer_text:
        content = sheet.answer_text
    else:
        parts = [f"{slot}: {_render_slot_value(sheet.slots[slot])}"
                 for slot in sorted(sheet.slots)]
        content = f"{sheet.label}" + (" — " + "; ".join(parts) if parts else "") + "."
    if match.strength == Strength.SUPPORTIVE:
        missing = ", ".join(f"{slot} {expected}" for slot, expected in match.unverifiable)
        return RuleAnswer(text=f"{HEDGE_MARKER}: {missing}. {content}", hedged=True)
    return RuleAnswer(text=content, hedged=False)


# --- pipeline conveniences -------------------------------------------------------

def parse(text: str, kb: KnowledgeBase) -> ParsedUtterance:
    """Run preprocess + morphology + chunking + clause integration."""
    normalized, tokens = preprocess(text)
    analyze_morphology(tokens, kb)
    chunks = chunk(tokens, kb.rules)
    return integrate_clauses(text, normalized, tokens, chunks, kb)


def understand(text: str, kb: KnowledgeBase,
               state: Optional["ConversationState"] = None) -> ParsedUtterance:
    """Full pipeline including referent resolution when state is given."""
    utterance = parse(text, kb)
    if state is not None:
        resolve_referents(utterance, state, kb)
    return utterance
