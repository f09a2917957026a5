"""Ranked retrieval over documents with configurable evidence fusion.

The index carries three kinds of evidence per document: tf-idf postings for
full-text cosine ranking (raw tf, natural-log idf), an exact metadata and
annotation index, and a hashed bag-of-lemmas embedding (CRC-32 of the lemma
modulo 256 dimensions). A retrieval method picks one signal or, for Hybrid,
a weighted blend. tf-idf weights are recomputed from postings at query time
so adding documents one by one always equals a full rebuild.
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from . import nlu
from .errors import InvalidConfig, MalformedFile
from .knowledge import Document, KnowledgeBase, format_meta_value, normalize

# Fixed 30-word stop list; idf alone under-penalizes function words in the
# tiny corpora this engine targets.
STOP_WORDS = frozenset({
    "a", "an", "the", "is", "are", "was", "were", "be", "do", "does",
    "did", "of", "to", "in", "on", "for", "with", "and", "or", "not",
    "you", "i", "we", "it", "this", "that", "what", "how", "much", "can",
})

EMBED_DIM = 256


class Method(str, Enum):
    METADATA_ONLY = "MetadataOnly"
    FULL_TEXT = "FullText"
    SEMANTIC = "Semantic"
    VECTOR = "Vector"
    HYBRID = "Hybrid"


@dataclass
class RetrievalConfig:
    method: Method = Method.FULL_TEXT
    w_text: float = 0.5
    w_meta: float = 0.3
    w_vec: float = 0.2
    k: int = 5

    def validate(self) -> None:
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        for name, w in (("w_text", self.w_text), ("w_meta", self.w_meta),
                        ("w_vec", self.w_vec)):
            if not 0.0 <= w <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {w}")
        if self.method == Method.HYBRID:
            total = self.w_text + self.w_meta + self.w_vec
            if abs(total - 1.0) > 1e-9:
                raise InvalidConfig(f"Hybrid weights must sum to 1, got {total}")


@dataclass
class ScoredDocument:
    id: str
    score: float
    components: tuple[float, float, float]  # (text, meta, vec)
    matched_fields: list[str] = field(default_factory=list)


@dataclass
class Index:
    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)
    doc_count: int = 0
    metadata_index: dict[tuple[str, str], set[str]] = field(default_factory=dict)
    vectors: dict[str, tuple[float, ...]] = field(default_factory=dict)
    vocabulary: list[str] = field(default_factory=list)


# --- lemmatization helpers ---------------------------------------------------

def content_lemmas(text: str, kb: Optional[KnowledgeBase] = None) -> list[str]:
    """Word-token lemmas of a text (punctuation dropped). With a knowledge
    base the nlu morphology stage supplies lemmas; otherwise surfaces stand
    in as their own lemmas."""
    _, tokens = nlu.preprocess(text)
    if kb is not None:
        nlu.analyze_morphology(tokens, kb)
    return [t.lemma for t in tokens if nlu._is_word(t.surface)]


def _meta_pairs(doc: Document) -> set[tuple[str, str]]:
    pairs = set()
    for source in (doc.metadata, doc.annotations):
        for fld, value in source.items():
            if isinstance(value, list):
                for v in value:
                    pairs.add((normalize(str(fld)), normalize(str(v))))
            else:
                pairs.add((normalize(str(fld)), normalize(format_meta_value(value))))
    return pairs


# --- embedding ----------------------------------------------------------------

def _hash_dim(lemma: str, dim: int = EMBED_DIM) -> int:
    return zlib.crc32(lemma.encode("utf-8")) % dim


def embed(text: str, kb: Optional[KnowledgeBase] = None,
          dim: int = EMBED_DIM) -> tuple[float, ...]:
    """Hashed bag-of-lemmas embedding: deterministic, dependency-free, unit
    Euclidean norm (zero vector for texts without content lemmas)."""
    counts = Counter(l for l in content_lemmas(text, kb) if l not in STOP_WORDS)
    vec = [0.0] * dim
    for lemma, tf in counts.items():
        vec[_hash_dim(lemma, dim)] += float(tf)
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        return tuple(vec)
    return tuple(v / norm for v in vec)


# --- index construction ---------------------------------------------------------

def build_index(documents: Iterable[Document], kb: KnowledgeBase) -> Index:
    """Index bodies (lemmatized, stop words dropped from postings), metadata
    and annotations (exact normalized pairs), and embeddings. An empty corpus
    is a warning, not a failure: the index is still built and searches over
    it simply return nothing."""
    index = Index()
    for doc in sorted(documents, key=lambda d: d.id):
        add_document(index, doc, kb)
    if index.doc_count == 0:
        warnings.warn("building an index over an empty corpus; all searches "
                      "will return no results", stacklevel=2)
    return index


def add_document(index: Index, doc: Document, kb: KnowledgeBase) -> None:
    lemmas = content_lemmas(doc.body, kb)
    index.doc_lengths[doc.id] = len(lemmas)
    counts = Counter(l for l in lemmas if l not in STOP_WORDS)
    for lemma, tf in counts.items():
        postings = index.postings.setdefault(lemma, [])
        postings.append((doc.id, tf))
        postings.sort(key=lambda p: p[0])
    for pair in _meta_pairs(doc):
        index.metadata_index.setdefault(pair, set()).add(doc.id)
    index.vectors[doc.id] = embed(doc.body, kb)
    index.doc_count = len(index.doc_lengths)
    index.vocabulary = sorted(index.postings)


def remove_document(index: Index, doc_id: str) -> None:
    for lemma in list(index.postings):
        remaining = [p for p in index.postings[lemma] if p[0] != doc_id]
        if remaining:
            index.postings[lemma] = remaining
        else:
            del index.postings[lemma]
    index.doc_lengths.pop(doc_id, None)
    index.vectors.pop(doc_id, None)
    for pair in list(index.metadata_index):
        index.metadata_index[pair].discard(doc_id)
        if not index.metadata_index[pair]:
            del index.metadata_index[pair]
    index.doc_count = len(index.doc_lengths)
    index.vocabulary = sorted(index.postings)


# --- scoring --------------------------------------------------------------------

def _idf(index: Index, lemma: str) -> float:
    df = len(index.postings.get(lemma, ()))
    if df == 0:
        return 0.0
    return math.log(index.doc_count / df)


def _doc_tfidf(index: Index) -> dict[str, dict[str, float]]:
    # iterate in sorted lemma order so float sums do not depend on how the
    # index was built (fresh vs incremental vs reloaded from disk)
    weights: dict[str, dict[str, float]] = {doc_id: {} for doc_id in index.doc_lengths}
    for lemma in sorted(index.postings):
        idf = _idf(index, lemma)
        if idf == 0.0:
            continue
        for doc_id, tf in index.postings[lemma]:
            weights[doc_id][lemma] = tf * idf
    return weights


def _cosine_scores(index: Index, query_counts: Counter) -> dict[str, float]:
    qvec = {}
    for lemma in sorted(query_counts):
        idf = _idf(index, lemma)
        if idf > 0.0:
            qvec[lemma] = query_counts[lemma] * idf
    qnorm = math.sqrt(sum(w * w for w in qvec.values()))
    if qnorm == 0.0:
        return {}
    doc_weights = _doc_tfidf(index)
    scores = {}
    for doc_id, weights in doc_weights.items():
        dot = sum(qvec[l] * weights[l] for l in qvec if l in weights)
        if dot == 0.0:
            continue
        dnorm = math.sqrt(sum(w * w for w in weights.values()))
        if dnorm > 0.0:
            scores[doc_id] = dot / (qnorm * dnorm)
    return scores


def expand_query_lemmas(counts: Counter, kb: KnowledgeBase) -> Counter:
    """Semantic widening: each query lemma contributes every lemma of its
    concept and of that concept's isa ancestors, at the same raw count."""
    expanded = Counter(counts)
    from .knowledge import ancestors  # local import to keep module load light
    for lemma, tf in counts.items():
        concept = kb.concept_of_lemma(lemma)
        if concept is None:
            continue
        related = set(kb.lemmas_of_concept(concept))
        for ancestor in ancestors(kb.ontology, concept):
            related.update(kb.lemmas_of_concept(ancestor))
        for other in related:
            if other != lemma:
                expanded[other] += tf
    return expanded


def _vector_scores(index: Index, query: str, kb: KnowledgeBase) -> dict[str, float]:
    qvec = embed(query, kb)
    if not any(qvec):
        return {}
    scores = {}
    for doc_id, dvec in index.vectors.items():
        dot = sum(a * b for a, b in zip(qvec, dvec))
        if dot > 0.0:
            scores[doc_id] = dot
    return scores


def _meta_scores(index: Index, query_metadata: dict) -> tuple[dict[str, float], dict[str, list[str]]]:
    if not query_metadata:
        return {}, {}
    pairs = [(normalize(str(f)), normalize(str(v))) for f, v in query_metadata.items()]
    hits: dict[str, set[str]] = {}
    for fld, value in pairs:
        for doc_id in index.metadata_index.get((fld, value), ()):
            hits.setdefault(doc_id, set()).add(fld)
    scores = {doc_id: len(fields) / len(pairs) for doc_id, fields in hits.items()}
    matched = {doc_id: sorted(fields) for doc_id, fields in hits.items()}
    return scores, matched


def search(index: Index, query: str, config: RetrievalConfig, kb: KnowledgeBase,
           query_metadata: Optional[dict] = None) -> list[ScoredDocument]:
    """Rank documents under the configured method. Zero-score documents are
    excluded; ties break on ascending id so reruns are byte-identical."""
    config.validate()
    if index.doc_count == 0:
        return []

    query_counts = Counter(
        l for l in content_lemmas(query, kb) if l not in STOP_WORDS)
    method = config.method

    text_scores: dict[str, float] = {}
    if method in (Method.FULL_TEXT, Method.HYBRID):
        text_scores = _cosine_scores(index, query_counts)
    elif method == Method.SEMANTIC:
        text_scores = _cosine_scores(index, expand_query_lemmas(query_counts, kb))

    meta_scores: dict[str, float] = {}
    matched_fields: dict[str, list[str]] = {}
    if method in (Method.METADATA_ONLY, Method.HYBRID):
        meta_scores, matched_fields = _meta_scores(index, query_metadata or {})

    vec_scores: dict[str, float] = {}
    if method in (Method.VECTOR, Method.HYBRID):
        vec_scores = _vector_scores(index, query, kb)

    results = []
    for doc_id in index.doc_lengths:
        text = text_scores.get(doc_id, 0.0)
        meta = meta_scores.get(doc_id, 0.0)
        vec = max(0.0, vec_scores.get(doc_id, 0.0))
        if method == Method.METADATA_ONLY:
            score = meta
        elif method in (Method.FULL_TEXT, Method.SEMANTIC):
            score = text
        elif method == Method.VECTOR:
            score = vec
        else:
            score = config.w_text * text + config.w_meta * meta + config.w_vec * vec
        if score <= 0.0:
            continue
        results.append(ScoredDocument(
            id=doc_id, score=score, components=(text, meta, vec),
            matched_fields=matched_fields.get(doc_id, [])))
    results.sort(key=lambda r: (-r.score, r.id))
    return results[: config.k]


# --- single-file serialization -----------------------------------------------

INDEX_FORMAT = "ctrlbot-index"
INDEX_VERSION = 1


def save_index(index: Index, path: str | Path) -> None:
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "doc_count": index.doc_count,
        "doc_lengths": index.doc_lengths,
        "postings": {lemma: [[d, tf] for d, tf in ps]
                     for lemma, ps in sorted(index.postings.items())},
        "metadata_index": [[fld, value, sorted(ids)]
                           for (fld, value), ids in sorted(index.metadata_index.items())],
        "vectors": {doc_id: list(vec) for doc_id, vec in sorted(index.vectors.items())},
        "vocabulary": index.vocabulary,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_index(path: str | Path) -> Index:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != INDEX_FORMAT:
        raise MalformedFile(str(path), "not a ctrlbot index file")
    if data.get("version") != INDEX_VERSION:
        raise MalformedFile(str(path), f"unsupported index version {data.get('version')!r}")
    return Index(
        postings={lemma: [(d, tf) for d, tf in ps] for lemma, ps in data["postings"].items()},
        doc_lengths=data["doc_lengths"],
        doc_count=data["doc_count"],
        metadata_index={(fld, value): set(ids)
                        for fld, value, ids in data["metadata_index"]},
        vectors={doc_id: tuple(vec) for doc_id, vec in data["vectors"].items()},
        vocabulary=list(data["vocabulary"]),
    )
