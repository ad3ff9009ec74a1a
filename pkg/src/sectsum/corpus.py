"""Document data model, tokenization, JSONL ingestion and validation.

Documents arrive pre-split into sections and sentences (one JSON object per
line); no sentence-boundary detection happens here.  All downstream stages
(labeling, features, ROUGE) consume the token streams produced by
:func:`tokenize`, so that rule is the single source of truth for what a
"word" is.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Base class for ingestion failures."""


class ParseError(CorpusError):
    """Line is not valid JSON."""


class SchemaError(CorpusError):
    """Line is JSON but violates the corpus schema."""


@dataclass(frozen=True)
class Sentence:
    text: str
    tokens: tuple[str, ...]
    doc_position: int
    section_index: int

    @property
    def char_length(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class Section:
    index: int
    title: str
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class Document:
    id: str
    sections: tuple[Section, ...]
    reference_summary: str

    @property
    def sentences(self) -> tuple[Sentence, ...]:
        return tuple(s for sec in self.sections for s in sec.sentences)

    @property
    def n_sentences(self) -> int:
        return sum(len(sec.sentences) for sec in self.sections)


@dataclass(frozen=True)
class LabeledDocument:
    document: Document
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != self.document.n_sentences:
            raise ValueError(
                f"doc {self.document.id}: {len(self.labels)} labels for "
                f"{self.document.n_sentences} sentences"
            )
        if any(l not in (0, 1) for l in self.labels):
            raise ValueError(f"doc {self.document.id}: labels must be 0/1")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop non-alphanumeric characters, split on whitespace.

    Punctuation is removed (not replaced by spaces), so "don't" -> "dont".
    Idempotent on its own space-joined output.
    """
    cleaned = []
    for ch in text.lower():
        if ch.isalnum() or ch.isspace():
            cleaned.append(ch)
    return "".join(cleaned).split()


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing required field {key!r}")
    val = obj[key]
    if not isinstance(val, kind):
        raise SchemaError(f"{where}: field {key!r} must be {kind.__name__}, got {type(val).__name__}")
    return val


def parse_document(line: str, line_no: int | None = None) -> Document:
    """Parse one corpus JSONL line into a Document.

    Raises ParseError for invalid JSON and SchemaError for structural
    problems; both mention the line number when one is provided.
    """
    where = f"line {line_no}" if line_no is not None else "line"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"{where}: invalid JSON ({e.msg} at col {e.colno})") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object")

    doc_id = _require(obj, "id", str, where)
    reference = _require(obj, "reference_summary", str, where)
    raw_sections = _require(obj, "sections", list, where)
    if not raw_sections:
        raise SchemaError(f"{where}: document {doc_id!r} has an empty sections list")

    sections: list[Section] = []
    pos = 0
    for si, raw in enumerate(raw_sections):
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: section {si} must be an object")
        title = _require(raw, "title", str, f"{where} section {si}")
        raw_sents = _require(raw, "sentences", list, f"{where} section {si}")
        sents = []
        for text in raw_sents:
            if not isinstance(text, str):
                raise SchemaError(f"{where}: section {si} contains a non-string sentence")
            sents.append(Sentence(text=text, tokens=tuple(tokenize(text)), doc_position=pos, section_index=si))
            pos += 1
        sections.append(Section(index=si, title=title, sentences=tuple(sents)))
    if pos == 0:
        raise SchemaError(f"{where}: document {doc_id!r} has no sentences")
    return Document(id=doc_id, sections=tuple(sections), reference_summary=reference)


def serialize_document(doc: Document) -> str:
    obj = {
        "id": doc.id,
        "reference_summary": doc.reference_summary,
        "sections": [
            {"title": sec.title, "sentences": [s.text for s in sec.sentences]} for sec in doc.sections
        ],
    }
    return json.dumps(obj, ensure_ascii=False)


def validate(doc: Document) -> list[str]:
    """Return every invariant violation found (empty list means ok)."""
    problems: list[str] = []
    if doc.n_sentences < 1:
        problems.append(f"doc {doc.id}: has no sentences")
    if not doc.sections:
        problems.append(f"doc {doc.id}: has no sections")
    expected = 0
    for sec in doc.sections:
        for s in sec.sentences:
            if s.doc_position != expected:
                problems.append(
                    f"doc {doc.id}: sentence at doc_position {s.doc_position} expected {expected}"
                )
            expected += 1
            if s.section_index != sec.index:
                problems.append(
                    f"doc {doc.id}: sentence {s.doc_position} has section_index "
                    f"{s.section_index}, enclosing section is {sec.index}"
                )
            if not s.tokens:
                problems.append(f"doc {doc.id}: sentence {s.doc_position} has no tokens")
    return problems


def truncate_document(doc: Document, max_sentences: int) -> Document:
    """Drop sentences past max_sentences (and any sections they emptied)."""
    if doc.n_sentences <= max_sentences:
        return doc
    log.warning(
        "doc %s: truncated from %d to %d sentences", doc.id, doc.n_sentences, max_sentences
    )
    sections = []
    for sec in doc.sections:
        kept = tuple(s for s in sec.sentences if s.doc_position < max_sentences)
        if kept:
            sections.append(Section(index=sec.index, title=sec.title, sentences=kept))
    return Document(id=doc.id, sections=tuple(sections), reference_summary=doc.reference_summary)


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

HEADER_KEY = "artifact"


@dataclass
class LoadReport:
    documents: list[Document] = field(default_factory=list)
    header: dict | None = None
    problems: list[str] = field(default_factory=list)
    truncated: int = 0

    @property
    def n_sentences(self) -> int:
        return sum(d.n_sentences for d in self.documents)

    @property
    def n_sections(self) -> int:
        return sum(len(d.sections) for d in self.documents)


def _maybe_header(line: str) -> dict | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and HEADER_KEY in obj:
        return obj
    return None


def load_corpus(path: str | Path, max_sentences: int | None = None) -> LoadReport:
    """Read a corpus JSONL file, tolerating bad lines.

    Per-line failures are collected into report.problems rather than raised;
    callers choose how strict to be.  An optional artifact header on the
    first line is returned separately, never treated as a document.
    """
    report = LoadReport()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line_no == 1:
                header = _maybe_header(line)
                if header is not None:
                    report.header = header
                    continue
            try:
                doc = parse_document(line, line_no)
            except CorpusError as e:
                report.problems.append(str(e))
                continue
            violations = validate(doc)
            if violations:
                report.problems.append(f"line {line_no}: " + "; ".join(violations))
                continue
            if max_sentences is not None and doc.n_sentences > max_sentences:
                doc = truncate_document(doc, max_sentences)
                report.truncated += 1
            report.documents.append(doc)
    return report


def write_corpus(docs: Iterable[Document], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({HEADER_KEY: "corpus", **header}, ensure_ascii=False) + "\n")
        for doc in docs:
            fh.write(serialize_document(doc) + "\n")


def write_labels(
    labeled: Iterable[tuple[str, Iterable[int]]], path: str | Path, header: dict | None = None
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({HEADER_KEY: "labels", **header}, ensure_ascii=False) + "\n")
        for doc_id, labels in labeled:
            fh.write(json.dumps({"id": doc_id, "labels": [int(x) for x in labels]}) + "\n")


def read_labels(path: str | Path) -> tuple[dict[str, list[int]], dict | None]:
    """Read a labels JSONL file into {id: labels}, plus any artifact header."""
    labels: dict[str, list[int]] = {}
    header = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line_no == 1:
                header = _maybe_header(line)
                if header is not None:
                    continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"labels line {line_no}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or "labels" not in obj:
                raise SchemaError(f"labels line {line_no}: expected {{id, labels}}")
            vec = obj["labels"]
            if not isinstance(vec, list) or any(v not in (0, 1) for v in vec):
                raise SchemaError(f"labels line {line_no}: labels must be a 0/1 list")
            labels[str(obj["id"])] = [int(v) for v in vec]
    return labels, header
