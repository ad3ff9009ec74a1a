"""Shared builders for the test suite.

Everything here is deterministic: document builders go through the public
JSONL parser so tests exercise the same construction path as ingestion, and
random content is drawn from `stable_seed`-derived generators.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from sectsum.corpus import Document, LabeledDocument, parse_document
from sectsum.rouge import stable_seed

DATA_DIR = Path(__file__).parent / "data"

MARKER = "keystone"


def doc_from_sections(
    doc_id: str,
    sections: list[list[str]],
    reference: str = "",
    titles: list[str] | None = None,
) -> Document:
    """Build a Document through the JSONL parser from lists of sentence texts."""
    if titles is None:
        titles = [f"part {i}" for i in range(len(sections))]
    obj = {
        "id": doc_id,
        "reference_summary": reference,
        "sections": [
            {"title": t, "sentences": list(sents)} for t, sents in zip(titles, sections)
        ],
    }
    return parse_document(json.dumps(obj))


GREEK = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]


def small_random_doc(seed: int) -> Document:
    """A 6-sentence, 2-section document over a tiny vocabulary.

    Used by gradient and invariance tests; 4 tokens per sentence keeps every
    feature path (length buckets, sections, correlation, saliency) active.
    """
    rng = np.random.default_rng(seed)
    sections = []
    for _ in range(2):
        sections.append(
            [
                " ".join(GREEK[int(i)] for i in rng.integers(0, len(GREEK), size=4))
                for _ in range(3)
            ]
        )
    return doc_from_sections(f"doc{seed}", sections, reference="alpha beta gamma delta")


def planted_corpus(
    n_docs: int = 200,
    n_sentences: int = 40,
    n_sections: int = 4,
    n_planted: int = 8,
    seed: int = 0,
) -> list[LabeledDocument]:
    """Synthetic corpus with a planted signal.

    Each document has `n_planted` sentences containing the marker token
    ``keystone``; the reference summary is exactly those sentences in document
    order and the labels mark them, so a model that learns to spot the marker
    attains high label accuracy and ROUGE recall.
    """
    rng = np.random.default_rng(stable_seed(seed, "planted-corpus"))
    vocab = [f"word{i:03d}" for i in range(60)]
    per_sec = n_sentences // n_sections
    items = []
    for d in range(n_docs):
        planted = set(int(i) for i in rng.choice(n_sentences, size=n_planted, replace=False))
        texts = []
        for k in range(n_sentences):
            toks = [
                vocab[int(j)]
                for j in rng.integers(0, len(vocab), size=int(rng.integers(6, 11)))
            ]
            if k in planted:
                toks.insert(int(rng.integers(0, len(toks) + 1)), MARKER)
            texts.append(" ".join(toks))
        doc = doc_from_sections(
            f"doc{d:03d}",
            [texts[s * per_sec : (s + 1) * per_sec] for s in range(n_sections)],
            reference=" ".join(texts[k] for k in sorted(planted)),
        )
        labels = tuple(1 if k in planted else 0 for k in range(n_sentences))
        items.append(LabeledDocument(doc, labels))
    return items


def write_corpus_jsonl(path: Path, docs: list[Document]) -> None:
    """Write documents as plain JSONL (no header line)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            from sectsum.corpus import serialize_document

            fh.write(serialize_document(doc) + "\n")
