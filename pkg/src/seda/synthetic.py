"""Generated clinical-style corpora with discontinuous and cross-sentence entities.

Mentions follow a few templates:

* ``knee pain`` (ADR), ``nausea`` (ADR), ``lipitor`` (Drug): flat entities;
* ``knee and ankle pain``: ADR{knee, pain} is discontinuous, ADR{ankle pain} flat;
* ``pain in my knee and ankle``: ADR{pain, knee} and ADR{pain, ankle},
  both discontinuous.

A discontinuous template can be cut by a newline, which makes one of its
entities cross-sentence.  Cuts are assigned so that the cross-sentence
share of discontinuous entities tracks ``cross_share``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Document, Entity

BODY = ["knee", "ankle", "leg", "arm", "back", "neck", "stomach", "head", "shoulder", "wrist", "hip", "muscle", "joint", "chest"]
SYMPTOM = ["pain", "ache", "cramps", "swelling", "stiffness", "weakness", "numbness", "soreness"]
SINGLE = ["nausea", "dizziness", "fatigue", "insomnia", "rash", "headache", "diarrhea"]
DRUGS = ["lipitor", "arthrotec", "voltaren", "zocor", "celebrex", "naproxen", "crestor"]
FILLER = [
    "the", "patient", "reported", "after", "taking", "for", "two", "weeks", "doctor", "said",
    "it", "was", "very", "bad", "then", "stopped", "daily", "dose", "mg", "still", "have",
    "some", "today", "again", "since", "started", "felt", "better", "morning", "night",
    "i", "had", "no", "with", "but", "also", "week", "could", "not", "sleep", "walk",
]


@dataclass
class _Mention:
    words: list[str]
    entities: list[tuple[str, list[int]]]
    cut: int | None = None  # break before this word index, or None


def _flat(rng) -> _Mention:
    r = rng.random()
    if r < 0.5:
        return _Mention([rng.choice(BODY), rng.choice(SYMPTOM)], [("ADR", [0, 1])])
    if r < 0.75:
        return _Mention([rng.choice(SINGLE)], [("ADR", [0])])
    return _Mention([rng.choice(DRUGS)], [("Drug", [0])])


def _two_distinct(rng, pool):
    a, b = rng.choice(len(pool), size=2, replace=False)
    return pool[a], pool[b]


def _discontinuous(rng, kind: int, cross: bool) -> _Mention:
    sym = rng.choice(SYMPTOM)
    b1, b2 = _two_distinct(rng, BODY)
    if kind == 0:
        # knee and | ankle pain : ADR{knee, pain} crosses the cut
        m = _Mention([b1, "and", b2, sym], [("ADR", [0, 3]), ("ADR", [2, 3])])
        if cross:
            m.cut = int(rng.integers(1, 3))
        return m
    # pain in my knee | and ankle : ADR{pain, ankle} crosses the cut
    m = _Mention([sym, "in", "my", b1, "and", b2], [("ADR", [0, 3]), ("ADR", [0, 5])])
    if cross:
        m.cut = 4
    return m


def _disc_count(kind: int) -> int:
    return 1 if kind == 0 else 2


def generate_corpus(
    n_docs: int = 200,
    seed: int = 0,
    disc_rate: float = 0.10,
    cross_share: float = 0.5,
    flat_per_doc: tuple[int, int] = (3, 5),
    sentences_per_doc: tuple[int, int] = (3, 6),
    prefix: str = "syn",
) -> list[Document]:
    """Generate ``n_docs`` documents with roughly ``disc_rate`` discontinuous entities."""
    rng = np.random.default_rng(seed)
    mean_flat = sum(flat_per_doc) / 2
    # each discontinuous template yields 2 entities, 1.5 of them discontinuous on average
    p_disc = disc_rate * mean_flat / (1.5 - 2 * disc_rate)
    disc_total = cross_total = 0
    docs = []
    for d in range(n_docs):
        mentions = [_flat(rng) for _ in range(int(rng.integers(flat_per_doc[0], flat_per_doc[1] + 1)))]
        planned_disc, planned_cross = disc_total, cross_total
        for _ in range(int(rng.poisson(p_disc))):
            kind = int(rng.integers(0, 2))
            planned_disc += _disc_count(kind)
            cross = planned_cross + 1 <= cross_share * planned_disc + 1e-9
            planned_cross += cross
            mentions.append(_discontinuous(rng, kind, cross))
        rng.shuffle(mentions)
        n_sent = int(rng.integers(sentences_per_doc[0], sentences_per_doc[1] + 1))
        doc = _assemble(f"{prefix}{d:04d}", mentions, n_sent, rng)
        disc_total += sum(e.discontinuous for e in doc.gold)
        cross_total += sum(doc.is_cross_sentence(e) for e in doc.gold)
        docs.append(doc)
    return docs


def _assemble(doc_id: str, mentions: list[_Mention], n_sent: int, rng) -> Document:
    cut = [m for m in mentions if m.cut is not None]
    plain = [m for m in mentions if m.cut is None]
    # a cut mention closes sentence k and its remainder opens sentence k + 1
    hosts = [int(k) for k in rng.permutation(n_sent - 1)[: len(cut)]]
    for m in cut[len(hosts):]:
        m.cut = None
        plain.append(m)
    hosted = dict(zip(hosts, cut))
    sentences: list[list] = [
        [str(rng.choice(FILLER)) for _ in range(int(rng.integers(3, 7)))] for _ in range(n_sent)
    ]
    for m in plain:
        units = sentences[int(rng.integers(0, n_sent))]
        units.insert(int(rng.integers(0, len(units) + 1)), m)
    for k, m in hosted.items():
        sentences[k].append(m)

    words: list[str] = []
    breaks: list[int] = []
    gold: list[Entity] = []
    for k, units in enumerate(sentences):
        if k and k - 1 not in hosted:
            breaks.append(len(words))
        for u in units:
            if isinstance(u, str):
                words.append(u)
                continue
            base = len(words)
            for i, w in enumerate(u.words):
                if i == u.cut:
                    breaks.append(len(words))
                words.append(w)
            gold.extend(Entity.from_tokens(label, [base + i for i in idx]) for label, idx in u.entities)
    words.append(".")
    return Document.from_words(doc_id, words, breaks, gold)


def split_corpus(docs: Sequence[Document], fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> dict[str, list[Document]]:
    n = len(docs)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    return {
        "train": list(docs[:n_train]),
        "dev": list(docs[n_train : n_train + n_dev]),
        "test": list(docs[n_train + n_dev :]),
    }
