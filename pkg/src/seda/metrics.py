"""Exact-match and entity-boundary (EBP/EBR/EBF) scoring.

All scores are micro-averaged: matches are summed over documents and divided
by the total number of predicted (precision) or gold (recall) entities.
Inputs are mappings ``doc_id -> iterable of Entity``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping

from .corpus import Document, Entity

EntitySets = Mapping[str, Iterable[Entity]]

SUBSETS = ("all", "discontinuous", "cross_sentence")


class AlignmentError(ValueError):
    pass


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    gold: int = 0
    predicted: int = 0
    matched: float = 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "matched": self.matched,
        }


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ebp: float
    ebr: float
    ebf: float
    counts: tuple[int, int, int]
    subsets: dict[str, PRF] = field(default_factory=dict)
    flags: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        gold, pred, matched = self.counts
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ebp": self.ebp,
            "ebr": self.ebr,
            "ebf": self.ebf,
            "counts": {"gold": gold, "predicted": pred, "matched": matched},
            "subsets": {k: v.to_dict() for k, v in self.subsets.items()},
            "flags": sorted(self.flags),
        }

    def table(self) -> str:
        rows = [f"{'subset':<16}{'P':>8}{'R':>8}{'F1':>8}{'gold':>7}{'pred':>7}"]
        for name, s in self.subsets.items():
            rows.append(
                f"{name:<16}{s.precision:>8.4f}{s.recall:>8.4f}{s.f1:>8.4f}{s.gold:>7}{s.predicted:>7}"
            )
        rows.append(f"{'boundary':<16}{self.ebp:>8.4f}{self.ebr:>8.4f}{self.ebf:>8.4f}")
        return "\n".join(rows)


def harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ratio(num: float, den: int, flags: set[str] | None, flag: str) -> float:
    if den == 0:
        if flags is not None:
            flags.add(flag)
        return 0.0
    return num / den


def _aligned(pred: EntitySets, gold: EntitySets) -> list[str]:
    if set(pred) != set(gold):
        missing = sorted(set(gold) ^ set(pred))
        raise AlignmentError(f"document ids differ: {missing[:5]}")
    return sorted(gold)


def prf(pred: EntitySets, gold: EntitySets, flags: set[str] | None = None) -> PRF:
    n_gold = n_pred = matched = 0
    for doc_id in _aligned(pred, gold):
        p, g = set(pred[doc_id]), set(gold[doc_id])
        n_pred += len(p)
        n_gold += len(g)
        matched += len(p & g)
    precision = _ratio(matched, n_pred, flags, "no_predictions")
    recall = _ratio(matched, n_gold, flags, "no_gold")
    return PRF(precision, recall, harmonic(precision, recall), n_gold, n_pred, matched)


def subset_filter(entities: Iterable[Entity], subset: str, doc: Document | None = None) -> list[Entity]:
    """Keep entities in ``subset``; ``cross_sentence`` needs the document."""
    if subset == "all":
        return list(entities)
    if subset == "discontinuous":
        return [e for e in entities if e.discontinuous]
    if subset == "cross_sentence":
        if doc is None:
            raise ValueError("cross_sentence filtering needs the document")
        return [e for e in entities if doc.is_cross_sentence(e)]
    raise ValueError(f"unknown subset {subset!r}")


def _by_id(docs) -> dict[str, Document] | None:
    if docs is None or isinstance(docs, Mapping):
        return docs
    return {d.id: d for d in docs}


def _filtered(sets: EntitySets, subset: str, docs: Mapping[str, Document] | None) -> dict[str, list[Entity]]:
    return {
        k: subset_filter(v, subset, docs.get(k) if docs else None) for k, v in sets.items()
    }


def unified_filter(gold: EntitySets, docs: Mapping[str, Document]) -> dict[str, list[Entity]]:
    """Drop cross-sentence discontinuous entities (legacy evaluation counts)."""
    return {
        k: [e for e in v if not docs[k].is_cross_sentence(e)]
        for k, v in gold.items()
    }


def tail_key(ent: Entity, doc: Document | None = None) -> Hashable:
    return ent.tail


def head_tail_key(ent: Entity, doc: Document | None = None) -> Hashable:
    return (ent.head, ent.tail)


def surface_tail_key(ent: Entity, doc: Document | None = None) -> Hashable:
    if doc is None:
        raise ValueError("surface keys need the document")
    return doc.tokens[ent.tail].text


BOUNDARY_KEYS: dict[str, Callable[[Entity, Document | None], Hashable]] = {
    "tail": tail_key,
    "head_tail": head_tail_key,
    "surface": surface_tail_key,
}


def ebf(
    pred: EntitySets,
    gold: EntitySets,
    variant: str = "matched",
    key: str = "tail",
    docs: Mapping[str, Document] | None = None,
    flags: set[str] | None = None,
) -> tuple[float, float, float]:
    """Boundary precision, recall and F1 over entity tail tokens.

    ``literal`` counts every (prediction, gold) pair with equal tails, so a
    tail repeated on the gold side is credited more than once and scores can
    exceed 1.  ``matched`` pairs tails one-to-one (multiset intersection).
    ``key`` selects what is compared: the tail index, the (head, tail) pair,
    or the tail's surface string.
    """
    if variant not in ("matched", "literal"):
        raise ValueError(f"unknown EBF variant {variant!r}")
    key_fn = BOUNDARY_KEYS[key]
    docs = _by_id(docs)
    n_gold = n_pred = 0
    hits = 0
    for doc_id in _aligned(pred, gold):
        doc = docs.get(doc_id) if docs else None
        p = Counter(key_fn(e, doc) for e in set(pred[doc_id]))
        g = Counter(key_fn(e, doc) for e in set(gold[doc_id]))
        n_pred += sum(p.values())
        n_gold += sum(g.values())
        if variant == "literal":
            hits += sum(c * g[k] for k, c in p.items())
        else:
            hits += sum((p & g).values())
    ebp = _ratio(hits, n_pred, flags, "no_predictions")
    ebr = _ratio(hits, n_gold, flags, "no_gold")
    return ebp, ebr, harmonic(ebp, ebr)


def exact_prf(
    pred: EntitySets,
    gold: EntitySets,
    docs: Mapping[str, Document] | None = None,
    ebf_variant: str = "matched",
    ebf_key: str = "tail",
) -> EvalReport:
    """Full report: exact match overall and per subset, plus boundary scores.

    The cross-sentence subset is reported only when ``docs`` are given.
    """
    flags: set[str] = set()
    docs = _by_id(docs)
    overall = prf(pred, gold, flags)
    report = EvalReport(
        overall.precision,
        overall.recall,
        overall.f1,
        *ebf(pred, gold, ebf_variant, ebf_key, docs),
        counts=(overall.gold, overall.predicted, int(overall.matched)),
        flags=flags,
    )
    report.subsets["all"] = overall
    report.subsets["discontinuous"] = prf(
        _filtered(pred, "discontinuous", docs), _filtered(gold, "discontinuous", docs)
    )
    if docs is not None:
        report.subsets["cross_sentence"] = prf(
            _filtered(pred, "cross_sentence", docs), _filtered(gold, "cross_sentence", docs)
        )
    return report


def gold_sets(docs: Iterable[Document]) -> dict[str, list[Entity]]:
    return {d.id: list(d.gold) for d in docs}
