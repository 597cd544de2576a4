"""Corpus ingestion, tokenization, newline segmentation, masking and coverage.

Documents carry gold entities in document token coordinates.  Everything the
pipeline feeds to a model is a :class:`Sample`: a window of document tokens
plus an offset map that sends each sample position back to its document
position.
"""

from __future__ import annotations

import bisect
import json
import logging
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# brat line prefixes that carry no text-bound mention
_IGNORED_PREFIXES = ("#", "R", "A", "M", "E", "N", "*")


class CorpusError(ValueError):
    """Base class for ingestion errors."""


class AnnotationParseError(CorpusError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no


class OffsetRangeError(CorpusError):
    pass


class TokenBoundaryError(CorpusError):
    def __init__(self, fragment: tuple[int, int], token: "Token"):
        super().__init__(
            f"fragment {fragment[0]}-{fragment[1]} splits token "
            f"{token.index} {token.text!r} ({token.char_start}-{token.char_end})"
        )
        self.token = token


class ConsistencyError(CorpusError):
    pass


class MaskWarning(UserWarning):
    pass


class Token(NamedTuple):
    index: int
    text: str
    char_start: int
    char_end: int


class Span(NamedTuple):
    """Half-open token interval ``[start, end)``."""

    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start


def _normalize_spans(spans: Iterable[Sequence[int]]) -> tuple[Span, ...]:
    ordered = sorted((int(s), int(e)) for s, e in spans)
    merged: list[list[int]] = []
    for s, e in ordered:
        if s < 0 or e <= s:
            raise ValueError(f"invalid span [{s}, {e})")
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    if not merged:
        raise ValueError("an entity needs at least one span")
    return tuple(Span(s, e) for s, e in merged)


@dataclass(frozen=True, order=True)
class Entity:
    """A typed set of ordered, disjoint, non-adjacent token spans.

    Spans are normalized on construction: sorted, and overlapping or adjacent
    spans merged, so two entities covering the same tokens compare equal.
    """

    label: str
    spans: tuple[Span, ...]

    def __post_init__(self):
        object.__setattr__(self, "spans", _normalize_spans(self.spans))

    @classmethod
    def from_tokens(cls, label: str, indices: Iterable[int]) -> "Entity":
        return cls(label, tuple((i, i + 1) for i in indices))

    @property
    def tokens(self) -> tuple[int, ...]:
        return tuple(i for s in self.spans for i in range(s.start, s.end))

    @property
    def head(self) -> int:
        return self.spans[0].start

    @property
    def tail(self) -> int:
        return self.spans[-1].end - 1

    @property
    def interval(self) -> Span:
        """Minimal contiguous interval covering every fragment."""
        return Span(self.spans[0].start, self.spans[-1].end)

    @property
    def discontinuous(self) -> bool:
        return len(self.spans) >= 2

    def cross_sentence(self, sentence_breaks: Sequence[int]) -> bool:
        return sentence_index(sentence_breaks, self.head) != sentence_index(
            sentence_breaks, self.tail
        )

    def shift(self, offset: int) -> "Entity":
        return Entity(self.label, tuple((s + offset, e + offset) for s, e in self.spans))

    def to_record(self) -> dict:
        return {"label": self.label, "spans": [[s, e] for s, e in self.spans]}

    @classmethod
    def from_record(cls, rec: dict) -> "Entity":
        return cls(rec["label"], tuple(tuple(s) for s in rec["spans"]))


def sentence_index(sentence_breaks: Sequence[int], token: int) -> int:
    return bisect.bisect_right(sentence_breaks, token)


@dataclass(frozen=True)
class Document:
    id: str
    raw: str
    tokens: tuple[Token, ...]
    sentence_breaks: tuple[int, ...] = ()
    gold: tuple[Entity, ...] = ()

    def __post_init__(self):
        n = len(self.tokens)
        breaks = tuple(self.sentence_breaks)
        if any(b <= a for a, b in zip(breaks, breaks[1:])):
            raise ValueError(f"{self.id}: sentence_breaks not strictly ascending")
        if breaks and (breaks[0] <= 0 or breaks[-1] >= n):
            raise ValueError(f"{self.id}: sentence break outside token range")
        for ent in self.gold:
            if ent.spans[-1].end > n:
                raise OffsetRangeError(f"{self.id}: entity {ent} beyond {n} tokens")
        object.__setattr__(self, "sentence_breaks", breaks)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "gold", tuple(self.gold))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def sentences(self) -> list[Span]:
        bounds = [0, *self.sentence_breaks, len(self.tokens)]
        return [Span(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]

    def is_cross_sentence(self, ent: Entity) -> bool:
        """Discontinuous and touching two or more newline sentences."""
        return ent.discontinuous and ent.cross_sentence(self.sentence_breaks)

    @classmethod
    def from_words(
        cls,
        id: str,
        words: Sequence[str],
        sentence_breaks: Sequence[int] = (),
        gold: Iterable[Entity] = (),
    ) -> "Document":
        """Build a document from pre-tokenized words.

        The raw text is synthesized by joining words with single spaces and
        newlines at sentence breaks, so character offsets stay consistent.
        """
        breaks = set(sentence_breaks)
        parts: list[str] = []
        tokens: list[Token] = []
        pos = 0
        for i, w in enumerate(words):
            if i:
                sep = "\n" if i in breaks else " "
                parts.append(sep)
                pos += 1
            tokens.append(Token(i, w, pos, pos + len(w)))
            parts.append(w)
            pos += len(w)
        return cls(id, "".join(parts), tuple(tokens), tuple(sorted(breaks)), tuple(gold))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "tokens": list(self.words),
            "sentence_breaks": list(self.sentence_breaks),
            "entities": [e.to_record() for e in self.gold],
            "raw": self.raw,
            "char_spans": [[t.char_start, t.char_end] for t in self.tokens],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Document":
        gold = tuple(Entity.from_record(e) for e in rec.get("entities", ()))
        if "raw" in rec and "char_spans" in rec:
            toks = tuple(
                Token(i, w, s, e)
                for i, (w, (s, e)) in enumerate(zip(rec["tokens"], rec["char_spans"]))
            )
            return cls(rec["id"], rec["raw"], toks, tuple(rec.get("sentence_breaks", ())), gold)
        return cls.from_words(rec["id"], rec["tokens"], rec.get("sentence_breaks", ()), gold)


@dataclass(frozen=True)
class Sample:
    """A model input built from document tokens.

    ``offset_map[k]`` is the document index of sample token ``k``; ``gold``
    holds entities in sample coordinates.  ``kind`` is ``"sentence"`` for
    newline samples and ``"ES"``/``"NES"`` for augmented ones.
    """

    id: str
    doc_id: str
    tokens: tuple[str, ...]
    offset_map: tuple[int, ...]
    gold: tuple[Entity, ...] = ()
    kind: str = "sentence"
    anchors: tuple[Entity, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.offset_map):
            raise ValueError(f"{self.id}: tokens and offset_map differ in length")
        if any(b <= a for a, b in zip(self.offset_map, self.offset_map[1:])):
            raise ValueError(f"{self.id}: offset_map not strictly increasing")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def doc_range(self) -> Span:
        return Span(self.offset_map[0], self.offset_map[-1] + 1)

    def to_document(self, ent: Entity) -> Entity:
        """Map an entity in sample coordinates back to the document."""
        return Entity.from_tokens(ent.label, (self.offset_map[i] for i in ent.tokens))

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "doc_id": self.doc_id,
            "kind": self.kind,
            "tokens": list(self.tokens),
            "offset_map": list(self.offset_map),
            "entities": [e.to_record() for e in self.gold],
        }
        if self.anchors:
            rec["anchors"] = [e.to_record() for e in self.anchors]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        if "offset_map" not in rec:
            # a document record is accepted as a single whole-document sample
            doc = Document.from_record(rec)
            return whole_document_sample(doc)
        return cls(
            rec["id"],
            rec.get("doc_id", rec["id"]),
            tuple(rec["tokens"]),
            tuple(rec["offset_map"]),
            tuple(Entity.from_record(e) for e in rec.get("entities", ())),
            rec.get("kind", "sentence"),
            tuple(Entity.from_record(e) for e in rec.get("anchors", ())),
        )


@dataclass
class SubsetCount:
    total: int = 0
    covered: int = 0

    @property
    def rate(self) -> float | None:
        return self.covered / self.total if self.total else None


@dataclass
class CoverageReport:
    all: SubsetCount = field(default_factory=SubsetCount)
    discontinuous: SubsetCount = field(default_factory=SubsetCount)
    cross_sentence: SubsetCount = field(default_factory=SubsetCount)

    @property
    def total(self) -> int:
        return self.all.total

    @property
    def covered(self) -> int:
        return self.all.covered

    def __iadd__(self, other: "CoverageReport") -> "CoverageReport":
        for name in ("all", "discontinuous", "cross_sentence"):
            mine, theirs = getattr(self, name), getattr(other, name)
            mine.total += theirs.total
            mine.covered += theirs.covered
        return self

    def to_dict(self) -> dict:
        return {
            name: {"total": c.total, "covered": c.covered, "rate": c.rate}
            for name, c in (
                ("all", self.all),
                ("discontinuous", self.discontinuous),
                ("cross_sentence", self.cross_sentence),
            )
        }


def tokenize(raw_text: str) -> list[Token]:
    """Split on whitespace and give every punctuation character its own token."""
    return [
        Token(i, m.group(), m.start(), m.end())
        for i, m in enumerate(_TOKEN_RE.finditer(raw_text))
    ]


def detokenize(tokens: Sequence[Token], raw_text: str) -> str:
    """Rebuild text from tokens plus the original inter-token gaps."""
    out, pos = [], 0
    for t in tokens:
        out.append(raw_text[pos : t.char_start])
        out.append(t.text)
        pos = t.char_end
    out.append(raw_text[pos:])
    return "".join(out)


def newline_breaks(tokens: Sequence[Token], raw_text: str) -> tuple[int, ...]:
    return tuple(
        t.index
        for prev, t in zip(tokens, tokens[1:])
        if "\n" in raw_text[prev.char_end : t.char_start]
    )


def _fragment_span(tokens: Sequence[Token], starts: list[int], s: int, e: int) -> Span:
    lo = bisect.bisect_right(starts, s) - 1
    lo = max(lo, 0)
    covered = []
    for tok in tokens[lo:]:
        if tok.char_start >= e:
            break
        if tok.char_end <= s:
            continue
        if tok.char_start < s or tok.char_end > e:
            raise TokenBoundaryError((s, e), tok)
        covered.append(tok.index)
    if not covered:
        raise CorpusError(f"fragment {s}-{e} covers no token")
    return Span(covered[0], covered[-1] + 1)


def parse_standoff(raw_text: str, annotations: str, doc_id: str = "doc") -> Document:
    """Parse brat-style standoff annotations over ``raw_text``.

    Text-bound lines look like ``T1<TAB>LABEL s1 e1;s2 e2<TAB>surface``.
    Relation, attribute, note and comment lines are skipped.  Identical
    (label, span set) annotations are kept once.
    """
    tokens = tokenize(raw_text)
    starts = [t.char_start for t in tokens]
    seen: set[Entity] = set()
    gold: list[Entity] = []
    for line_no, line in enumerate(annotations.splitlines(), start=1):
        if not line.strip() or line.startswith(_IGNORED_PREFIXES):
            continue
        if not line.startswith("T"):
            raise AnnotationParseError(line_no, line, "unknown annotation type")
        cols = line.split("\t")
        if len(cols) < 2:
            raise AnnotationParseError(line_no, line, "expected tab-separated columns")
        label, _, offsets = cols[1].strip().partition(" ")
        if not label or not offsets:
            raise AnnotationParseError(line_no, line, "missing label or offsets")
        spans = []
        for frag in offsets.split(";"):
            parts = frag.split()
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise AnnotationParseError(line_no, line, f"bad fragment {frag!r}")
            s, e = int(parts[0]), int(parts[1])
            if not 0 <= s < e <= len(raw_text):
                raise OffsetRangeError(
                    f"line {line_no}: fragment {s}-{e} outside text of length {len(raw_text)}"
                )
            spans.append(_fragment_span(tokens, starts, s, e))
        ent = Entity(label, tuple(spans))
        if ent not in seen:
            seen.add(ent)
            gold.append(ent)
    return Document(doc_id, raw_text, tuple(tokens), newline_breaks(tokens, raw_text), tuple(gold))


def load_standoff_dir(directory: str | Path) -> list[Document]:
    """Load every ``*.txt`` with a sibling ``*.ann`` in one directory, sorted by id."""
    docs = []
    for txt in sorted(Path(directory).glob("*.txt")):
        ann = txt.with_suffix(".ann")
        annotations = ann.read_text(encoding="utf-8") if ann.exists() else ""
        docs.append(parse_standoff(txt.read_text(encoding="utf-8"), annotations, txt.stem))
    return docs


def load_corpus(root: str | Path, splits: Sequence[str] = ("train", "dev", "test")) -> dict[str, list[Document]]:
    root = Path(root)
    return {s: load_standoff_dir(root / s) for s in splits if (root / s).is_dir()}


def project_gold(doc: Document, offset_map: Sequence[int], entities: Iterable[Entity] | None = None) -> tuple[Entity, ...]:
    """Entities whose every token lies in ``offset_map``, in sample coordinates."""
    position = {d: k for k, d in enumerate(offset_map)}
    out = []
    for ent in doc.gold if entities is None else entities:
        idx = [position.get(t) for t in ent.tokens]
        if None not in idx:
            out.append(Entity.from_tokens(ent.label, idx))
    return tuple(out)


def window_sample(doc: Document, start: int, end: int, kind: str, sample_id: str, anchors=()) -> Sample:
    offsets = tuple(range(start, end))
    return Sample(
        sample_id,
        doc.id,
        doc.words[start:end],
        offsets,
        project_gold(doc, offsets),
        kind,
        tuple(anchors),
    )


def whole_document_sample(doc: Document) -> Sample:
    return window_sample(doc, 0, len(doc), "document", doc.id)


def split_newline(doc: Document) -> list[Sample]:
    """One sample per newline-delimited sentence.

    Entities whose spans reach into more than one sentence belong to no
    sample.
    """
    return [
        window_sample(doc, s.start, s.end, "sentence", f"{doc.id}#s{k}")
        for k, s in enumerate(doc.sentences())
    ]


MASK_MODES = ("before_first", "after_last", "both_sides")


def mask_context(doc: Document, mode: str = "both_sides", mask_token: str = "[M]") -> Document:
    """Replace tokens outside the gold entity region with ``mask_token``.

    The region runs from the first to the last token of any gold entity.
    Token indices are preserved; raw text is rebuilt with the original gaps.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    if not doc.gold:
        warnings.warn(f"{doc.id}: no gold entities, nothing masked", MaskWarning, stacklevel=2)
        return doc
    first = min(e.head for e in doc.gold)
    last = max(e.tail for e in doc.gold)

    def masked(i: int) -> bool:
        if mode in ("before_first", "both_sides") and i < first:
            return True
        return mode in ("after_last", "both_sides") and i > last

    parts, tokens, pos, prev_end = [], [], 0, 0
    for t in doc.tokens:
        gap = doc.raw[prev_end : t.char_start]
        text = mask_token if masked(t.index) else t.text
        parts += [gap, text]
        pos += len(gap)
        tokens.append(Token(t.index, text, pos, pos + len(text)))
        pos += len(text)
        prev_end = t.char_end
    parts.append(doc.raw[prev_end:])
    return replace(doc, raw="".join(parts), tokens=tuple(tokens))


def coverage(samples: Iterable[Sample], doc: Document) -> CoverageReport:
    """Count gold entities contained in full by at least one sample."""
    windows = []
    n = len(doc)
    for s in samples:
        if s.doc_id != doc.id:
            continue
        if s.offset_map and (s.offset_map[0] < 0 or s.offset_map[-1] >= n):
            raise ConsistencyError(f"sample {s.id} maps outside document {doc.id}")
        windows.append(frozenset(s.offset_map))
    report = CoverageReport()
    for ent in doc.gold:
        hit = any(all(t in w for t in ent.tokens) for w in windows)
        subsets = [report.all]
        if ent.discontinuous:
            subsets.append(report.discontinuous)
        if doc.is_cross_sentence(ent):
            subsets.append(report.cross_sentence)
        for c in subsets:
            c.total += 1
            c.covered += hit
    return report


def corpus_coverage(samples: Iterable[Sample], docs: Iterable[Document]) -> CoverageReport:
    by_doc: dict[str, list[Sample]] = {}
    for s in samples:
        by_doc.setdefault(s.doc_id, []).append(s)
    total = CoverageReport()
    for doc in docs:
        total += coverage(by_doc.get(doc.id, ()), doc)
    return total


def corpus_stats(docs: Iterable[Document]) -> dict[str, int]:
    """Entity, discontinuous and cross-sentence counts."""
    stats = {"entities": 0, "discontinuous": 0, "cross_sentence": 0}
    for doc in docs:
        for ent in doc.gold:
            stats["entities"] += 1
            stats["discontinuous"] += ent.discontinuous
            stats["cross_sentence"] += doc.is_cross_sentence(ent)
    return stats


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_documents(path: str | Path) -> list[Document]:
    return [Document.from_record(r) for r in read_jsonl(path)]


def read_samples(path: str | Path) -> list[Sample]:
    return [Sample.from_record(r) for r in read_jsonl(path)]
