"""Self-adapted, entity-centric augmentation of documents into model samples.

Predicted entities (anchors) cut a document into alternating segments:
odd segments hold anchor intervals, even segments hold the text between
them.  Even text is chopped into blocks no longer than the grid size picked
for the document length.  Each odd segment is joined to the block right
before it, so its anchors sit at the end of an "ES" sample; leftover blocks
become "NES" samples.  Samples may then be widened by a few tokens on either
side before the model predicts on them again.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import (
    CoverageReport,
    Document,
    Entity,
    Sample,
    Span,
    corpus_coverage,
    project_gold,
    split_newline,
    window_sample,
)
from .metrics import ebf, prf

log = logging.getLogger(__name__)

# (exclusive upper bound on document length, grid size); longer documents get 19
DEFAULT_GRID_SIZES: tuple[tuple[int, int], ...] = (
    (200, 7),
    (350, 9),
    (500, 11),
    (1000, 13),
    (1350, 15),
    (1500, 16),
    (2000, 17),
)
LARGEST_GRID_SIZE = 19


@dataclass(frozen=True)
class SedaConfig:
    es_enabled: bool = True
    nes_enabled: bool = True
    look_forward: int = 4
    look_backward: int = 4
    grid_size_table: tuple[tuple[int, int], ...] = DEFAULT_GRID_SIZES
    max_iterations: int = 1
    refine_combiner: str = "intersection"
    select_by: str = "ebf"
    min_improvement: float = 1e-4

    def __post_init__(self):
        if self.look_forward < 0 or self.look_backward < 0:
            raise ValueError("supplemental interval sizes must be >= 0")
        bounds = [b for b, _ in self.grid_size_table]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("grid size table bounds must strictly increase")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.refine_combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.refine_combiner!r}")
        if self.select_by not in ("ebf", "f1"):
            raise ValueError(f"unknown selection metric {self.select_by!r}")

    @classmethod
    def preset(cls, corpus: str, **overrides) -> "SedaConfig":
        """Supplemental-interval settings tuned per corpus."""
        table = {
            "cadec": dict(es_enabled=True, nes_enabled=True, look_forward=4, look_backward=4),
            "share13": dict(es_enabled=True, nes_enabled=False, look_forward=2, look_backward=2),
            "share14": dict(es_enabled=True, nes_enabled=False, look_forward=2, look_backward=2),
        }
        return cls(**{**table[corpus.lower()], **overrides})

    @classmethod
    def from_file(cls, path: str | Path) -> "SedaConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "SedaConfig":
        """Parse ``key = value`` lines.

        Keys: es, nes, look_forward, look_backward, max_iterations, combiner,
        select_by, grid_size_table (``200:7, 350:9, ..., *:19``).
        """
        parser = configparser.ConfigParser()
        parser.read_string("[seda]\n" + text)
        sec = parser["seda"]
        aliases = {"es": "es_enabled", "nes": "nes_enabled", "combiner": "refine_combiner"}
        known = {f.name for f in fields(cls)}
        values: dict = {}
        for key, raw in sec.items():
            name = aliases.get(key, key)
            if name not in known:
                raise ValueError(f"unknown SEDA config key {key!r}")
            if name in ("es_enabled", "nes_enabled"):
                values[name] = sec.getboolean(key)
            elif name in ("look_forward", "look_backward", "max_iterations"):
                values[name] = sec.getint(key)
            elif name == "min_improvement":
                values[name] = sec.getfloat(key)
            elif name == "grid_size_table":
                values[name], default = _parse_table(raw)
                if default != LARGEST_GRID_SIZE:
                    raise ValueError("the size for the longest documents is fixed at 19")
            else:
                values[name] = raw.strip()
        return cls(**values)

    def to_text(self) -> str:
        table = ", ".join(f"{b}:{s}" for b, s in self.grid_size_table) + f", *:{LARGEST_GRID_SIZE}"
        return "\n".join(
            [
                f"es = {int(self.es_enabled)}",
                f"nes = {int(self.nes_enabled)}",
                f"look_forward = {self.look_forward}",
                f"look_backward = {self.look_backward}",
                f"max_iterations = {self.max_iterations}",
                f"combiner = {self.refine_combiner}",
                f"select_by = {self.select_by}",
                f"grid_size_table = {table}",
            ]
        ) + "\n"


def _parse_table(raw: str) -> tuple[tuple[tuple[int, int], ...], int]:
    rows, default = [], LARGEST_GRID_SIZE
    for item in raw.split(","):
        bound, _, size = item.strip().partition(":")
        if bound.strip() == "*":
            default = int(size)
        else:
            rows.append((int(bound), int(size)))
    return tuple(rows), default


@dataclass(frozen=True)
class Segment:
    parity: str  # "odd" holds anchors, "even" holds the text between them
    block_id: str
    doc_range: Span
    anchors: tuple[Entity, ...] = ()

    def __len__(self) -> int:
        return self.doc_range.end - self.doc_range.start


def grid_size_for(doc_length: int, table: Sequence[tuple[int, int]] = DEFAULT_GRID_SIZES) -> int:
    """Block size cap for a document: the first row whose bound exceeds its length."""
    for bound, size in table:
        if doc_length < bound:
            return size
    return LARGEST_GRID_SIZE


def select_boundaries(checkpoints, dev_gold: Mapping[str, Iterable[Entity]], by: str = "ebf"):
    """Checkpoint with the best dev EBF (or dev F1); ties go to the later epoch."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best, best_score = None, None
    for ckpt in checkpoints:
        preds = ckpt.dev_predictions
        if preds is None:
            continue
        gold = {k: list(dev_gold.get(k, ())) for k in preds}
        score = ebf(preds, gold)[2] if by == "ebf" else prf(preds, gold).f1
        if best_score is None or score >= best_score:
            best, best_score = ckpt, score
    return best if best is not None else checkpoints[-1]


def build_segments(doc: Document, predictions: Iterable[Entity], grid_size: int) -> list[Segment]:
    """Partition the document into odd anchor segments and even text blocks."""
    n = len(doc)
    anchors = sorted(set(predictions), key=lambda e: (e.interval, e))
    groups: list[tuple[int, int, list[Entity]]] = []
    for ent in anchors:
        s, e = ent.interval
        if e > n:
            raise ValueError(f"prediction {ent} outside document {doc.id} of {n} tokens")
        if groups and s <= groups[-1][1]:
            groups[-1] = (groups[-1][0], max(groups[-1][1], e), groups[-1][2] + [ent])
        else:
            groups.append((s, e, [ent]))

    segments: list[Segment] = []
    position = 0

    def add_even(start: int, end: int):
        nonlocal position
        if end <= start:
            return
        n_blocks = -(-(end - start) // grid_size)
        for b in range(n_blocks):
            lo = start + b * grid_size
            block_id = str(position) if n_blocks == 1 else f"{position}-{b + 1}"
            segments.append(Segment("even", block_id, Span(lo, min(lo + grid_size, end))))
        position += 1

    cursor = 0
    for s, e, ents in groups:
        add_even(cursor, s)
        segments.append(Segment("odd", str(position), Span(s, e), tuple(ents)))
        position += 1
        cursor = e
    add_even(cursor, n)
    return segments


def localize(segments: Sequence[Segment], doc: Document) -> list[Sample]:
    """Join each odd segment to the block just before it (ES); other blocks are NES."""
    samples: list[Sample] = []
    k = 0
    while k < len(segments):
        seg = segments[k]
        nxt = segments[k + 1] if k + 1 < len(segments) else None
        if seg.parity == "even" and nxt is not None and nxt.parity == "odd":
            sample_id = f"{doc.id}#{seg.block_id}+{nxt.block_id}"
            samples.append(window_sample(doc, seg.doc_range.start, nxt.doc_range.end, "ES", sample_id, nxt.anchors))
            k += 2
            continue
        if seg.parity == "odd":
            samples.append(window_sample(doc, seg.doc_range.start, seg.doc_range.end, "ES", f"{doc.id}#{seg.block_id}", seg.anchors))
        else:
            samples.append(window_sample(doc, seg.doc_range.start, seg.doc_range.end, "NES", f"{doc.id}#{seg.block_id}"))
        k += 1
    return samples


def supplement(sample: Sample, doc: Document, config: SedaConfig) -> Sample:
    """Widen a sample by up to ``look_backward``/``look_forward`` document tokens."""
    enabled = config.es_enabled if sample.kind == "ES" else config.nes_enabled
    if not enabled or not (config.look_backward or config.look_forward):
        return sample
    first, last = sample.offset_map[0], sample.offset_map[-1]
    before = tuple(range(max(0, first - config.look_backward), first))
    after = tuple(range(last + 1, min(len(doc), last + 1 + config.look_forward)))
    offsets = before + sample.offset_map + after
    words = doc.words
    return replace(
        sample,
        tokens=tuple(words[i] for i in offsets),
        offset_map=offsets,
        gold=project_gold(doc, offsets),
    )


def augment_document(doc: Document, anchors: Iterable[Entity], config: SedaConfig) -> list[Sample]:
    if not len(doc):
        return []
    size = grid_size_for(len(doc), config.grid_size_table)
    segments = build_segments(doc, anchors, size)
    return [supplement(s, doc, config) for s in localize(segments, doc)]


def augment_corpus(docs: Sequence[Document], anchors: Mapping[str, Iterable[Entity]], config: SedaConfig) -> list[Sample]:
    return [s for d in docs for s in augment_document(d, anchors.get(d.id, ()), config)]


def newline_samples(docs: Iterable[Document]) -> list[Sample]:
    return [s for d in docs for s in split_newline(d)]


def intersect(previous: Mapping[str, Iterable[Entity]], current: Mapping[str, Iterable[Entity]]) -> dict[str, list[Entity]]:
    return {k: sorted(set(previous.get(k, ())) & set(v)) for k, v in current.items()}


def keep_current(previous: Mapping[str, Iterable[Entity]], current: Mapping[str, Iterable[Entity]]) -> dict[str, list[Entity]]:
    return {k: sorted(set(v)) for k, v in current.items()}


COMBINERS: dict[str, Callable] = {"intersection": intersect, "replace": keep_current}


@dataclass
class SedaResult:
    samples: list[Sample]
    predictions: dict[str, list[Entity]]
    report: dict = field(default_factory=dict)
    model: object = None
    iterations: list[dict[str, list[Entity]]] = field(default_factory=list)


def _predict(model, samples: Sequence[Sample], docs: Sequence[Document]) -> dict[str, list[Entity]]:
    from .tagger.train import complete, predict_samples

    return complete(predict_samples(model, samples), docs)


def _resolve_model(model, dev_docs, config: SedaConfig):
    """Accept a model, or a training result whose checkpoints are picked on dev."""
    checkpoints = getattr(model, "checkpoints", None)
    if checkpoints is None:
        return model
    if dev_docs is None or all(c.dev_predictions is None for c in checkpoints):
        return model.model
    best = select_boundaries(checkpoints, {d.id: list(d.gold) for d in dev_docs}, config.select_by)
    return model.model_at(best)


def _report(samples: Sequence[Sample], docs: Sequence[Document]) -> dict:
    cov = corpus_coverage(samples, docs)
    kinds = {"ES": 0, "NES": 0}
    for s in samples:
        kinds[s.kind] = kinds.get(s.kind, 0) + 1
    return {
        "samples": len(samples),
        "es": kinds.get("ES", 0),
        "nes": kinds.get("NES", 0),
        "max_length": max((len(s) for s in samples), default=0),
        "coverage": cov.to_dict(),
    }


def retrain(
    model,
    config: SedaConfig,
    train_docs: Sequence[Document],
    model_factory: Callable,
    dev_docs: Sequence[Document] | None = None,
    train_anchors: Mapping[str, Iterable[Entity]] | None = None,
    dev_anchors: Mapping[str, Iterable[Entity]] | None = None,
):
    """Train a fresh model on training documents augmented around ``model``'s predictions."""
    if train_anchors is None:
        train_anchors = _predict(model, newline_samples(train_docs), train_docs)
    train_samples = augment_corpus(train_docs, train_anchors, config)
    dev_samples = None
    if dev_docs is not None:
        if dev_anchors is None:
            dev_anchors = _predict(model, newline_samples(dev_docs), dev_docs)
        dev_samples = augment_corpus(dev_docs, dev_anchors, config)
    return model_factory(train_samples, dev_docs=dev_docs, dev_samples=dev_samples), train_samples


def run_once(
    docs: Sequence[Document],
    model,
    config: SedaConfig,
    anchors: Mapping[str, Iterable[Entity]] | None = None,
    dev_docs: Sequence[Document] | None = None,
    train_docs: Sequence[Document] | None = None,
    model_factory: Callable | None = None,
) -> SedaResult:
    """One augmentation pass.

    Anchors default to the model's predictions on newline samples.  With
    ``model_factory`` and ``train_docs`` a new model is trained on training
    documents augmented the same way (anchored on the given model's own
    predictions) and used for the second prediction; otherwise the given
    model predicts on the augmented samples.  Entities are mapped back to
    document coordinates and deduplicated per document.
    """
    model = _resolve_model(model, dev_docs, config)
    if anchors is None:
        anchors = _predict(model, newline_samples(docs), docs)
    if model_factory is not None and train_docs is not None:
        model, _ = retrain(model, config, train_docs, model_factory, dev_docs)
    samples = augment_corpus(docs, anchors, config)
    predictions = _predict(model, samples, docs)
    return SedaResult(samples, predictions, _report(samples, docs), model, [predictions])


def run_mul(
    docs: Sequence[Document],
    model,
    config: SedaConfig,
    anchors: Mapping[str, Iterable[Entity]] | None = None,
    dev_docs: Sequence[Document] | None = None,
    train_docs: Sequence[Document] | None = None,
    model_factory: Callable | None = None,
    retrain_each_iteration: bool = False,
    stop_on_plateau: bool = True,
    first: SedaResult | None = None,
) -> SedaResult:
    """Iterated augmentation: each pass is anchored on the previous combined result.

    Pass 1 is :func:`run_once`.  After pass ``t`` the combined predictions
    are ``combiner(previous, current)``.  With ``dev_docs`` and
    ``stop_on_plateau`` the loop stops once dev EBF fails to improve by
    ``config.min_improvement``, keeping the last improving pass.  Later
    passes reuse the pass-1 model unless ``retrain_each_iteration``, in
    which case training documents are re-augmented around the current
    model's predictions and a new model is trained.  A pass-1 result
    computed earlier can be handed in as ``first``.
    """
    base_model = _resolve_model(model, dev_docs, config)
    combine = COMBINERS[config.refine_combiner]
    if first is None:
        first = run_once(docs, base_model, config, anchors, dev_docs, train_docs, model_factory)
    model = first.model
    combined = first.predictions
    history = [combined]
    samples = first.samples

    track_dev = dev_docs is not None and stop_on_plateau
    dev_combined = dev_score = None
    if dev_docs is not None:
        dev_anchors = _predict(base_model, newline_samples(dev_docs), dev_docs)
        dev_combined = _predict(model, augment_corpus(dev_docs, dev_anchors, config), dev_docs)
        dev_score = _dev_ebf(dev_combined, dev_docs)
    train_anchors = None

    for t in range(2, config.max_iterations + 1):
        if retrain_each_iteration and model_factory is not None and train_docs is not None:
            if train_anchors is None:
                train_anchors = _predict(model, newline_samples(train_docs), train_docs)
            model, train_samples = retrain(model, config, train_docs, model_factory, dev_docs, train_anchors, dev_combined)
            train_anchors = _predict(model, train_samples, train_docs)
        samples_t = augment_corpus(docs, combined, config)
        candidate = combine(combined, _predict(model, samples_t, docs))
        if dev_docs is not None:
            dev_current = _predict(model, augment_corpus(dev_docs, dev_combined, config), dev_docs)
            dev_candidate = combine(dev_combined, dev_current)
            score = _dev_ebf(dev_candidate, dev_docs)
            if track_dev and score < dev_score + config.min_improvement:
                log.info("iteration %d: dev EBF %.4f did not improve on %.4f; stopping", t, score, dev_score)
                break
            dev_combined, dev_score = dev_candidate, score
        combined, samples = candidate, samples_t
        history.append(combined)
    report = _report(samples, docs)
    report["iterations"] = len(history)
    return SedaResult(samples, combined, report, model, history)


def _dev_ebf(predictions, dev_docs) -> float:
    return ebf(predictions, {d.id: list(d.gold) for d in dev_docs})[2]


def cross_sentence_report(
    methods: Mapping[str, tuple[Sequence[Sample], Mapping[str, Iterable[Entity]]]],
    docs: Sequence[Document],
) -> dict[str, dict]:
    """Coverage and accuracy on cross-sentence gold entities, per method.

    ``methods`` maps a name to ``(samples, predictions)``.  Coverage is the
    share of cross-sentence gold entities fully inside some sample; accuracy
    the share predicted exactly.  Both are ``None`` (flagged N/A) when the
    gold has no cross-sentence entity.
    """
    targets = {d.id: {e for e in d.gold if d.is_cross_sentence(e)} for d in docs}
    total = sum(len(v) for v in targets.values())
    out = {}
    for name, (samples, predictions) in methods.items():
        cov: CoverageReport = corpus_coverage(samples, docs)
        hit = sum(len(targets[k] & set(predictions.get(k, ()))) for k in targets)
        out[name] = {
            "total": total,
            "covered": cov.cross_sentence.covered,
            "coverage": cov.cross_sentence.rate,
            "correct": hit,
            "accuracy": hit / total if total else None,
            "na": total == 0,
        }
    return out
