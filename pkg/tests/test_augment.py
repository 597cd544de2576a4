import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from conftest import random_entity
from seda.augment import (
    SedaConfig,
    augment_document,
    build_segments,
    cross_sentence_report,
    grid_size_for,
    intersect,
    keep_current,
    localize,
    newline_samples,
    run_mul,
    run_once,
    select_boundaries,
    supplement,
)
from seda.corpus import Document, Entity, Span, corpus_coverage, tokenize
from seda.synthetic import generate_corpus
from seda.tagger.train import Checkpoint


def doc_of(n, gold=(), breaks=(), doc_id="d"):
    return Document.from_words(doc_id, [f"t{i}" for i in range(n)], breaks, gold)


def oracle_predict(monkeypatch, docs):
    """Replace model prediction with projection of the gold onto each sample."""
    from seda import augment

    def fake(model, samples, docs_):
        out = {d.id: set() for d in docs_}
        for s in samples:
            out[s.doc_id] |= {s.to_document(e) for e in s.gold}
        return {k: sorted(v) for k, v in out.items()}

    monkeypatch.setattr(augment, "_predict", fake)


# ------------------------------------------------------------ grid sizes
@pytest.mark.parametrize("length,size", [(150, 7), (300, 9), (1600, 17), (2500, 19)])
def test_grid_size_table(length, size):
    assert grid_size_for(length) == size


@pytest.mark.parametrize(
    "length,size", [(199, 7), (200, 9), (350, 11), (500, 13), (1000, 15), (1350, 16), (1500, 17), (2000, 19)]
)
def test_grid_size_boundaries(length, size):
    assert grid_size_for(length) == size


# -------------------------------------------------------------- config
def test_presets():
    cadec = SedaConfig.preset("CADEC")
    assert (cadec.es_enabled, cadec.nes_enabled, cadec.look_forward, cadec.look_backward) == (True, True, 4, 4)
    share = SedaConfig.preset("share13")
    assert (share.es_enabled, share.nes_enabled, share.look_forward, share.look_backward) == (True, False, 2, 2)


def test_config_text_round_trip():
    cfg = SedaConfig(es_enabled=True, nes_enabled=False, look_forward=3, look_backward=0, max_iterations=2, refine_combiner="replace")
    assert SedaConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", ["look_forward = -1", "combiner = union", "bogus = 1", "grid_size_table = 300:7, 200:9"])
def test_config_rejects(text):
    with pytest.raises(ValueError):
        SedaConfig.from_text(text)


# ------------------------------------------------------ select_boundaries
def _ckpt(epoch, preds):
    return Checkpoint(epoch, {}, 0.0, preds)


def test_select_single_checkpoint():
    c = _ckpt(1, {"a": []})
    assert select_boundaries([c], {"a": []}) is c


def test_select_best_ebf_and_ties_later():
    gold = {"a": [Entity.from_tokens("ADR", [1]), Entity.from_tokens("ADR", [3])]}
    half = {"a": [Entity.from_tokens("ADR", [1])]}
    full = {"a": [Entity.from_tokens("Drug", [0, 1]), Entity.from_tokens("Drug", [3])]}
    c1, c2, c3 = _ckpt(1, half), _ckpt(2, full), _ckpt(3, dict(full))
    assert select_boundaries([c1, c2], gold) is c2
    assert select_boundaries([c1, c2, c3], gold) is c3
    # by exact F1 the half-right checkpoint wins: tails alone earn nothing
    assert select_boundaries([c1, c2], gold, by="f1") is c1


# ------------------------------------------------------- build_segments
def test_one_entity_in_the_middle():
    doc = doc_of(12)
    segs = build_segments(doc, [Entity.from_tokens("ADR", [5, 6])], 7)
    assert [s.parity for s in segs] == ["even", "odd", "even"]
    assert segs[1].doc_range == Span(5, 7)


def test_interstitial_sentence_three_blocks():
    text = "In one ankle then a knee the other knee. This may be related to an underlying disease,"
    n = len(tokenize(text))
    doc = doc_of(n + 2)
    segs = build_segments(doc, [Entity.from_tokens("ADR", [n, n + 1])], 7)
    evens = [s for s in segs if s.parity == "even"]
    assert [s.block_id for s in evens] == ["0-1", "0-2", "0-3"]
    assert all(len(s) <= 7 for s in evens)


def test_no_predictions_only_even_blocks():
    doc = doc_of(30)
    segs = build_segments(doc, [], 7)
    assert all(s.parity == "even" and len(s) <= 7 for s in segs)
    assert sum(len(s) for s in segs) == 30


def test_prediction_outside_document():
    with pytest.raises(ValueError):
        build_segments(doc_of(4), [Entity.from_tokens("ADR", [6])], 7)


def test_overlapping_and_adjacent_anchors_merge():
    a = Entity.from_tokens("ADR", [2, 6])
    b = Entity.from_tokens("ADR", [4, 8])
    c = Entity.from_tokens("Drug", [9])
    segs = build_segments(doc_of(15), [a, b, c], 7)
    odd = [s for s in segs if s.parity == "odd"]
    assert len(odd) == 1 and odd[0].doc_range == Span(2, 10)
    assert set(odd[0].anchors) == {a, b, c}


@st.composite
def segmentation_cases(draw):
    n = draw(st.integers(1, 80))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    anchors = [random_entity(rng, n) for _ in range(draw(st.integers(0, 5)))]
    size = draw(st.sampled_from([1, 3, 7, 9]))
    return doc_of(n), anchors, size


@given(segmentation_cases())
def test_segments_partition_and_keep_anchors_whole(case):
    doc, anchors, size = case
    segs = build_segments(doc, anchors, size)
    assert [i for s in segs for i in range(*s.doc_range)] == list(range(len(doc)))
    for s in segs:
        if s.parity == "even":
            assert 1 <= len(s) <= size and not s.anchors
    for a in anchors:
        holders = [s for s in segs if s.doc_range.start <= a.interval.start and a.interval.end <= s.doc_range.end]
        assert len(holders) == 1 and holders[0].parity == "odd" and a in holders[0].anchors


# -------------------------------------------------------------- localize
def test_even_then_odd_joined():
    doc = doc_of(6, [Entity.from_tokens("ADR", [4, 5])])
    segs = build_segments(doc, doc.gold, 7)
    (s,) = localize(segs, doc)
    assert s.kind == "ES" and s.id == "d#0+1"
    assert s.gold == (Entity.from_tokens("ADR", [4, 5]),)


def test_trailing_blocks_are_nes():
    doc = doc_of(20)
    segs = build_segments(doc, [Entity.from_tokens("ADR", [1])], 7)
    samples = localize(segs, doc)
    assert [s.kind for s in samples] == ["ES", "NES", "NES", "NES"]
    assert samples[0].id == "d#0+1"


@given(segmentation_cases())
def test_es_samples_end_at_last_anchor(case):
    doc, anchors, size = case
    samples = localize(build_segments(doc, anchors, size), doc)
    assert [i for s in samples for i in s.offset_map] == list(range(len(doc)))
    for s in samples:
        assert (s.kind == "ES") == bool(s.anchors)
        if s.kind == "ES":
            last = max(a.tail for a in s.anchors)
            assert s.offset_map.index(last) == len(s) - 1


# ------------------------------------------------------------ supplement
def test_supplement_clips_at_start():
    doc = doc_of(10, [Entity.from_tokens("ADR", [0, 1])])
    (es, *_) = localize(build_segments(doc, doc.gold, 7), doc)
    wide = supplement(es, doc, SedaConfig(look_forward=0, look_backward=4))
    assert wide.offset_map == es.offset_map


def test_post_supplement_of_three():
    doc = doc_of(12, [Entity.from_tokens("ADR", [3])])
    (es, *_) = localize(build_segments(doc, doc.gold, 7), doc)
    wide = supplement(es, doc, SedaConfig(es_enabled=True, look_forward=3, look_backward=0))
    assert wide.offset_map == es.offset_map + (4, 5, 6)
    assert wide.tokens == doc.words[0:7]


def test_supplement_recovers_fragment():
    ent = Entity.from_tokens("ADR", [1, 2, 6])
    doc = doc_of(10, [ent])
    from seda.corpus import window_sample

    s = window_sample(doc, 0, 5, "ES", "x", [Entity.from_tokens("ADR", [1, 2])])
    assert s.gold == ()
    wide = supplement(s, doc, SedaConfig(look_forward=2, look_backward=0))
    assert len(wide) == 7
    assert wide.to_document(wide.gold[0]) == ent


def test_supplement_respects_switches():
    doc = doc_of(20)
    (nes, *_) = localize(build_segments(doc, [], 7), doc)
    assert supplement(nes, doc, SedaConfig(nes_enabled=False, look_forward=2)) == nes
    assert len(supplement(nes, doc, SedaConfig(nes_enabled=True, look_forward=2))) == 9


@given(segmentation_cases(), st.integers(0, 4), st.integers(0, 4))
def test_supplement_offsets_are_document_true(case, lf, lb):
    doc, anchors, _ = case
    for s in augment_document(doc, anchors, SedaConfig(look_forward=lf, look_backward=lb)):
        assert s.tokens == tuple(doc.words[i] for i in s.offset_map)
        assert list(s.offset_map) == list(range(s.offset_map[0], s.offset_map[-1] + 1))
        for e in s.gold:
            assert s.to_document(e) in doc.gold


# --------------------------------------------------------------- pipeline
def test_oracle_anchors_cover_cross_sentence():
    docs = generate_corpus(40, seed=2)
    samples = [s for d in docs for s in augment_document(d, d.gold, SedaConfig.preset("cadec"))]
    cov = corpus_coverage(samples, docs)
    base = corpus_coverage(newline_samples(docs), docs)
    assert cov.cross_sentence.total > 0
    assert cov.cross_sentence.rate == 1.0 and cov.all.rate == 1.0
    assert base.cross_sentence.covered == 0


def test_run_once_with_oracle(monkeypatch):
    docs = generate_corpus(10, seed=4)
    oracle_predict(monkeypatch, docs)
    result = run_once(docs, object(), SedaConfig.preset("cadec"), anchors={d.id: list(d.gold) for d in docs})
    assert result.predictions == {d.id: sorted(set(d.gold)) for d in docs}
    assert result.report["coverage"]["all"]["rate"] == 1.0


def test_run_once_with_empty_predictions(monkeypatch):
    docs = generate_corpus(5, seed=4)
    oracle_predict(monkeypatch, docs)
    result = run_once(docs, object(), SedaConfig(), anchors={d.id: [] for d in docs})
    assert result.report["es"] == 0 and result.report["nes"] > 0


def test_run_mul_single_iteration_equals_once(monkeypatch):
    docs = generate_corpus(6, seed=8)
    oracle_predict(monkeypatch, docs)
    anchors = {d.id: list(d.gold)[:2] for d in docs}
    once = run_once(docs, object(), SedaConfig(), anchors)
    mul = run_mul(docs, object(), SedaConfig(max_iterations=1), anchors)
    assert mul.predictions == once.predictions
    assert [s.id for s in mul.samples] == [s.id for s in once.samples]


def test_intersection_fixed_point_and_monotone(monkeypatch):
    docs = generate_corpus(6, seed=9)
    oracle_predict(monkeypatch, docs)
    mul = run_mul(docs, object(), SedaConfig(max_iterations=4), {d.id: list(d.gold) for d in docs})
    sizes = [sum(map(len, h.values())) for h in mul.iterations]
    assert sizes == sorted(sizes, reverse=True)
    assert mul.iterations[1] == mul.iterations[2] == mul.iterations[3]


def test_combiners():
    a, b, c = (Entity.from_tokens("ADR", [i]) for i in range(3))
    assert intersect({"d": [a, b]}, {"d": [b, c]}) == {"d": [b]}
    assert keep_current({"d": [a, b]}, {"d": [c]}) == {"d": [c]}


def test_cross_sentence_report():
    docs = generate_corpus(20, seed=6)
    base = newline_samples(docs)
    empty = {d.id: [] for d in docs}
    oracle = [s for d in docs for s in augment_document(d, d.gold, SedaConfig())]
    gold = {d.id: list(d.gold) for d in docs}
    rep = cross_sentence_report({"baseline": (base, empty), "oracle": (oracle, gold)}, docs)
    assert rep["baseline"]["coverage"] == 0.0 and rep["baseline"]["accuracy"] == 0.0
    assert rep["oracle"]["coverage"] == 1.0 and rep["oracle"]["accuracy"] == 1.0
    flat = [replace(d, gold=tuple(e for e in d.gold if not e.discontinuous)) for d in docs]
    na = cross_sentence_report({"baseline": (base, empty)}, flat)
    assert na["baseline"]["na"] and na["baseline"]["accuracy"] is None
