import warnings

import pytest
from hypothesis import given, strategies as st

from conftest import documents
from seda.corpus import (
    AnnotationParseError,
    ConsistencyError,
    Document,
    Entity,
    MaskWarning,
    OffsetRangeError,
    Sample,
    Span,
    TokenBoundaryError,
    corpus_coverage,
    corpus_stats,
    coverage,
    detokenize,
    load_corpus,
    mask_context,
    parse_standoff,
    read_documents,
    read_samples,
    split_newline,
    tokenize,
    whole_document_sample,
    window_sample,
    write_jsonl,
)


# ---------------------------------------------------------------- tokenize
def test_tokenize_peels_trailing_punctuation():
    assert [t.text for t in tokenize("stomach pain.")] == ["stomach", "pain", "."]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_splits_inner_punctuation():
    assert [t.text for t in tokenize("knee,the")] == ["knee", ",", "the"]


@given(st.text(alphabet=st.sampled_from("ab c,.\n\t-é'"), max_size=60))
def test_tokenize_round_trip(raw):
    toks = tokenize(raw)
    assert detokenize(toks, raw) == raw
    assert all(raw[t.char_start : t.char_end] == t.text for t in toks)
    assert [t.index for t in toks] == list(range(len(toks)))


# ----------------------------------------------------------- parse_standoff
def test_parse_discontinuous_fragments():
    doc = parse_standoff("severe muscle pain in legs", "T1\tADR 0 18;22 26\tsevere muscle pain legs")
    (ent,) = doc.gold
    assert ent == Entity("ADR", ((0, 3), (4, 5)))
    assert [doc.words[i] for i in ent.tokens] == ["severe", "muscle", "pain", "legs"]
    assert ent.discontinuous


def test_parse_empty_annotations():
    doc = parse_standoff("no entities here", "")
    assert doc.gold == ()
    assert len(doc) == 3


def test_adjacent_fragments_merge():
    doc = parse_standoff("muscle pain", "T1\tADR 0 6;7 11\tmuscle pain")
    assert doc.gold[0].spans == (Span(0, 2),)
    assert not doc.gold[0].discontinuous


def test_duplicate_annotations_deduplicate():
    ann = "T1\tADR 0 4\tknee\nT2\tADR 0 4\tknee\nT3\tDrug 0 4\tknee"
    doc = parse_standoff("knee pain", ann)
    assert len(doc.gold) == 2


def test_non_entity_lines_skipped():
    ann = "T1\tADR 0 4\tknee\n#1\tAnnotatorNotes T1\tx\nR1\tRel Arg1:T1 Arg2:T1\nA1\tNeg T1\n"
    assert len(parse_standoff("knee pain", ann).gold) == 1


def test_malformed_line_names_line_number():
    with pytest.raises(AnnotationParseError) as err:
        parse_standoff("knee pain", "T1\tADR 0 4\tknee\nT2\tADR zero 4\tknee")
    assert err.value.line_no == 2


def test_unknown_line_type_is_error():
    with pytest.raises(AnnotationParseError):
        parse_standoff("knee pain", "X1\tfoo")


def test_offsets_outside_text():
    with pytest.raises(OffsetRangeError):
        parse_standoff("knee", "T1\tADR 0 40\tknee")


def test_fragment_splitting_a_token():
    with pytest.raises(TokenBoundaryError) as err:
        parse_standoff("stomach pain", "T1\tADR 0 4\tstom")
    assert "stomach" in str(err.value)


def test_newline_breaks(knee_doc):
    assert knee_doc.sentence_breaks == (10,)
    assert knee_doc.words[10] == "pain"


def test_load_corpus_layout(tmp_path):
    for split in ("train", "test"):
        (tmp_path / split).mkdir()
        (tmp_path / split / "b.txt").write_text("knee pain\nrash")
        (tmp_path / split / "b.ann").write_text("T1\tADR 0 9\tknee pain\n")
        (tmp_path / split / "a.txt").write_text("nausea")
    corpus = load_corpus(tmp_path)
    assert set(corpus) == {"train", "test"}
    assert [d.id for d in corpus["train"]] == ["a", "b"]
    assert corpus["train"][1].sentence_breaks == (2,)


# ------------------------------------------------------------ split_newline
def test_cross_sentence_entities_dropped(knee_doc):
    samples = split_newline(knee_doc)
    assert len(samples) == 2
    assert all(s.gold == () for s in samples)
    assert all(knee_doc.is_cross_sentence(e) for e in knee_doc.gold)


def test_single_sentence_keeps_gold():
    doc = Document.from_words("d", ["knee", "and", "ankle", "pain"], (), [Entity.from_tokens("ADR", [0, 3])])
    (s,) = split_newline(doc)
    assert s.gold == doc.gold


def test_projection_shifts_offsets():
    words = "a b . c knee pain . d e".split()
    doc = Document.from_words("d", words, (3, 7), [Entity.from_tokens("ADR", [4, 5])])
    samples = split_newline(doc)
    assert [s.gold for s in samples] == [(), (Entity.from_tokens("ADR", [1, 2]),), ()]
    assert samples[1].to_document(samples[1].gold[0]) == doc.gold[0]


@given(documents())
def test_newline_split_partitions_and_accounts(doc):
    samples = split_newline(doc)
    assert [i for s in samples for i in s.offset_map] == list(range(len(doc)))
    projected = sum(len(s.gold) for s in samples)
    dropped = sum(
        1 for e in doc.gold if not any(set(e.tokens) <= set(s.offset_map) for s in samples)
    )
    assert projected + dropped == len(doc.gold)


# ------------------------------------------------------------- mask_context
def test_mask_nothing_before_first_entity():
    doc = Document.from_words("d", ["knee", "pain", "x"], (), [Entity.from_tokens("ADR", [0, 1])])
    assert mask_context(doc, "before_first") == doc


def test_mask_both_sides():
    doc = Document.from_words("d", ["A", "B", "ENT", "C", "D"], (), [Entity.from_tokens("ADR", [2])])
    masked = mask_context(doc, "both_sides")
    assert masked.raw == "[M] [M] ENT [M] [M]"
    assert masked.gold == doc.gold
    assert [t.text for t in tokenize(masked.raw)] != []
    assert detokenize(masked.tokens, masked.raw) == masked.raw


def test_mask_without_entities_warns():
    doc = Document.from_words("d", ["a", "b"])
    with pytest.warns(MaskWarning):
        assert mask_context(doc) == doc


@given(documents(min_len=2), st.sampled_from(["before_first", "after_last", "both_sides"]))
def test_mask_keeps_entity_region(doc, mode):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaskWarning)
        masked = mask_context(doc, mode)
    if doc.gold:
        lo = min(e.head for e in doc.gold)
        hi = max(e.tail for e in doc.gold)
        assert masked.words[lo : hi + 1] == doc.words[lo : hi + 1]
    assert len(masked) == len(doc)


# ----------------------------------------------------------------- coverage
def test_coverage_cross_sentence_zero(knee_doc):
    rep = coverage(split_newline(knee_doc), knee_doc)
    assert (rep.cross_sentence.covered, rep.cross_sentence.total) == (0, 2)


def test_coverage_whole_document(knee_doc):
    rep = coverage([whole_document_sample(knee_doc)], knee_doc)
    assert rep.covered == rep.total == 2


def test_coverage_synthetic_brute_force():
    from seda.synthetic import generate_corpus

    docs = generate_corpus(10, seed=3, disc_rate=0.3)
    n_cross = corpus_stats(docs)["cross_sentence"]
    assert n_cross >= 1
    samples = [s for d in docs for s in split_newline(d)]
    rep = corpus_coverage(samples, docs)
    assert rep.cross_sentence.covered == 0 and rep.cross_sentence.total == n_cross
    flat = [(d, e) for d in docs for e in d.gold if not e.discontinuous]
    brute = sum(
        any(set(e.tokens) <= set(s.offset_map) for s in samples if s.doc_id == d.id) for d, e in flat
    )
    assert brute == len(flat)
    assert rep.all.covered - rep.discontinuous.covered == len(flat)


def test_coverage_rejects_bad_offsets():
    doc = Document.from_words("d", ["a", "b"])
    bad = Sample("x", "d", ("a", "b", "c"), (0, 1, 2))
    with pytest.raises(ConsistencyError):
        coverage([bad], doc)


# -------------------------------------------------------------- data types
def test_entity_normalizes_spans():
    assert Entity("ADR", ((4, 5), (0, 2), (1, 3))).spans == (Span(0, 3), Span(4, 5))


def test_document_rejects_out_of_range_entity():
    with pytest.raises(OffsetRangeError):
        Document.from_words("d", ["a"], (), [Entity.from_tokens("ADR", [3])])


def test_sample_requires_increasing_offsets():
    with pytest.raises(ValueError):
        Sample("s", "d", ("a", "b"), (3, 1))


@given(doc=documents())
def test_records_round_trip(doc, tmp_path_factory):
    path = tmp_path_factory.mktemp("io") / "docs.jsonl"
    write_jsonl(path, [doc.to_record()])
    assert read_documents(path) == [doc]
    samples = split_newline(doc) + [window_sample(doc, 0, len(doc), "ES", "w", doc.gold[:1])]
    write_jsonl(path, [s.to_record() for s in samples])
    back = read_samples(path)
    assert back == samples
    assert back[-1].anchors == samples[-1].anchors
