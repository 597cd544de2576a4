"""Show how a document is cut into odd (entity) and even (context) blocks.

Cross-sentence mentions disappear from newline samples; the augmented
samples keep each anchor inside one window.

Run: python demos/02_segmentation.py
"""

from seda.augment import SedaConfig, augment_document, build_segments, grid_size_for, newline_samples
from seda.corpus import corpus_coverage
from seda.synthetic import generate_corpus

docs = generate_corpus(200, seed=0)
doc = next(d for d in docs if any(d.is_cross_sentence(e) for e in d.gold))
cross = [e for e in doc.gold if doc.is_cross_sentence(e)]

print(f"document {doc.id}: {len(doc.tokens)} tokens, sentence breaks at {list(doc.sentence_breaks)}")
for e in cross:
    print("  cross-sentence mention:", e.tokens, " ".join(doc.words[i] for i in e.tokens))

size = grid_size_for(len(doc.tokens))
print(f"\neven blocks are capped at {size} tokens")
for seg in build_segments(doc, doc.gold, size):
    text = " ".join(doc.words[seg.doc_range.start:seg.doc_range.end])
    print(f"  {seg.parity:4s} {seg.block_id:>5s} [{seg.doc_range.start:3d},{seg.doc_range.end:3d})  {text}")

config = SedaConfig.preset("cadec")
print("\naugmented samples (gold used as anchors):")
for s in augment_document(doc, doc.gold, config):
    print(f"  {s.kind:3s} {s.id:24s} {len(s):3d} tokens, {len(s.gold)} gold")

base = corpus_coverage(newline_samples(docs), docs).cross_sentence
seda = corpus_coverage([s for d in docs for s in augment_document(d, d.gold, config)], docs).cross_sentence
print(f"\ncross-sentence mentions fully inside some sample, 200 documents:")
print(f"  newline split  {base.covered}/{base.total}")
print(f"  augmented      {seda.covered}/{seda.total}")
