"""Walk through the word-pair grid on a small sentence with a gapped mention.

Run: python demos/01_grid_walkthrough.py
"""

from seda.corpus import Entity
from seda.grid import TagScheme, decode, encodable, encode

words = "she had severe pain in her left and right knees".split()
mentions = [
    Entity.from_tokens("ADR", [3, 4, 5, 6, 9]),  # pain in her left ... knees
    Entity.from_tokens("ADR", [3, 4, 5, 8, 9]),  # pain in her ... right knees
    Entity.from_tokens("ADR", [2, 3]),           # severe pain
]
scheme = TagScheme(("ADR",))

print("tokens:", " ".join(f"{i}:{w}" for i, w in enumerate(words)))
for m in mentions:
    print(f"  {m.label:4s} {m.tokens}  ->", " ".join(words[i] for i in m.tokens))

grid = encode(mentions, len(words), scheme)

# Upper triangle: next-neighbouring-word links.  Lower triangle and the
# diagonal: the tail-to-head cell that closes an entity and names its label.
print("\ngrid (. = none, > = next word, A = closes an ADR):")
print("    " + " ".join(f"{j:>2}" for j in range(len(words))))
for i, row in enumerate(grid.cells):
    cells = [".", ">"] + ["A"] * (len(scheme.tags) - 2)
    print(f"{i:>2}  " + " ".join(f"{cells[t]:>2}" for t in row))

back = decode(grid, scheme)
print("\ndecoded:", sorted(e.tokens for e in back))
print("round trip exact:", set(back) == set(mentions), "| encodable:", encodable(mentions))
