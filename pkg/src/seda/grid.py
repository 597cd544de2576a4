"""Word-pair tag grids: encode entities as NNW/THW relations and decode them back.

Placement convention:

* ``NNW`` at ``(i, j)`` with ``i < j``: word ``j`` follows word ``i`` inside an entity.
* ``THW-label`` at ``(tail, head)`` with ``tail >= head``.
* extended mode mirrors them: ``PNW`` at ``(j, i)`` and ``HTW-label`` at ``(head, tail)``.

A cell holds one tag.  Mirror tags never overwrite a base tag, so for short
entities (where a mirror lands on the cell of a base tag) the base tag wins.
Mirror tags are auxiliary targets; decoding ignores them.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Entity

NONE = 0
NNW = 1


class EncodeConflictError(ValueError):
    pass


class DecodeDegenerateError(RuntimeError):
    pass


@dataclass(frozen=True)
class TagScheme:
    labels: tuple[str, ...]
    mode: str = "base"

    def __post_init__(self):
        if self.mode not in ("base", "extended"):
            raise ValueError(f"unknown tag scheme mode {self.mode!r}")
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")

    @property
    def tags(self) -> tuple[str, ...]:
        names = ["NONE", "NNW", *(f"THW-{l}" for l in self.labels)]
        if self.mode == "extended":
            names += ["PNW", *(f"HTW-{l}" for l in self.labels)]
        return tuple(names)

    def __len__(self) -> int:
        return len(self.tags)

    def thw(self, label: str) -> int:
        return 2 + self.labels.index(label)

    @property
    def pnw(self) -> int:
        if self.mode != "extended":
            raise ValueError("PNW exists only in the extended scheme")
        return 2 + len(self.labels)

    def htw(self, label: str) -> int:
        return self.pnw + 1 + self.labels.index(label)

    def is_thw(self, tag: int) -> bool:
        return 2 <= tag < 2 + len(self.labels)

    def is_htw(self, tag: int) -> bool:
        return self.mode == "extended" and tag > self.pnw

    def label_of(self, tag: int) -> str:
        if self.is_thw(tag):
            return self.labels[tag - 2]
        if self.is_htw(tag):
            return self.labels[tag - self.pnw - 1]
        raise ValueError(f"tag {tag} carries no label")

    def tag_id(self, name: str) -> int:
        return self.tags.index(name)

    @classmethod
    def from_entities(cls, entities: Iterable[Entity], mode: str = "base") -> "TagScheme":
        return cls(tuple(sorted({e.label for e in entities})), mode)


@dataclass
class TagGrid:
    n: int
    cells: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "TagGrid":
        return cls(n, np.zeros((n, n), dtype=np.int64))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TagGrid)
            and self.n == other.n
            and np.array_equal(self.cells, other.cells)
        )

    def to_record(self, scheme: TagScheme, sample_id: str) -> dict:
        ii, jj = np.nonzero(self.cells)
        names = scheme.tags
        return {
            "sample_id": sample_id,
            "n": self.n,
            "cells": [[int(i), int(j), names[self.cells[i, j]]] for i, j in zip(ii, jj)],
        }

    @classmethod
    def from_record(cls, rec: dict, scheme: TagScheme) -> "TagGrid":
        grid = cls.empty(rec["n"])
        for i, j, name in rec["cells"]:
            grid.cells[i, j] = scheme.tag_id(name)
        return grid


def encode(entities: Iterable[Entity], n: int, scheme: TagScheme) -> TagGrid:
    """Write NNW links and a THW closing tag for every entity."""
    grid = TagGrid.empty(n)
    cells = grid.cells
    owner: dict[tuple[int, int], Entity] = {}
    entities = list(entities)
    for ent in entities:
        words = ent.tokens
        if words[-1] >= n:
            raise ValueError(f"entity {ent} outside grid of size {n}")
        for a, b in zip(words, words[1:]):
            cells[a, b] = NNW
        cell = (ent.tail, ent.head)
        tag = scheme.thw(ent.label)
        if cells[cell] not in (NONE, tag):
            raise EncodeConflictError(
                f"THW cell {cell} claimed by {owner[cell]} and {ent}"
            )
        cells[cell] = tag
        owner[cell] = ent
    if scheme.mode == "extended":
        for ent in entities:
            words = ent.tokens
            for a, b in zip(words, words[1:]):
                if cells[b, a] == NONE:
                    cells[b, a] = scheme.pnw
            if cells[ent.head, ent.tail] == NONE:
                cells[ent.head, ent.tail] = scheme.htw(ent.label)
    return grid


def misplaced(grid: TagGrid, scheme: TagScheme) -> np.ndarray:
    """Boolean mask of cells whose tag sits in the wrong triangle."""
    cells = grid.cells
    i, j = np.indices(cells.shape)
    bad = (cells == NNW) & (i >= j)
    thw = (cells >= 2) & (cells < 2 + len(scheme.labels))
    bad |= thw & (i < j)
    if scheme.mode == "extended":
        bad |= (cells == scheme.pnw) & (i <= j)
        bad |= (cells > scheme.pnw) & (i > j)
    bad |= (cells < 0) | (cells >= len(scheme))
    return bad


def repair(grid: TagGrid, scheme: TagScheme) -> tuple[TagGrid, int]:
    """Set misplaced tags to NONE; returns the repaired grid and the count."""
    bad = misplaced(grid, scheme)
    cells = np.where(bad, NONE, grid.cells)
    return TagGrid(grid.n, cells), int(bad.sum())


def project_base(grid: TagGrid, scheme: TagScheme) -> TagGrid:
    """Drop mirror tags, leaving a grid in the base scheme's tag ids."""
    if scheme.mode == "base":
        return grid
    cells = np.where(grid.cells >= scheme.pnw, NONE, grid.cells)
    return TagGrid(grid.n, cells)


def _paths(succ: dict[int, list[int]], head: int, tail: int, cap: int) -> list[tuple[int, ...]]:
    found: list[tuple[int, ...]] = []
    stack = [(head, (head,))]
    while stack:
        node, path = stack.pop()
        if node == tail:
            found.append(path)
            if len(found) > cap:
                raise DecodeDegenerateError(
                    f"more than {cap} NNW paths from {head} to {tail}"
                )
            continue
        for nxt in reversed(succ.get(node, ())):
            if nxt <= tail:
                stack.append((nxt, path + (nxt,)))
    return found


def decode(
    grid: TagGrid,
    scheme: TagScheme,
    max_paths: int = 1000,
    diagnostics: Counter | None = None,
) -> list[Entity]:
    """Recover entities: one per NNW path from head to tail of each THW cell.

    Output is ordered by (head, tail, label) and free of duplicates.  When a
    ``diagnostics`` counter is given it receives ``misplaced`` (cells ignored
    for sitting in the wrong triangle) and, in extended mode,
    ``mirror_mismatch`` (mirror tags not matching a base tag).
    """
    bad = misplaced(grid, scheme)
    cells = np.where(bad, NONE, grid.cells)
    if diagnostics is not None:
        diagnostics["misplaced"] += int(bad.sum())
        if scheme.mode == "extended":
            diagnostics["mirror_mismatch"] += _mirror_mismatches(cells, scheme)
    succ: dict[int, list[int]] = {}
    for i, j in zip(*np.nonzero(cells == NNW)):
        succ.setdefault(int(i), []).append(int(j))
    closings = []
    for t, h in zip(*np.nonzero((cells >= 2) & (cells < 2 + len(scheme.labels)))):
        closings.append((int(h), int(t), scheme.label_of(int(cells[t, h]))))
    closings.sort()
    out: list[Entity] = []
    seen: set[Entity] = set()
    for h, t, label in closings:
        paths = [(h,)] if h == t else _paths(succ, h, t, max_paths)
        for path in paths:
            ent = Entity.from_tokens(label, path)
            if ent not in seen:
                seen.add(ent)
                out.append(ent)
    return out


def _mirror_mismatches(cells: np.ndarray, scheme: TagScheme) -> int:
    count = 0
    for i, j in zip(*np.nonzero(cells == scheme.pnw)):
        count += cells[j, i] != NNW
    for h, t in zip(*np.nonzero(cells > scheme.pnw)):
        count += cells[t, h] != scheme.thw(scheme.label_of(int(cells[h, t])))
    return int(count)


def encodable(entities: Sequence[Entity]) -> bool:
    """True when the grid of ``entities`` decodes back to exactly them.

    Fails on THW label clashes, and when NNW links of different entities
    chain into a head-to-tail path no entity owns.  Paths are counted by
    dynamic programming over the NNW DAG.
    """
    labels: dict[tuple[int, int], str] = {}
    owned: dict[tuple[int, int], set[tuple[int, ...]]] = {}
    succ: dict[int, set[int]] = {}
    for ent in entities:
        key = (ent.head, ent.tail)
        if labels.setdefault(key, ent.label) != ent.label:
            return False
        owned.setdefault(key, set()).add(ent.tokens)
        words = ent.tokens
        for a, b in zip(words, words[1:]):
            succ.setdefault(a, set()).add(b)
    for (h, t), paths in owned.items():
        count = {h: 1}
        for node in range(h, t + 1):
            c = count.get(node, 0)
            if not c:
                continue
            for nxt in succ.get(node, ()):
                if nxt <= t:
                    count[nxt] = count.get(nxt, 0) + c
        if h != t and count.get(t, 0) != len(paths):
            return False
    return True
