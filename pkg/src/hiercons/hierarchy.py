"""Label trees: level class lists, parent maps, indicator matrices, label lifting.

Levels are numbered 1..H from coarse to fine. Inside the package a class is
always a dense index within its level; names only appear at file boundaries.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchySpec:
    level_classes: tuple
    parent_map: tuple = field(default=())

    def __post_init__(self):
        levels = tuple(tuple(str(c) for c in names) for names in self.level_classes)
        parents = tuple(np.asarray(p, dtype=np.int64) for p in self.parent_map)
        for arr in parents:
            arr.setflags(write=False)
        object.__setattr__(self, "level_classes", levels)
        object.__setattr__(self, "parent_map", parents)
        _validate(self)

    @property
    def num_levels(self) -> int:
        return len(self.level_classes)

    @property
    def sizes(self) -> tuple:
        return tuple(len(names) for names in self.level_classes)

    def size(self, level: int) -> int:
        self._check_level(level)
        return len(self.level_classes[level - 1])

    def parents_of(self, level: int) -> np.ndarray:
        """Parent indices (at ``level - 1``) for every class at ``level``."""
        if level < 2 or level > self.num_levels:
            raise HierarchyError(f"level {level} has no parent level")
        return self.parent_map[level - 2]

    def _check_level(self, level: int):
        if not 1 <= level <= self.num_levels:
            raise HierarchyError(f"level {level} outside 1..{self.num_levels}")

    def to_document(self) -> dict:
        return {
            "levels": [list(names) for names in self.level_classes],
            "parents": [p.tolist() for p in self.parent_map],
        }

    def __eq__(self, other):
        if not isinstance(other, HierarchySpec):
            return NotImplemented
        return self.to_document() == other.to_document()

    def __hash__(self):
        return hash(json.dumps(self.to_document()))


def _validate(spec: HierarchySpec):
    levels, parents = spec.level_classes, spec.parent_map
    if not levels:
        raise HierarchyError("hierarchy needs at least one level")
    if len(parents) != len(levels) - 1:
        raise HierarchyError(
            f"expected {len(levels) - 1} parent arrays for {len(levels)} levels, got {len(parents)}"
        )
    for h, names in enumerate(levels, start=1):
        if len(names) < 2:
            # the consensus loss divides by log of the class count
            raise HierarchyError(f"level {h} needs at least 2 classes, got {len(names)}")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise HierarchyError(f"duplicate class id(s) at level {h}: {dup}")
    for h in range(1, len(levels)):
        if len(levels[h - 1]) >= len(levels[h]):
            raise HierarchyError(
                f"level sizes must strictly increase: level {h} has {len(levels[h - 1])}, "
                f"level {h + 1} has {len(levels[h])}"
            )
    for h in range(2, len(levels) + 1):
        p = parents[h - 2]
        n_child, n_parent = len(levels[h - 1]), len(levels[h - 2])
        if p.shape != (n_child,):
            raise HierarchyError(f"parents for level {h} must have length {n_child}, got {p.shape}")
        bad = np.flatnonzero((p < 0) | (p >= n_parent))
        if bad.size:
            raise HierarchyError(
                f"dangling parent reference at level {h}: class {int(bad[0])} -> {int(p[bad[0]])} "
                f"(level {h - 1} has {n_parent} classes)"
            )
        orphans = np.setdiff1d(np.arange(n_parent), p)
        if orphans.size:
            raise HierarchyError(f"level {h - 1} class(es) {orphans.tolist()} have no children")


def parse_hierarchy(document) -> HierarchySpec:
    """Build a spec from a JSON string or an already-decoded mapping."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise HierarchyError(f"malformed hierarchy document: {exc}") from exc
    if not isinstance(document, dict) or "levels" not in document:
        raise HierarchyError("hierarchy document must be an object with a 'levels' field")
    levels = document["levels"]
    parents = document.get("parents", [])
    if not isinstance(levels, list) or not all(isinstance(lv, list) for lv in levels):
        raise HierarchyError("'levels' must be an array of arrays of class names")
    if not all(isinstance(n, str) for lv in levels for n in lv):
        raise HierarchyError("class names must be strings")
    if not isinstance(parents, list) or not all(isinstance(p, list) for p in parents):
        raise HierarchyError("'parents' must be an array of integer arrays")
    if not all(isinstance(i, int) and not isinstance(i, bool) for p in parents for i in p):
        raise HierarchyError("parent indices must be integers")
    return HierarchySpec(tuple(levels), tuple(parents))


def load_hierarchy(path) -> HierarchySpec:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"hierarchy file not found: {path}")
    return parse_hierarchy(path.read_text(encoding="utf-8"))


def save_hierarchy(spec: HierarchySpec, path):
    Path(path).write_text(json.dumps(spec.to_document(), indent=2) + "\n", encoding="utf-8")


def balanced_hierarchy(sizes: Sequence[int], prefix: str = "c") -> HierarchySpec:
    """A tree with the given level sizes; children are split into contiguous, near-equal runs."""
    sizes = [int(s) for s in sizes]
    levels = [[f"{prefix}{h}_{i}" for i in range(n)] for h, n in enumerate(sizes, start=1)]
    parents = [
        [j * sizes[h - 1] // sizes[h] for j in range(sizes[h])]
        for h in range(1, len(sizes))
    ]
    return HierarchySpec(tuple(levels), tuple(parents))


def ancestor_map(spec: HierarchySpec, h2: int, h1: int) -> np.ndarray:
    """For each class at ``h2``, the index of its ancestor at ``h1`` (``h1 <= h2``)."""
    spec._check_level(h1)
    spec._check_level(h2)
    if h1 > h2:
        raise HierarchyError(f"ancestor level {h1} is finer than {h2}")
    idx = np.arange(spec.size(h2))
    for level in range(h2, h1, -1):
        idx = spec.parents_of(level)[idx]
    return idx


def indicator_matrix(spec: HierarchySpec, h2: int, h1: int) -> np.ndarray:
    """Binary |level h2| x |level h1| matrix, 1 where the h2 class descends from the h1 class."""
    if h1 >= h2:
        raise HierarchyError(f"indicator matrix needs h1 < h2, got h1={h1}, h2={h2}")
    anc = ancestor_map(spec, h2, h1)
    out = np.zeros((spec.size(h2), spec.size(h1)), dtype=np.int64)
    out[np.arange(anc.size), anc] = 1
    return out


def pair_count(num_levels: int) -> int:
    return (num_levels - 1) * num_levels // 2


def level_pairs(num_levels: int) -> list:
    """All (coarse, fine) level pairs, ordered by fine level then coarse level."""
    return [(lo, hi) for hi in range(2, num_levels + 1) for lo in range(1, hi)]


def lift_labels(spec: HierarchySpec, fine_labels) -> np.ndarray:
    """Return an (n, H) array of labels at every level from finest-level labels."""
    fine = np.asarray(fine_labels, dtype=np.int64).reshape(-1)
    n_fine = spec.size(spec.num_levels)
    if fine.size and (fine.min() < 0 or fine.max() >= n_fine):
        bad = fine[(fine < 0) | (fine >= n_fine)][0]
        raise HierarchyError(f"fine label {int(bad)} out of range 0..{n_fine - 1}")
    out = np.empty((fine.size, spec.num_levels), dtype=np.int64)
    out[:, -1] = fine
    for level in range(spec.num_levels, 1, -1):
        out[:, level - 2] = spec.parents_of(level)[out[:, level - 1]]
    return out
