"""Canonical index orders for cherry and pendant count vectors.

A cherry is identified by ``(ell, j1, j2)`` with ``j1 <= j2``: branch-point
type ``ell`` and the unordered pair of leaf types.  A pendant is identified
by ``(ell, m)``: branch-point type ``ell`` and leaf type ``m``.

Two orders are supported:

* ``generic_lex`` - lexicographic in ``(ell, j1, j2)`` and ``(ell, m)``.
  Used for CSV output, config files, and all general-k machinery.
* ``paper_k2`` - the k=2 order used by the ten-dimensional urn vector
  ``X = (C1_11, C1_12, C1_22, C2_22, C2_12, C2_11, L1_1, L1_2, L2_2, L2_1)``
  where the type-2 cherry block is reversed and the pendant block is not
  lexicographic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAPER_K2_CHERRIES = [(1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 2, 2), (2, 1, 2), (2, 1, 1)]
PAPER_K2_PENDANTS = [(1, 1), (1, 2), (2, 2), (2, 1)]


def type_pairs(k: int) -> list[tuple[int, int]]:
    """Unordered type pairs (j1, j2), j1 <= j2, in lexicographic order."""
    return [(j1, j2) for j1 in range(1, k + 1) for j2 in range(j1, k + 1)]


@dataclass(frozen=True)
class IndexOrder:
    """Bijection between cherry/pendant labels and vector positions."""

    k: int
    tag: str
    cherries: tuple[tuple[int, int, int], ...]
    pendants: tuple[tuple[int, int], ...]
    cherry_pos: dict = field(repr=False, hash=False, compare=False, default=None)
    pendant_pos: dict = field(repr=False, hash=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "cherry_pos",
                           {c: i for i, c in enumerate(self.cherries)})
        object.__setattr__(self, "pendant_pos",
                           {p: i for i, p in enumerate(self.pendants)})

    @property
    def n_cherries(self) -> int:
        return len(self.cherries)

    @property
    def n_pendants(self) -> int:
        return len(self.pendants)

    @property
    def n_balls(self) -> int:
        """Size of the combined cherry+pendant (urn) vector."""
        return self.n_cherries + self.n_pendants

    @property
    def balls(self) -> tuple:
        return self.cherries + self.pendants

    def ball_weights(self) -> np.ndarray:
        """Urn weights: 2 per cherry ball, 1 per pendant ball."""
        return np.array([2.0] * self.n_cherries + [1.0] * self.n_pendants)

    def permutation_to(self, other: "IndexOrder") -> np.ndarray:
        """Index array ``perm`` with ``vec_other = vec_self[perm]`` for the
        combined cherry+pendant vector."""
        if self.k != other.k:
            raise ValueError("index orders have different k")
        nc = self.n_cherries
        perm = [self.cherry_pos[c] for c in other.cherries]
        perm += [nc + self.pendant_pos[p] for p in other.pendants]
        return np.array(perm, dtype=int)


def generic_lex(k: int) -> IndexOrder:
    cherries = tuple((ell, j1, j2) for ell in range(1, k + 1)
                     for (j1, j2) in type_pairs(k))
    pendants = tuple((ell, m) for ell in range(1, k + 1)
                     for m in range(1, k + 1))
    return IndexOrder(k, "generic_lex", cherries, pendants)


def paper_k2() -> IndexOrder:
    return IndexOrder(2, "paper_k2", tuple(PAPER_K2_CHERRIES), tuple(PAPER_K2_PENDANTS))


def get_order(k: int, tag: str) -> IndexOrder:
    if tag == "generic_lex":
        return generic_lex(k)
    if tag == "paper_k2":
        if k != 2:
            raise ValueError("paper_k2 order is defined only for k=2")
        return paper_k2()
    raise ValueError(f"unknown index order {tag!r}")
