"""Pixel-space neighbor selection: same-class target neighbors, per-foreign-
class impostor neighbors, and the (anchor, target, impostor) triples table.

Neighbors are chosen once in the original feature space by exact squared
Euclidean distance and are never refreshed while the codes move.  Distance
ties break toward the smaller index so tables are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dataset import Dataset
from .errors import CapacityError, ConfigError


@dataclass(frozen=True)
class NeighborConfig:
    """k same-class targets and m impostors per foreign class, per anchor."""

    k: int = 5
    m: int = 30

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.m < 1:
            raise ConfigError("m must be >= 1")


@dataclass(frozen=True)
class PairDecomposition:
    """Unique (anchor, target) and (anchor, impostor) pairs of a table plus
    the map from table rows back to them.

    Target pairs repeat once per impostor and impostor pairs once per
    target, so distance work per pass drops from one evaluation per row to
    one per unique pair.
    """

    target_pairs: np.ndarray  # (P1, 2)
    target_ids: np.ndarray  # (T,) row -> target pair
    impostor_pairs: np.ndarray  # (P2, 2)
    impostor_ids: np.ndarray  # (T,) row -> impostor pair


@dataclass(frozen=True)
class TriplesTable:
    """Rows of (anchor i, same-class target l, foreign impostor j) indices."""

    rows: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise ConfigError(f"triples must be (T, 3), got {rows.shape}")
        rows = rows.view()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def anchors(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def targets(self) -> np.ndarray:
        return self.rows[:, 1]

    @property
    def impostors(self) -> np.ndarray:
        return self.rows[:, 2]

    @cached_property
    def pairs(self) -> PairDecomposition:
        if len(self) == 0:
            empty = np.empty((0, 2), dtype=np.int64)
            ids = np.empty(0, dtype=np.int64)
            return PairDecomposition(empty, ids, empty, ids)
        base = int(self.rows.max()) + 1
        t_keys, t_ids = np.unique(self.anchors * base + self.targets,
                                  return_inverse=True)
        i_keys, i_ids = np.unique(self.anchors * base + self.impostors,
                                  return_inverse=True)
        return PairDecomposition(
            np.column_stack((t_keys // base, t_keys % base)), t_ids,
            np.column_stack((i_keys // base, i_keys % base)), i_ids,
        )


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of a and rows of b."""
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _nearest(dists: np.ndarray, count: int, candidates: np.ndarray) -> np.ndarray:
    """First `count` candidate indices per row by (distance, index).

    `candidates` must be ascending so that a stable sort on distance breaks
    ties toward the smaller global index.
    """
    order = np.argsort(dists, axis=1, kind="stable")[:, :count]
    return candidates[order]


def target_neighbors(train: Dataset, k: int) -> np.ndarray:
    """The k nearest same-class points of every anchor, self excluded.

    Returns an (n, k) array of global indices, each row sorted ascending.
    """
    n = len(train)
    out = np.empty((n, k), dtype=np.int64)
    for cls in range(train.num_classes):
        idx = train.class_indices(cls)
        if idx.size < k + 1:
            raise CapacityError(
                f"class {cls} has {idx.size} members; target neighbors need >= {k + 1}"
            )
        d = _sq_dists(train.features[idx], train.features[idx])
        np.fill_diagonal(d, np.inf)
        out[idx] = np.sort(_nearest(d, k, idx), axis=1)
    return out


def impostor_neighbors(train: Dataset, m: int) -> np.ndarray:
    """The m nearest points from each foreign class, per anchor.

    Returns an (n, m*(c-1)) array of global indices, rows sorted ascending.
    Raises CapacityError when any class is smaller than m or when there is
    no foreign class at all.
    """
    c = train.num_classes
    if c < 2:
        raise CapacityError("impostor selection needs at least two classes")
    n = len(train)
    per_class = []
    for cls in range(c):
        idx = train.class_indices(cls)
        if idx.size < m:
            raise CapacityError(
                f"class {cls} has {idx.size} members; impostor selection needs >= {m}"
            )
        per_class.append(idx)
    out = np.empty((n, m * (c - 1)), dtype=np.int64)
    for anchor_cls in range(c):
        a_idx = per_class[anchor_cls]
        blocks = []
        for foreign_cls in range(c):
            if foreign_cls == anchor_cls:
                continue
            f_idx = per_class[foreign_cls]
            d = _sq_dists(train.features[a_idx], train.features[f_idx])
            blocks.append(_nearest(d, m, f_idx))
        out[a_idx] = np.sort(np.concatenate(blocks, axis=1), axis=1)
    return out


def build_triples(train: Dataset, cfg: NeighborConfig) -> TriplesTable:
    """Cross product, per anchor, of its targets and its impostors.

    Row order is anchor-major, then target index ascending, then impostor
    index ascending; the row count is n * k * (c-1) * m whenever the
    capacity preconditions hold.
    """
    targets = target_neighbors(train, cfg.k)
    impostors = impostor_neighbors(train, cfg.m)
    n = len(train)
    per_anchor = targets.shape[1] * impostors.shape[1]
    i_col = np.repeat(np.arange(n, dtype=np.int64), per_anchor)
    l_col = np.repeat(targets, impostors.shape[1], axis=1).ravel()
    j_col = np.tile(impostors, (1, targets.shape[1])).ravel()
    return TriplesTable(np.column_stack((i_col, l_col, j_col)))


def dump_triples(table: TriplesTable, path) -> None:
    """Debug dump: rows as little-endian unsigned 64-bit triples."""
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(table.rows, dtype="<u8").tobytes())
