"""Reproducible i.i.d. location sampling from cell-wise proposals.

Randomness comes from numpy's PCG64. A draw call with seed ``s`` splits its
samples into fixed blocks of :data:`BLOCK` and block ``k`` uses the stream
``SeedSequence(s, spawn_key=(k,))``, so a batch is identical however the
blocks are distributed over workers. Derived seeds for independent calls come
from :func:`derive_seed`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geogrid import GeometryError, RegionMask, TileGrid
from .proposal import Proposal, uniform_proposal

BLOCK = 4096


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for sub-task ``key`` of the run seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class AliasTable:
    """Vose alias table over the included cells (flat indices ``cells``)."""

    cells: np.ndarray
    prob: np.ndarray
    alias: np.ndarray

    def masses(self) -> np.ndarray:
        """Reconstruct each entry's probability from the table."""
        n = len(self.prob)
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / n


def build_alias_table(p: Proposal) -> AliasTable:
    cells = np.flatnonzero(p.mask.included.ravel())
    masses = p.masses.ravel()[cells]
    n = len(masses)
    scaled_arr = masses * (n / masses.sum())
    small = np.flatnonzero(scaled_arr < 1.0).tolist()
    large = np.flatnonzero(scaled_arr >= 1.0).tolist()
    # plain lists: element access on numpy arrays dominates otherwise
    scaled = scaled_arr.tolist()
    prob = [1.0] * n
    alias = list(range(n))
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        # subtract in the order that loses the least precision
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # leftovers are 1 up to rounding
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(cells, np.array(prob), np.array(alias, dtype=np.int64))


@dataclass(frozen=True)
class SampleBatch:
    x: np.ndarray
    y: np.ndarray
    q: np.ndarray
    seed: int
    source: str = ""
    cells: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.x)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "q", "seed", "source"])
            for a, b, c in zip(self.x, self.y, self.q):
                writer.writerow([repr(float(a)), repr(float(b)), repr(float(c)), self.seed, self.source])

    @classmethod
    def read_csv(cls, path) -> "SampleBatch":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty sample batch")
        return cls(np.array([float(r["x"]) for r in rows]), np.array([float(r["y"]) for r in rows]),
                   np.array([float(r["q"]) for r in rows]), int(rows[0]["seed"]), rows[0]["source"])


def _draw_block(p: Proposal, table: AliasTable, m: int, rng: np.random.Generator):
    u = rng.random((m, 4))
    n = len(table.prob)
    k = np.minimum((u[:, 0] * n).astype(np.int64), n - 1)
    k = np.where(u[:, 1] < table.prob[k], k, table.alias[k])
    flat = table.cells[k]
    g = p.grid
    row, col = np.divmod(flat, g.ncols)
    x0, y0 = g.cell_lower_left(row, col)
    x = x0 + u[:, 2] * g.cell_size
    y = y0 + u[:, 3] * g.cell_size
    return x, y, flat


def draw(p: Proposal, table: AliasTable, n: int, seed: int, source: str = "",
         blocks: Optional[range] = None) -> SampleBatch:
    """Draw ``n`` i.i.d. points from ``p``: alias-pick a cell, then a uniform
    point inside it. ``blocks`` restricts the work to a subset of blocks."""
    if n < 1:
        raise ValueError("n must be at least 1")
    nblocks = -(-n // BLOCK)
    xs, ys, cs = [], [], []
    for b in (range(nblocks) if blocks is None else blocks):
        m = min(BLOCK, n - b * BLOCK)
        x, y, c = _draw_block(p, table, m, substream(seed, b))
        xs.append(x)
        ys.append(y)
        cs.append(c)
    x, y, cells = np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)
    q = p.density.ravel()[cells]
    return SampleBatch(x, y, q, int(seed), source or p.label, cells)


def draw_uniform(mask: RegionMask, n: int, seed: int) -> SampleBatch:
    u = uniform_proposal(mask)
    return draw(u, build_alias_table(u), n, seed, "uniform")


def tile_index(grid: TileGrid, x, y) -> np.ndarray:
    """Tile indices of the points; ``-1`` outside the partition."""
    if not grid.materialized:
        raise GeometryError("tile grid too large to index; only its count is known")
    j, i = grid.lattice_position(x, y)
    out = np.full(np.shape(j), -1, dtype=np.int64)
    ok = j >= 0
    out[ok] = grid.lattice[j[ok], i[ok]]
    return out


def tile_of(grid: TileGrid, x, y=None):
    """Index of the partition tile containing a point (or points).

    Raises :class:`GeometryError` for points outside the partition, including
    points in dropped boundary tiles.
    """
    if y is None:
        x, y = x
    idx = tile_index(grid, x, y)
    if (idx < 0).any():
        raise GeometryError("point lies outside the tile partition")
    return int(idx) if idx.ndim == 0 else idx
