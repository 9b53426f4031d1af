"""Synthetic counting worlds with known per-tile ground truth."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geogrid
from .geogrid import CovariateRaster, GridSpec, RegionMask, TileGrid
from .proposal import Proposal, ProposalError, _mixture
from .sampler import substream, tile_index

LINKS = ("linear", "power", "threshold", "decoupled")


@dataclass(frozen=True)
class LinkSpec:
    """Covariate-to-rate map. ``rate = scale * link(h)``."""

    kind: str = "linear"
    gamma: float = 1.5
    threshold: float = 1.0
    scale: float = 5.0

    def __post_init__(self):
        if self.kind not in LINKS:
            raise ValueError(f"unknown link {self.kind!r}; choose from {LINKS}")
        if not self.scale >= 0 or not math.isfinite(self.scale):
            raise ValueError("link scale must be finite and non-negative")
        if self.kind == "power" and not self.gamma > 0:
            raise ValueError("power link needs gamma > 0")

    def rate(self, h: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
        if self.kind == "linear":
            return self.scale * h
        if self.kind == "power":
            return self.scale * h ** self.gamma
        if self.kind == "threshold":
            return self.scale * (h >= self.threshold)
        return self.scale * rng.lognormal(0.0, sigma, size=h.shape)


@dataclass(frozen=True)
class SyntheticWorld:
    raster: CovariateRaster
    mask: RegionMask
    tiles: TileGrid
    counts: np.ndarray
    link: LinkSpec = field(default_factory=LinkSpec)
    noise: float = 0.0
    sparsity: float = 0.0
    seed: int = 0
    deterministic: bool = False
    polygon: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.shape != (self.tiles.count,):
            raise ValueError("one count per tile is required")
        if (c < 0).any():
            raise ValueError("counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def truth(self) -> int:
        return exhaustive_count(self)

    @property
    def tile_size(self) -> float:
        return self.tiles.tile_size

    def metadata(self) -> dict:
        g = self.raster.grid
        return {
            "seed": self.seed,
            "link": {"kind": self.link.kind, "gamma": self.link.gamma,
                     "threshold": self.link.threshold, "scale": self.link.scale},
            "noise": self.noise,
            "sparsity": self.sparsity,
            "deterministic": self.deterministic,
            "tile_size": self.tiles.tile_size,
            "n_tiles": self.tiles.count,
            "region_area": self.mask.area,
            "grid": {"ncols": g.ncols, "nrows": g.nrows, "xll": g.xll, "yll": g.yll,
                     "cell_size": g.cell_size},
            "C": self.truth,
        }


def generate_world(ncols: int, nrows: Optional[int] = None, cell_size: float = 1.0,
                   l: Optional[float] = None, link: str = "linear", noise: float = 0.0,
                   sparsity: float = 0.0, seed: int = 0, *, gamma: float = 1.5,
                   threshold: float = 1.0, scale: float = 5.0, sigma: float = 1.0,
                   covariate_scale: float = 1.0, deterministic: bool = False,
                   polygon=None, xll: float = 0.0, yll: float = 0.0) -> SyntheticWorld:
    """Build a world from a log-normal covariate field.

    Per tile the rate is ``link(h(centre)) * max(0, 1 + noise * N(0, 1))`` and
    the count is Poisson with that rate, or the rounded rate when
    ``deterministic``. In deterministic mode the covariate itself is rounded to
    integers so that integer-scaled linear links give counts exactly
    proportional to it. A random ``sparsity`` fraction of tiles is then zeroed.
    """
    nrows = ncols if nrows is None else nrows
    l = cell_size if l is None else l
    if not 0 <= sparsity <= 1:
        raise ValueError("sparsity must lie in [0, 1]")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    spec = LinkSpec(link, gamma, threshold, scale)
    grid = GridSpec(int(ncols), int(nrows), xll, yll, cell_size)

    cov = covariate_scale * substream(seed, 0).lognormal(0.0, sigma, size=grid.shape)
    if deterministic:
        cov = np.rint(cov)
    raster = CovariateRaster(grid, cov)
    if polygon is None:
        mask = geogrid.full_mask(grid, raster)
    else:
        mask = geogrid.rasterize_region(polygon, grid, raster)
    tiles = geogrid.make_tile_grid(mask, l)

    h = geogrid.covariate_at(raster, tiles.centers[:, 0], tiles.centers[:, 1])
    rate = spec.rate(h, substream(seed, 4), sigma)
    if noise > 0:
        rate = rate * np.maximum(0.0, 1.0 + noise * substream(seed, 1).standard_normal(rate.shape))
    if deterministic:
        counts = np.rint(rate).astype(np.int64)
    else:
        counts = substream(seed, 2).poisson(rate).astype(np.int64)
    k = int(math.floor(sparsity * len(counts) + 0.5))
    if k:
        zeroed = substream(seed, 3).permutation(len(counts))[:k]
        counts[zeroed] = 0
    poly = None if polygon is None else np.asarray(polygon, dtype=float)
    return SyntheticWorld(raster, mask, tiles, counts, spec, noise, sparsity, int(seed), deterministic, poly)


def exhaustive_count(world: SyntheticWorld) -> int:
    """Sum of the counts of every tile in the partition."""
    return int(sum(int(c) for c in world.counts))


def count_at(world: SyntheticWorld, x, y=None):
    """Count of the tile containing each point; 0 outside the partition."""
    if y is None:
        x, y = x
    idx = tile_index(world.tiles, x, y)
    out = np.where(idx >= 0, world.counts[np.maximum(idx, 0)], 0)
    return int(out) if out.ndim == 0 else out


def count_integrals(world: SyntheticWorld, grid: Optional[GridSpec] = None):
    """Per-cell integrals of ``f`` and ``f**2`` over the cells of ``grid``.

    ``f(x)`` is the count of the tile containing ``x``; both results have the
    grid's ``(nrows, ncols)`` shape and units of count * km^2.
    """
    grid = world.mask.grid if grid is None else grid
    t = world.tiles
    lattice_counts = np.zeros((t.nty, t.ntx))
    kept = t.lattice >= 0
    lattice_counts[kept] = world.counts[t.lattice[kept]]
    ox, oy = geogrid.tile_overlap(t, grid)
    first = oy.T @ lattice_counts @ ox
    second = oy.T @ (lattice_counts ** 2) @ ox
    return first, second


def optimal_proposal(world: SyntheticWorld, epsilon: float = 0.0,
                     mask: Optional[RegionMask] = None) -> Proposal:
    """Proposal proportional to ``f``; with ``epsilon = 0`` this is ``q*``.

    On a grid whose cells are unions of tiles this is exact; otherwise it is
    the cell-averaged ``f``, the best proposal that is uniform within cells.
    """
    mask = world.mask if mask is None else mask
    first, _ = count_integrals(world, mask.grid)
    w = first[mask.included] / mask.grid.cell_area
    if not w.any() and epsilon == 0:
        raise ProposalError("world has no objects: q* is undefined with epsilon = 0")
    return _mixture(mask, w, epsilon, "optimal")


# ---------------------------------------------------------------------------
# serialization


def save_world(world: SyntheticWorld, directory, force: bool = False) -> Path:
    d = Path(directory)
    if d.exists() and any(d.iterdir()) and not force:
        raise FileExistsError(f"{d} exists and is not empty (use force)")
    d.mkdir(parents=True, exist_ok=True)
    geogrid.write_raster(world.raster, d / "covariate.asc")
    g = world.raster.grid
    poly = world.polygon
    if poly is None:
        poly = [[g.xll, g.yll], [g.xmax, g.yll], [g.xmax, g.ymax], [g.xll, g.ymax]]
    geogrid.write_polygon(poly, d / "region.json")
    with open(d / "counts.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tile_index", "x", "y", "count"])
        for k, ((x, y), c) in enumerate(zip(world.tiles.centers, world.counts)):
            writer.writerow([k, repr(float(x)), repr(float(y)), int(c)])
    (d / "metadata.json").write_text(json.dumps(world.metadata(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return d


def load_world(directory) -> SyntheticWorld:
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text(encoding="utf-8"))
    raster = geogrid.load_raster(d / "covariate.asc")
    poly = geogrid.load_polygon(d / "region.json")
    mask = geogrid.rasterize_region(poly, raster.grid, raster)
    tiles = geogrid.make_tile_grid(mask, meta["tile_size"])
    with open(d / "counts.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != tiles.count:
        raise ValueError(f"{d}: {len(rows)} counts for {tiles.count} tiles")
    counts = np.zeros(tiles.count, dtype=np.int64)
    for r in rows:
        counts[int(r["tile_index"])] = int(r["count"])
    spec = LinkSpec(**meta["link"])
    world = SyntheticWorld(raster, mask, tiles, counts, spec, meta["noise"], meta["sparsity"],
                           meta["seed"], meta["deterministic"], poly)
    if world.truth != meta["C"]:
        raise ValueError(f"{d}: stored C={meta['C']} but counts sum to {world.truth}")
    return world
