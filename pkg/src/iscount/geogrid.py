"""Covariate rasters, region masks and the tile partition of a region.

Coordinates are planar kilometres. Raster rows are stored north-first, as in
ESRI ASCII grids, so ``values[0]`` is the top row. Every cell and tile owns the
half-open box ``[lo, hi)`` along each axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

PathLike = Union[str, Path]

DEFAULT_NODATA = -9999.0
# Above this many tiles only the count is kept; centres are not materialized.
TILE_MATERIALIZE_CAP = 5_000_000

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class RasterFormatError(ValueError):
    """Malformed or out-of-contract raster file."""


class GeometryError(ValueError):
    """Invalid geometry: degenerate polygon, mismatched grids, empty tiling."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a square-celled grid anchored at its lower-left corner."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cell_size: float

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GeometryError("grid must have at least one row and column")
        if not self.cell_size > 0:
            raise GeometryError("cell_size must be positive")

    @property
    def shape(self) -> tuple:
        return (self.nrows, self.ncols)

    @property
    def cell_area(self) -> float:
        return self.cell_size * self.cell_size

    @property
    def width(self) -> float:
        return self.ncols * self.cell_size

    @property
    def height(self) -> float:
        return self.nrows * self.cell_size

    @property
    def xmax(self) -> float:
        return self.xll + self.width

    @property
    def ymax(self) -> float:
        return self.yll + self.height

    def cell_index(self, x, y):
        """Return ``(row, col)`` arrays of the cells containing the points.

        Points outside the grid get ``-1`` in both outputs.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = np.floor((x - self.xll) / self.cell_size).astype(np.int64)
        row_up = np.floor((y - self.yll) / self.cell_size).astype(np.int64)
        inside = (col >= 0) & (col < self.ncols) & (row_up >= 0) & (row_up < self.nrows)
        row = np.where(inside, self.nrows - 1 - row_up, -1)
        col = np.where(inside, col, -1)
        return row, col

    def cell_centers(self):
        """Centre coordinates ``(xc, yc)`` as two ``(nrows, ncols)`` arrays."""
        xs = self.xll + (np.arange(self.ncols) + 0.5) * self.cell_size
        ys = self.yll + (self.nrows - 1 - np.arange(self.nrows) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def cell_lower_left(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        x0 = self.xll + col * self.cell_size
        y0 = self.yll + (self.nrows - 1 - row) * self.cell_size
        return x0, y0

    def matches(self, other: "GridSpec") -> bool:
        return self == other


@dataclass(frozen=True)
class CovariateRaster:
    """Non-negative covariate values on a grid; NaN marks nodata cells."""

    grid: GridSpec
    values: np.ndarray
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise RasterFormatError(
                f"values shape {values.shape} does not match grid {self.grid.shape}")
        valid = ~np.isnan(values)
        if np.isinf(values[valid]).any():
            raise RasterFormatError("covariate values must be finite")
        if (values[valid] < 0).any():
            r, c = np.argwhere(valid & (np.nan_to_num(values, nan=0.0) < 0))[0]
            raise RasterFormatError(f"negative covariate value at row {r}, column {c}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nodata(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def ncols(self) -> int:
        return self.grid.ncols

    @property
    def nrows(self) -> int:
        return self.grid.nrows

    @property
    def cell_size(self) -> float:
        return self.grid.cell_size


@dataclass(frozen=True)
class RegionMask:
    """The target region as a set of included cells of a grid."""

    grid: GridSpec
    included: np.ndarray

    def __post_init__(self):
        inc = np.array(self.included, dtype=bool)
        if inc.shape != self.grid.shape:
            raise GeometryError("mask shape does not match its grid")
        if not inc.any():
            raise GeometryError("region mask includes no cells")
        inc.setflags(write=False)
        object.__setattr__(self, "included", inc)

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    @property
    def area(self) -> float:
        """S_R: included cell count times cell area."""
        return self.n_included * self.grid.cell_area

    def contains(self, x, y) -> np.ndarray:
        row, col = self.grid.cell_index(x, y)
        ok = row >= 0
        out = np.zeros(np.shape(row), dtype=bool)
        out[ok] = self.included[row[ok], col[ok]]
        return out


@dataclass(frozen=True)
class TileGrid:
    """Non-overlapping ``l x l`` tiles of a region on a lattice anchored at the
    mask origin.

    ``lattice`` maps lattice position ``(j, i)`` (row from the top, column from
    the left) to a tile index, or ``-1`` for a dropped tile. For very large
    regions only ``count`` is known and ``centers``/``lattice`` are ``None``.
    """

    tile_size: float
    region_area: float
    count: int
    xll: float
    yll: float
    ntx: int
    nty: int
    centers: Optional[np.ndarray] = field(default=None, repr=False)
    lattice: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def materialized(self) -> bool:
        return self.lattice is not None

    def lattice_position(self, x, y):
        """Return ``(j, i)`` lattice rows/columns; ``-1`` outside the lattice."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i = np.floor((x - self.xll) / self.tile_size).astype(np.int64)
        j_up = np.floor((y - self.yll) / self.tile_size).astype(np.int64)
        inside = (i >= 0) & (i < self.ntx) & (j_up >= 0) & (j_up < self.nty)
        j = np.where(inside, self.nty - 1 - j_up, -1)
        i = np.where(inside, i, -1)
        return j, i


# ---------------------------------------------------------------------------
# raster IO


def _parse_header(lines, path):
    header = {}
    for lineno in range(len(_HEADER_KEYS)):
        if lineno >= len(lines):
            raise RasterFormatError(f"{path}: malformed header (file ends at line {lineno + 1})")
        parts = lines[lineno].split()
        if len(parts) != 2:
            raise RasterFormatError(f"{path}: malformed header at line {lineno + 1}: {lines[lineno]!r}")
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            raise RasterFormatError(f"{path}: malformed header, unknown key {parts[0]!r} at line {lineno + 1}")
        if key in header:
            raise RasterFormatError(f"{path}: malformed header, duplicate key {parts[0]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise RasterFormatError(f"{path}: malformed header value for {parts[0]!r}: {parts[1]!r}") from None
    missing = set(_HEADER_KEYS) - set(header)
    if missing:
        raise RasterFormatError(f"{path}: malformed header, missing {sorted(missing)}")
    for key in ("ncols", "nrows"):
        if header[key] != int(header[key]) or header[key] < 1:
            raise RasterFormatError(f"{path}: malformed header, {key} must be a positive integer")
    if not header["cellsize"] > 0:
        raise RasterFormatError(f"{path}: malformed header, cellsize must be positive")
    return header


def load_raster(path: PathLike) -> CovariateRaster:
    """Read an ESRI-ASCII-style grid.

    The header carries ``ncols nrows xllcorner yllcorner cellsize
    nodata_value`` (one key per line, any order), followed by ``nrows * ncols``
    whitespace-separated values, north row first.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = _parse_header(lines, path)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    tokens = " ".join(lines[len(_HEADER_KEYS):]).split()
    if len(tokens) != ncols * nrows:
        raise RasterFormatError(
            f"{path}: token count mismatch: expected {ncols * nrows} values "
            f"for {nrows}x{ncols} grid, found {len(tokens)}")
    nodata = header["nodata_value"]
    values = np.empty(ncols * nrows)
    for k, tok in enumerate(tokens):
        r, c = divmod(k, ncols)
        try:
            v = float(tok)
        except ValueError:
            raise RasterFormatError(f"{path}: non-numeric value {tok!r} at row {r}, column {c}") from None
        if v == nodata:
            v = math.nan
        elif not math.isfinite(v):
            raise RasterFormatError(f"{path}: non-finite value at row {r}, column {c}")
        elif v < 0:
            raise RasterFormatError(f"{path}: negative covariate value {tok} at row {r}, column {c}")
        values[k] = v
    grid = GridSpec(ncols, nrows, header["xllcorner"], header["yllcorner"], header["cellsize"])
    return CovariateRaster(grid, values.reshape(nrows, ncols), nodata)


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def write_raster(raster: CovariateRaster, path: PathLike) -> None:
    g = raster.grid
    out = [
        f"ncols {g.ncols}",
        f"nrows {g.nrows}",
        f"xllcorner {_fmt(g.xll)}",
        f"yllcorner {_fmt(g.yll)}",
        f"cellsize {_fmt(g.cell_size)}",
        f"nodata_value {_fmt(raster.nodata_value)}",
    ]
    nodata_tok = _fmt(raster.nodata_value)
    for row in raster.values:
        out.append(" ".join(nodata_tok if math.isnan(v) else _fmt(v) for v in row))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_polygon(path: PathLike) -> np.ndarray:
    """Read a region boundary document ``{"polygon": [[x, y], ...]}``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "polygon" not in doc:
        raise GeometryError(f"{path}: expected a JSON object with key 'polygon'")
    poly = np.asarray(doc["polygon"], dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise GeometryError(f"{path}: 'polygon' must be a list of [x, y] pairs")
    return poly


def write_polygon(polygon, path: PathLike) -> None:
    pts = [[float(x), float(y)] for x, y in np.asarray(polygon, dtype=float)]
    Path(path).write_text(json.dumps({"polygon": pts}) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# region masks


def polygon_area(polygon) -> float:
    p = np.asarray(polygon, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_polygon(px, py, polygon) -> np.ndarray:
    """Even-odd containment; points on an edge count as inside."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_int)
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = ((px >= min(x1, x2)) & (px <= max(x1, x2))
                  & (py >= min(y1, y2)) & (py <= max(y1, y2)))
        scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
        on_edge |= within & (np.abs(cross) <= 1e-12 * scale * scale)
    return inside | on_edge


def rasterize_region(polygon, grid: GridSpec, raster: Optional[CovariateRaster] = None) -> RegionMask:
    """Include every cell whose centre lies inside ``polygon``.

    When ``raster`` is given its nodata cells are excluded as well.
    """
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise GeometryError("polygon needs at least 3 vertices")
    if len(poly) > 3 and np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    if abs(polygon_area(poly)) == 0.0:
        raise GeometryError("degenerate polygon with zero area")
    xc, yc = grid.cell_centers()
    included = points_in_polygon(xc, yc, poly)
    if raster is not None:
        if raster.grid != grid:
            raise GeometryError("raster geometry does not match the grid")
        included &= ~raster.nodata
    return RegionMask(grid, included)


def full_mask(grid: GridSpec, raster: Optional[CovariateRaster] = None) -> RegionMask:
    included = np.ones(grid.shape, dtype=bool)
    if raster is not None:
        included &= ~raster.nodata
    return RegionMask(grid, included)


def coarsen_mask(mask: RegionMask, factor: int) -> RegionMask:
    """Block-aggregate a mask: a coarse cell is included if any fine cell is."""
    g = mask.grid
    _check_factor(g, factor)
    blocks = mask.included.reshape(g.nrows // factor, factor, g.ncols // factor, factor)
    coarse = GridSpec(g.ncols // factor, g.nrows // factor, g.xll, g.yll, g.cell_size * factor)
    return RegionMask(coarse, blocks.any(axis=(1, 3)))


# ---------------------------------------------------------------------------
# tiles


def _lattice_extent(extent: float, l: float) -> int:
    return max(1, math.ceil(extent / l - 1e-9))


def make_tile_grid(mask: RegionMask, l: float, cap: int = TILE_MATERIALIZE_CAP) -> TileGrid:
    """Partition ``mask`` into ``l x l`` tiles.

    A lattice tile is kept iff the cell holding its centre is included. When the
    nominal tile count ``S_R / l**2`` exceeds ``cap`` the tiles are not
    enumerated and ``count`` is ``ceil(S_R / l**2)``, the number of images
    needed to cover the area.
    """
    if not l > 0:
        raise GeometryError("tile size must be positive")
    g = mask.grid
    rows = np.flatnonzero(mask.included.any(axis=1))
    cols = np.flatnonzero(mask.included.any(axis=0))
    bbox = max((rows[-1] - rows[0] + 1), (cols[-1] - cols[0] + 1)) * g.cell_size
    if l > bbox + 1e-12:
        raise GeometryError(f"tile size {l} exceeds region extent {bbox}: empty tile set")
    area = mask.area
    ntx = _lattice_extent(g.width, l)
    nty = _lattice_extent(g.height, l)
    if area / (l * l) > cap:
        return TileGrid(l, area, int(math.ceil(area / (l * l) - 1e-9)), g.xll, g.yll, ntx, nty)
    xs = g.xll + (np.arange(ntx) + 0.5) * l
    ys = g.yll + (nty - 1 - np.arange(nty) + 0.5) * l
    xc, yc = np.meshgrid(xs, ys)
    keep = mask.contains(xc, yc)
    if not keep.any():
        raise GeometryError("empty tile set: no tile centre falls inside the region")
    lattice = np.full((nty, ntx), -1, dtype=np.int64)
    lattice[keep] = np.arange(int(keep.sum()))
    lattice.setflags(write=False)
    centers = np.column_stack([xc[keep], yc[keep]])
    centers.setflags(write=False)
    return TileGrid(l, area, int(keep.sum()), g.xll, g.yll, ntx, nty, centers, lattice)


def tile_overlap(tiles: TileGrid, grid: GridSpec):
    """Overlap lengths between lattice tiles and grid cells along each axis.

    Returns ``(ox, oy)`` with ``ox[i, c]`` the x-overlap of lattice column ``i``
    and cell column ``c`` and ``oy[j, r]`` likewise for rows (both counted from
    the top/left). The area of tile ``(j, i)`` inside cell ``(r, c)`` is
    ``oy[j, r] * ox[i, c]``.
    """
    l = tiles.tile_size
    t_lo = tiles.xll + np.arange(tiles.ntx) * l
    c_lo = grid.xll + np.arange(grid.ncols) * grid.cell_size
    ox = np.clip(np.minimum(t_lo[:, None] + l, c_lo[None, :] + grid.cell_size)
                 - np.maximum(t_lo[:, None], c_lo[None, :]), 0.0, None)
    t_lo_y = tiles.yll + (tiles.nty - 1 - np.arange(tiles.nty)) * l
    c_lo_y = grid.yll + (grid.nrows - 1 - np.arange(grid.nrows)) * grid.cell_size
    oy = np.clip(np.minimum(t_lo_y[:, None] + l, c_lo_y[None, :] + grid.cell_size)
                 - np.maximum(t_lo_y[:, None], c_lo_y[None, :]), 0.0, None)
    return ox, oy


# ---------------------------------------------------------------------------
# raster operations


def _check_factor(g: GridSpec, factor: int) -> None:
    if int(factor) != factor or factor < 1:
        raise GeometryError("downsampling factor must be a positive integer")
    if g.ncols % factor or g.nrows % factor:
        raise GeometryError(f"factor {factor} does not divide grid {g.nrows}x{g.ncols}")


def downsample(raster: CovariateRaster, factor: int) -> CovariateRaster:
    """Block-mean downsampling, ignoring nodata cells inside each block."""
    g = raster.grid
    _check_factor(g, factor)
    if factor == 1:
        return raster
    blocks = raster.values.reshape(g.nrows // factor, factor, g.ncols // factor, factor)
    valid = ~np.isnan(blocks)
    n_valid = valid.sum(axis=(1, 3))
    total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n_valid > 0, total / np.maximum(n_valid, 1), np.nan)
    coarse = GridSpec(g.ncols // factor, g.nrows // factor, g.xll, g.yll, g.cell_size * factor)
    return CovariateRaster(coarse, mean, raster.nodata_value)


def covariate_at(raster: CovariateRaster, x, y=None):
    """Piecewise-constant covariate lookup ``h(x)``.

    Accepts a single point ``(x, y)`` or coordinate arrays. Raises for points
    outside the raster or in nodata cells.
    """
    if y is None:
        x, y = x
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    row, col = raster.grid.cell_index(x, y)
    row, col = np.atleast_1d(row), np.atleast_1d(col)
    if (row < 0).any():
        raise GeometryError("point outside raster bounds")
    vals = raster.values[row, col]
    if np.isnan(vals).any():
        raise GeometryError("point falls in a nodata cell")
    return float(vals[0]) if scalar else vals


def included_values(raster: CovariateRaster, mask: RegionMask) -> np.ndarray:
    if raster.grid != mask.grid:
        raise GeometryError("raster and mask geometries differ")
    return raster.values[mask.included]
