"""Proposal densities over a region and their isotonic fine-tuning.

A :class:`Proposal` is piecewise constant on raster cells and uniform inside
each cell. Every constructor mixes the task density with the uniform density
on the region at weight ``epsilon`` so the proposal keeps full support.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .geogrid import CovariateRaster, GeometryError, GridSpec, RegionMask, covariate_at

DEFAULT_EPSILON = 1e-3
TRAINING_CAP = 5000
REJECTION_FACTOR = 100


class ProposalError(ValueError):
    """A proposal could not be built or compared."""


class InvariantError(RuntimeError):
    """A constructed object violates a numerical invariant."""


@dataclass(frozen=True)
class Proposal:
    """Per-cell probability density (per km^2) over a region mask."""

    mask: RegionMask
    density: np.ndarray
    epsilon: float = 0.0
    label: str = ""

    def __post_init__(self):
        d = np.array(self.density, dtype=float)
        if d.shape != self.mask.grid.shape:
            raise ProposalError("density shape does not match the mask grid")
        if not np.isfinite(d).all() or (d < 0).any():
            raise ProposalError("density must be finite and non-negative")
        if (d[~self.mask.included] != 0).any():
            raise ProposalError("density must vanish outside the region")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @property
    def grid(self) -> GridSpec:
        return self.mask.grid

    @property
    def masses(self) -> np.ndarray:
        """Probability of each cell, ``density * cell_area``."""
        return self.density * self.grid.cell_area

    def total_mass(self) -> float:
        return float(math.fsum(self.masses.ravel()))

    def density_at(self, x, y) -> np.ndarray:
        row, col = self.grid.cell_index(x, y)
        out = np.zeros(np.shape(row))
        ok = row >= 0
        out[ok] = self.density[row[ok], col[ok]]
        return out


def check_proposal(p: Proposal, tol: float = 1e-9) -> None:
    """Raise :class:`InvariantError` unless ``p`` integrates to one with
    positive density wherever ``epsilon > 0`` demands it."""
    total = p.total_mass()
    if abs(total - 1.0) > tol:
        raise InvariantError(f"proposal integrates to {total!r}, not 1")
    if p.epsilon > 0 and (p.density[p.mask.included] <= 0).any():
        raise InvariantError("proposal lacks full support on the region")


def _mixture(mask: RegionMask, weights: np.ndarray, epsilon: float, label: str) -> Proposal:
    if not 0 <= epsilon < 1:
        raise ProposalError("epsilon must lie in [0, 1)")
    g = mask.grid
    w = np.asarray(weights, dtype=float)
    if not np.isfinite(w).all():
        raise ProposalError("transform produced a non-finite value")
    if (w < 0).any():
        raise ProposalError("transform produced a negative value")
    area = mask.area
    z = math.fsum(w) * g.cell_area
    density = np.zeros(g.shape)
    if z > 0:
        density[mask.included] = (1 - epsilon) * w / z + epsilon / area
    elif epsilon > 0:
        # nothing to tune towards: the uniform floor is the whole proposal
        density[mask.included] = 1.0 / area
    else:
        raise ProposalError("zero total mass over the region with epsilon = 0")
    # renormalize away the rounding of the two-term sum
    density /= math.fsum(density.ravel()) * g.cell_area
    return Proposal(mask, density, epsilon, label)


def _covariate_values(raster: CovariateRaster, mask: RegionMask) -> np.ndarray:
    if raster.grid != mask.grid:
        raise GeometryError("raster and mask geometries differ")
    # nodata counts as zero covariate mass
    return np.nan_to_num(raster.values[mask.included], nan=0.0)


def uniform_proposal(mask: RegionMask) -> Proposal:
    density = np.where(mask.included, 1.0 / mask.area, 0.0)
    return Proposal(mask, density, 1.0, "uniform")


def identity_proposal(raster: CovariateRaster, mask: RegionMask,
                      epsilon: float = DEFAULT_EPSILON) -> Proposal:
    """Base covariate distribution, ``q ~ (1 - eps) h / Z + eps / S_R``."""
    return _mixture(mask, _covariate_values(raster, mask), epsilon, "identity")


# ---------------------------------------------------------------------------
# isotonic regression


@dataclass(frozen=True)
class LabeledSample:
    x: float
    y: float
    h: float
    f: int
    w: float = 1.0

    def __post_init__(self):
        if self.f < 0:
            raise ValueError("count must be non-negative")
        if not self.w > 0:
            raise ValueError("weight must be positive")


@dataclass(frozen=True)
class IsotonicModel:
    """Non-decreasing step map from covariate value to predicted count."""

    breakpoints: np.ndarray
    levels: np.ndarray
    tile_size: Optional[float] = None

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        v = np.array(self.levels, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or len(b) == 0:
            raise ValueError("breakpoints and levels must be equal-length 1-d arrays")
        if (np.diff(b) <= 0).any():
            raise ValueError("breakpoints must be strictly increasing")
        if (np.diff(v) < 0).any():
            raise ValueError("levels must be non-decreasing")
        if (v < 0).any():
            raise ValueError("levels must be non-negative")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "levels", v)

    def __call__(self, h):
        return predict(self, h)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "levels": self.levels.tolist(),
                "tile_size": self.tile_size}

    @classmethod
    def from_dict(cls, doc: dict) -> "IsotonicModel":
        return cls(doc["breakpoints"], doc["levels"], doc.get("tile_size"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "IsotonicModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of ``y`` (in the given order)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    # stack of pooled blocks: (weighted mean, total weight, length)
    means: List[float] = []
    weights: List[float] = []
    sizes: List[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        weights.append(float(wi))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), weights.pop(), sizes.pop()
            m1, w1 = means[-1], weights[-1]
            wt = w1 + w2
            means[-1] = (m1 * w1 + m2 * w2) / wt
            weights[-1] = wt
            sizes[-1] += s2
    return np.repeat(means, sizes)


def fit_isotonic_arrays(h, f, w=None, tile_size: Optional[float] = None) -> IsotonicModel:
    h = np.asarray(h, dtype=float)
    f = np.asarray(f, dtype=float)
    w = np.ones_like(h) if w is None else np.asarray(w, dtype=float)
    if len(h) < 2:
        raise ValueError("isotonic fit needs at least two samples")
    if not (len(h) == len(f) == len(w)):
        raise ValueError("h, f and w must have equal length")
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    keys, inverse = np.unique(h, return_inverse=True)
    if len(keys) < 2:
        raise ValueError("all covariate values are identical")
    wsum = np.bincount(inverse, weights=w)
    ysum = np.bincount(inverse, weights=w * f)
    fitted = pava(ysum / wsum, wsum)
    # guard against -0.0 and round-off below zero on all-zero blocks
    return IsotonicModel(keys, np.maximum(fitted, 0.0), tile_size)


def fit_isotonic(samples: Sequence[LabeledSample], tile_size: Optional[float] = None) -> IsotonicModel:
    """Fit ``g`` minimizing ``sum w (g(h) - f)^2`` over non-decreasing ``g``."""
    if len(samples) < 2:
        raise ValueError("isotonic fit needs at least two samples")
    h = [s.h for s in samples]
    f = [s.f for s in samples]
    w = [s.w for s in samples]
    return fit_isotonic_arrays(h, f, w, tile_size)


def predict(model: IsotonicModel, h, interpolation: str = "left"):
    """Evaluate the fitted map, clamped to the end levels outside the data.

    ``"left"`` holds each level until the next breakpoint; ``"linear"``
    interpolates between neighbouring breakpoints. Both are non-decreasing.
    """
    h = np.asarray(h, dtype=float)
    if interpolation == "linear":
        out = np.interp(h, model.breakpoints, model.levels)
    elif interpolation == "left":
        idx = np.searchsorted(model.breakpoints, h, side="right") - 1
        out = model.levels[np.clip(idx, 0, len(model.levels) - 1)]
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return float(out) if np.ndim(out) == 0 else out


def write_samples(samples: Sequence[LabeledSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "h", "f", "w"])
        for s in samples:
            writer.writerow([repr(float(s.x)), repr(float(s.y)), repr(float(s.h)), int(s.f), repr(float(s.w))])


def read_samples(path) -> List[LabeledSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["x", "y", "h", "f", "w"]:
            raise ValueError(f"{path}: expected header x,y,h,f,w")
        return [LabeledSample(float(r["x"]), float(r["y"]), float(r["h"]), int(r["f"]), float(r["w"]))
                for r in reader]


# ---------------------------------------------------------------------------
# tuned proposals

Transform = Union[IsotonicModel, str, Callable[[np.ndarray], np.ndarray]]

_NAMED_TRANSFORMS = {
    "identity": lambda h: h,
    "exp": np.exp,
    "log1p": np.log1p,
}


def _resolve_transform(transform: Transform, interpolation: str):
    if isinstance(transform, IsotonicModel):
        return lambda h: np.asarray(predict(transform, h, interpolation), dtype=float), "isotonic"
    if isinstance(transform, str):
        try:
            return _NAMED_TRANSFORMS[transform], transform
        except KeyError:
            raise ProposalError(f"unknown transform {transform!r}") from None
    return transform, getattr(transform, "__name__", "custom")


def tuned_proposal(raster: CovariateRaster, mask: RegionMask, transform: Transform,
                   epsilon: float = DEFAULT_EPSILON, interpolation: str = "linear") -> Proposal:
    """Proposal proportional to ``g(h(x))`` over the region.

    ``transform`` is a fitted :class:`IsotonicModel`, one of the monotone
    baselines ``"exp"``/``"log1p"``, or any vectorized callable.

    Isotonic maps are evaluated with linear interpolation by default. A step
    map gives every covariate value between the last zero-level breakpoint and
    the first positive one only the ``epsilon`` floor, and occupied cells in
    that gap then carry huge importance weights.
    """
    fn, name = _resolve_transform(transform, interpolation)
    h = _covariate_values(raster, mask)
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.asarray(fn(h), dtype=float)
    return _mixture(mask, g, epsilon, name)


# ---------------------------------------------------------------------------
# divergence


def kl_divergence(p: Proposal, q: Proposal) -> float:
    """``KL(p || q)`` summed over cells; ``0 log 0 = 0``."""
    if p.grid != q.grid:
        raise ProposalError("proposals live on different grids")
    pm, qm = p.masses.ravel(), q.masses.ravel()
    return kl_masses(pm, qm)


def kl_masses(pm, qm) -> float:
    pm = np.asarray(pm, dtype=float)
    qm = np.asarray(qm, dtype=float)
    support = pm > 0
    if (qm[support] <= 0).any():
        raise ProposalError("support violation: p > 0 where q = 0")
    terms = pm[support] * np.log(pm[support] / qm[support])
    return max(0.0, math.fsum(terms))


# ---------------------------------------------------------------------------
# training data


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_training_set(count_fn: Callable, raster: CovariateRaster, base: Proposal, uniform: Proposal,
                       n_train: int, positive_fraction: float = 0.5, cap: int = TRAINING_CAP,
                       seed: int = 0, n_tiles: Optional[int] = None) -> List[LabeledSample]:
    """Draw labelled ``(h, f)`` pairs for fitting the isotonic map.

    Positives are rejection-sampled from ``base`` keeping non-zero counts; if
    ``REJECTION_FACTOR`` times the requested number of draws does not yield
    enough, the remainder are plain ``base`` draws. Negatives are uniform.
    ``count_fn(x, y)`` returns per-point counts as an integer array.
    """
    from .sampler import build_alias_table, derive_seed, draw

    if not 0 <= positive_fraction <= 1:
        raise ValueError("positive_fraction must lie in [0, 1]")
    if n_train < 2:
        raise ValueError("n_train must be at least 2")
    n = min(n_train, cap)
    if n_tiles is not None and n > n_tiles:
        raise ValueError(f"n_train={n} exceeds the {n_tiles} available tiles")
    n_pos = _half_up(n * positive_fraction)
    n_neg = n - n_pos

    xs: List[np.ndarray] = []
    ys: List[np.ndarray] = []
    if n_pos:
        table = build_alias_table(base)
        budget = REJECTION_FACTOR * n_pos
        batch = draw(base, table, budget, derive_seed(seed, 1), source="positive")
        f = np.asarray(count_fn(batch.x, batch.y))
        hits = np.flatnonzero(f > 0)[:n_pos]
        xs.append(batch.x[hits])
        ys.append(batch.y[hits])
        short = n_pos - len(hits)
        if short:
            fallback = draw(base, table, short, derive_seed(seed, 2), source="positive-fallback")
            xs.append(fallback.x)
            ys.append(fallback.y)
    if n_neg:
        neg = draw(uniform, build_alias_table(uniform), n_neg, derive_seed(seed, 3), source="negative")
        xs.append(neg.x)
        ys.append(neg.y)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    h = covariate_at(raster, x, y)
    f = np.asarray(count_fn(x, y))
    return [LabeledSample(float(a), float(b), float(c), int(d)) for a, b, c, d in zip(x, y, h, f)]
