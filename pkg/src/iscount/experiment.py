"""End-to-end counting runs: build a proposal, optionally fine-tune it on a
training split, sample and estimate."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import estimator, geogrid
from .estimator import Budget, CountEstimate, budget_for, split_budget
from .geogrid import CovariateRaster, GeometryError, RegionMask
from .proposal import (DEFAULT_EPSILON, TRAINING_CAP, IsotonicModel, Proposal, build_training_set,
                       check_proposal, fit_isotonic, identity_proposal, tuned_proposal,
                       uniform_proposal)
from .sampler import SampleBatch, build_alias_table, derive_seed, draw
from .synthworld import SyntheticWorld, count_at, optimal_proposal

TRANSFORMS = ("isotonic", "exp", "log1p")


@dataclass(frozen=True)
class RunResult:
    estimate: CountEstimate
    proposal: Proposal
    budget: Budget
    train_n: int
    sampling_n: int
    model: Optional[IsotonicModel] = None
    batch: Optional[SampleBatch] = None


def covariate_mask(world: SyntheticWorld, raster: CovariateRaster) -> RegionMask:
    """Region mask for ``raster``: the world's own mask on its grid, or the
    block-aggregated world mask for a coarsened covariate."""
    wg, g = world.mask.grid, raster.grid
    if g == wg:
        return world.mask
    factor = g.cell_size / wg.cell_size
    k = int(round(factor))
    if (abs(factor - k) > 1e-9 or g.xll != wg.xll or g.yll != wg.yll
            or g.ncols * k != wg.ncols or g.nrows * k != wg.nrows):
        raise GeometryError("covariate grid is not an aligned coarsening of the world grid")
    coarse = geogrid.coarsen_mask(world.mask, k)
    return RegionMask(g, coarse.included & ~raster.nodata)


def build_proposal(world: SyntheticWorld, method: str, *, raster: Optional[CovariateRaster] = None,
                   mask: Optional[RegionMask] = None, epsilon: float = DEFAULT_EPSILON,
                   transform: str = "isotonic", train_n: int = 0, seed: int = 0,
                   positive_fraction: float = 0.5, cap: int = TRAINING_CAP):
    """Return ``(proposal, model)`` for ``method``; ``model`` only when an
    isotonic map was fitted."""
    raster = world.raster if raster is None else raster
    mask = covariate_mask(world, raster) if mask is None else mask
    if method == "uniform":
        return uniform_proposal(mask), None
    if method == "identity":
        return identity_proposal(raster, mask, epsilon), None
    if transform != "isotonic":
        return tuned_proposal(raster, mask, transform, epsilon), None
    base = identity_proposal(raster, mask, epsilon)
    uniform = uniform_proposal(mask)
    samples = build_training_set(lambda x, y: count_at(world, x, y), raster, base, uniform, train_n,
                                 positive_fraction, cap, derive_seed(seed, 10), world.tiles.count)
    model = fit_isotonic(samples, world.tile_size)
    return tuned_proposal(raster, mask, model, epsilon), model


def run_method(world: SyntheticWorld, method: str, n: int, seed: int, *, train_fraction: float = 0.2,
               epsilon: float = DEFAULT_EPSILON, transform: str = "isotonic",
               raster: Optional[CovariateRaster] = None, mask: Optional[RegionMask] = None,
               positive_fraction: float = 0.5, cap: int = TRAINING_CAP) -> RunResult:
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}")
    budget = budget_for(method, n, train_fraction if transform == "isotonic" else 0.0)
    train_n, sampling_n = split_budget(budget)
    proposal, model = build_proposal(world, method, raster=raster, mask=mask, epsilon=epsilon,
                                     transform=transform,
                                     train_n=train_n, seed=seed, positive_fraction=positive_fraction,
                                     cap=cap)
    check_proposal(proposal)
    batch = draw(proposal, build_alias_table(proposal), sampling_n, derive_seed(seed, 20), method)
    counts = count_at(world, batch.x, batch.y)
    l = world.tile_size
    if method == "uniform":
        est = estimator.uniform_estimate(batch, counts, proposal.mask.area, l)
    else:
        est = estimator.is_estimate(batch, counts, l, method)
    return RunResult(est, proposal, budget, train_n, sampling_n, model, batch)


def bounds_for(world: SyntheticWorld, proposal: Proposal, n: int, k: float = 2.0) -> Optional[dict]:
    """Bound diagnostics against the world's optimal proposal, or ``None``
    when they do not exist (no objects, or ``q`` misses part of ``q*``)."""
    if world.truth == 0:
        return None
    q_star = optimal_proposal(world, 0.0, proposal.mask)
    try:
        return estimator.bound_report(q_star, proposal, world.truth, n, k).to_dict()
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# sweeps


def _one(args):
    world, method, n, seed, rep, kwargs = args
    res = run_method(world, method, n, derive_seed(seed, rep), **kwargs)
    return {
        "method": method,
        "budget": n,
        "repetition": rep,
        "estimate": res.estimate.estimate,
        "sampling_n": res.sampling_n,
        "train_n": res.train_n,
        "percent_error": estimator.percent_error(res.estimate.estimate, world.truth),
    }


def sweep(world: SyntheticWorld, methods: Sequence[str], budgets: Sequence[int], repetitions: int,
          seed: int, workers: int = 1, **kwargs) -> List[dict]:
    """Run every ``(method, budget, repetition)``; rows come back in that order
    whatever the number of workers."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if world.truth <= 0:
        raise ValueError("percent error needs a world with C > 0")
    tasks = [(world, m, int(n), seed, r, kwargs) for m in methods for n in budgets for r in range(repetitions)]
    if workers <= 1:
        return [_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def summarize(rows: Iterable[dict]) -> List[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["budget"]), []).append(r["percent_error"])
    out = []
    for (method, budget), errs in groups.items():
        e = np.asarray(errs)
        single = len(e) == 1
        std = 0.0 if single else float(np.std(e, ddof=1))
        out.append({
            "method": method,
            "budget": budget,
            "repetitions": len(e),
            "mean_percent_error": float(math.fsum(e) / len(e)),
            "std_percent_error": std,
            "stderr_percent_error": std / math.sqrt(len(e)),
            "single_run": single,
        })
    return out
