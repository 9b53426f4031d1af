"""Count estimators, budget accounting and the error/variance bounds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .proposal import Proposal, ProposalError, kl_masses

METHODS = ("uniform", "identity", "isotonic", "isotonic_star")


class EstimateError(ValueError):
    pass


@dataclass(frozen=True)
class CountEstimate:
    estimate: float
    n: int
    tile_size: float
    method: str
    stderr: Optional[float]
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise EstimateError("an estimate needs at least one sample")
        if self.estimate < 0:
            raise EstimateError("count estimates are non-negative")

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "n": self.n, "l": self.tile_size,
                "method": self.method, "stderr": self.stderr, "seed": self.seed}


def _terms(q, counts, l):
    q = np.asarray(q, dtype=float)
    f = np.asarray(counts, dtype=float)
    if q.shape != f.shape:
        raise EstimateError(f"{len(f)} counts for {len(q)} samples: length mismatch")
    if len(q) == 0:
        raise EstimateError("no samples")
    if (f < 0).any():
        raise EstimateError("counts must be non-negative")
    if not (q > 0).all() or not np.isfinite(q).all():
        raise EstimateError("sample densities must be positive and finite")
    if not l > 0:
        raise EstimateError("tile size must be positive")
    return f / q / (l * l)


def _summarize(terms: np.ndarray, l: float, method: str, seed) -> CountEstimate:
    n = len(terms)
    est = math.fsum(terms) / n
    se = float(np.std(terms, ddof=1) / math.sqrt(n)) if n > 1 else None
    return CountEstimate(est, n, l, method, se, seed)


def is_estimate(batch, counts, l: float, method: str = "identity") -> CountEstimate:
    """``(1/l^2) mean(f(x_i) / q(x_i))`` with ``stderr`` the standard error of
    that mean."""
    return _summarize(_terms(batch.q, counts, l), l, method, batch.seed)


def uniform_estimate(batch, counts, region_area: float, l: float) -> CountEstimate:
    """``(S_R / l^2) mean(f(x_i))`` for uniform draws."""
    q = np.full(len(np.asarray(counts)), 1.0 / region_area)
    return _summarize(_terms(q, counts, l), l, "uniform", batch.seed)


def percent_error(estimate: float, truth: float) -> float:
    if not truth > 0:
        raise EstimateError("percent error is undefined for a non-positive true count")
    return abs(estimate - truth) / truth * 100.0


# ---------------------------------------------------------------------------
# budgets


@dataclass(frozen=True)
class Budget:
    """Total label budget; ``deduct_training=False`` is the Isotonic* setting."""

    n: int
    train_fraction: float = 0.2
    deduct_training: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise EstimateError("budget must be at least 1")
        if not 0 <= self.train_fraction <= 1:
            raise EstimateError("train_fraction must lie in [0, 1]")


def split_budget(b: Budget) -> Tuple[int, int]:
    """``(train_n, sampling_n)`` with ``train_n`` rounded half up."""
    train_n = int(math.floor(b.train_fraction * b.n + 0.5))
    sampling_n = b.n - train_n if b.deduct_training else b.n
    if sampling_n < 1:
        raise EstimateError(f"budget {b.n} leaves no samples after {train_n} training labels")
    return train_n, sampling_n


def budget_for(method: str, n: int, train_fraction: float = 0.2) -> Budget:
    if method not in METHODS:
        raise EstimateError(f"unknown method {method!r}")
    if method in ("uniform", "identity"):
        return Budget(n, 0.0, True)
    return Budget(n, train_fraction, method == "isotonic")


# ---------------------------------------------------------------------------
# bounds


def prop1_bound(C: float, L: float, t: float, tail_prob: float) -> float:
    """``C (exp(-t/4) + 2 sqrt(tail_prob))``, the expected-absolute-error bound
    at ``n = exp(L + t)`` samples."""
    if t < 0:
        raise EstimateError("t must be non-negative")
    if L < 0:
        raise EstimateError("L must be non-negative")
    if not 0 <= tail_prob <= 1:
        raise EstimateError("tail_prob must lie in [0, 1]")
    return C * (math.exp(-t / 4) + 2 * math.sqrt(tail_prob))


def prop1_sample_size(L: float, t: float) -> int:
    return math.ceil(math.exp(L + t))


def markov_bound(k: float) -> float:
    """Upper bound ``1/k`` on ``P[C_hat >= k C]``."""
    if not k > 0:
        raise EstimateError("k must be positive")
    return 1.0 / k


def variance_lower_bound(C: float, L: float) -> float:
    """``C^2 (exp(L) - 1)``, below the single-draw estimator variance."""
    if L < 0:
        raise EstimateError("L must be non-negative")
    if C < 0:
        raise EstimateError("C must be non-negative")
    return C * C * math.expm1(L)


def _masses(p) -> np.ndarray:
    return p.masses.ravel() if isinstance(p, Proposal) else np.asarray(p, dtype=float).ravel()


def exact_moments(p_star, q, C: float) -> Tuple[float, float]:
    """Mean and variance of ``C q*(x)/q(x)`` for ``x ~ q``, by enumeration.

    Arguments are proposals on a common grid or plain cell-mass vectors.
    """
    if isinstance(p_star, Proposal) and isinstance(q, Proposal) and p_star.grid != q.grid:
        raise ProposalError("proposals live on different grids")
    pm, qm = _masses(p_star), _masses(q)
    if pm.shape != qm.shape:
        raise ProposalError("mass vectors differ in length")
    support = pm > 0
    if (qm[support] <= 0).any():
        raise ProposalError("support violation: q* > 0 where q = 0")
    r = pm[support] / qm[support]
    mean = C * math.fsum(pm[support])
    second = C * C * math.fsum(pm[support] * r)
    return mean, max(0.0, second - mean * mean)


def tail_probability(p_star, q, threshold: float) -> float:
    """``P_{x ~ q*}[log(q*(x)/q(x)) > threshold]`` by enumeration."""
    pm, qm = _masses(p_star), _masses(q)
    support = pm > 0
    if (qm[support] <= 0).any():
        raise ProposalError("support violation: q* > 0 where q = 0")
    logr = np.log(pm[support] / qm[support])
    return min(1.0, math.fsum(pm[support][logr > threshold]))


@dataclass(frozen=True)
class BoundReport:
    kl: float
    t: float
    n: int
    prop1_bound: float
    prop1_applicable: bool
    markov_k: float
    markov_bound: float
    variance_lower_bound: float
    tail_prob: float

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(p_star, q, C: float, n: int, k: float = 2.0) -> BoundReport:
    """Diagnostics for a proposal against the known optimal one.

    ``t = log(n) - L``; when that is negative the bound is evaluated at
    ``t = 0`` and flagged as not applicable to this ``n``.
    """
    L = kl_masses(_masses(p_star), _masses(q))
    t_raw = math.log(n) - L
    t = max(0.0, t_raw)
    tail = tail_probability(p_star, q, L + t / 2)
    return BoundReport(L, t, n, prop1_bound(C, L, t, tail), t_raw >= 0, k, markov_bound(k),
                       variance_lower_bound(C, L), tail)


def exact_is_moments(proposal: Proposal, first: np.ndarray, second: np.ndarray, l: float) -> Tuple[float, float]:
    """Mean and variance of a single-draw estimate ``f(x)/(l^2 q(x))``.

    ``first``/``second`` hold, per proposal cell, the integrals of ``f`` and
    ``f^2`` over the cell (see ``synthworld.count_integrals``). Cells with zero
    density are skipped, so mass there is lost to the estimator.
    """
    d = proposal.density
    pos = d > 0
    mean = math.fsum((first[pos] / (l * l)).ravel())
    ex2 = math.fsum((second[pos] / d[pos] / l ** 4).ravel())
    return mean, max(0.0, ex2 - mean * mean)
