"""Independent reference computations used by the tests.

Nothing here calls into the code under test; each oracle takes a different
route to the same quantity.
"""
import itertools
import math

import numpy as np


def best_monotone_pooling(y, w):
    """Exact weighted isotonic fit by trying every contiguous partition.

    The least-squares isotonic solution is constant on contiguous blocks at the
    block's weighted mean, so the optimum is among the ``2**(n-1)`` pooling
    partitions whose block means are non-decreasing.
    """
    y = [float(v) for v in y]
    w = [float(v) for v in w]
    n = len(y)
    best_obj, best_fit = math.inf, None
    for cuts in itertools.product([False, True], repeat=n - 1):
        blocks, start = [], 0
        for k, cut in enumerate(cuts, start=1):
            if cut:
                blocks.append((start, k))
                start = k
        blocks.append((start, n))
        means = []
        for a, b in blocks:
            ws = sum(w[a:b])
            means.append(sum(wi * yi for wi, yi in zip(w[a:b], y[a:b])) / ws)
        if any(m1 > m2 for m1, m2 in zip(means, means[1:])):
            continue
        fit = []
        for (a, b), m in zip(blocks, means):
            fit.extend([m] * (b - a))
        obj = sum(wi * (fi - yi) ** 2 for wi, fi, yi in zip(w, fit, y))
        if obj < best_obj:
            best_obj, best_fit = obj, fit
    return best_obj, best_fit


def winding_inside(px, py, poly):
    """Scalar point-in-polygon by winding number; boundary points count as inside."""
    n = len(poly)
    wn = 0
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        cross = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
        if (min(x1, x2) <= px <= max(x1, x2) and min(y1, y2) <= py <= max(y1, y2)
                and abs(cross) <= 1e-12):
            return True
        if y1 <= py:
            if y2 > py and cross > 0:
                wn += 1
        elif y2 <= py and cross < 0:
            wn -= 1
    return wn != 0


def random_star_polygon(rng, max_vertices=12, center=(5.0, 5.0), rmax=4.5):
    """A simple polygon: vertices at sorted random angles around a centre."""
    k = int(rng.integers(3, max_vertices + 1))
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    rad = rng.uniform(0.3 * rmax, rmax, k)
    return np.column_stack([center[0] + rad * np.cos(ang), center[1] + rad * np.sin(ang)])


def enumerate_estimator(masses, f_per_cell, l=1.0):
    """Exact mean and variance of ``f/(l^2 q)`` when cell ``i`` is drawn with
    probability ``masses[i]`` and every cell has unit area."""
    mean = 0.0
    second = 0.0
    for p, f in zip(masses, f_per_cell):
        if p == 0:
            continue
        v = f / p / (l * l)
        mean += p * v
        second += p * v * v
    return mean, second - mean * mean


def kl_reference(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)
