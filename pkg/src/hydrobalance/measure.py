"""Empirical measures of rescaled queue lengths and distances between tails.

A *tail function* is any object with ``value(x)`` (the open tail
``P(X > x)``, right-continuous), ``left(x)`` (its left limit ``P(X >= x)``
for step functions) and ``breakpoints()``.  Empirical measures, grid tails
from the PDE solver and closed-form tails all implement it, so KS/W1 work
on any pair.
"""

import math
from dataclasses import dataclass

import numpy as np


class EmpiricalMeasure:
    """Sorted multiset of nonnegative reals with tail/moment queries."""

    def __init__(self, samples, assume_sorted=False):
        s = np.array(samples, dtype=float).ravel()
        if not assume_sorted:
            s.sort()
        if s.size and s[0] < 0:
            raise ValueError("empirical measure samples must be nonnegative")
        s.setflags(write=False)
        self.samples = s

    def __len__(self):
        return self.samples.size

    def __repr__(self):
        return f"EmpiricalMeasure(size={self.samples.size})"

    def tail(self, x):
        """Fraction of samples strictly above x."""
        n = self.samples.size
        return (n - np.searchsorted(self.samples, x, side="right")) / n

    def tail_closed(self, x):
        """Fraction of samples at or above x."""
        n = self.samples.size
        return (n - np.searchsorted(self.samples, x, side="left")) / n

    # tail-function protocol
    value = tail
    left = tail_closed

    def breakpoints(self):
        return np.unique(self.samples)

    def stats(self):
        return stats(self)


@dataclass(frozen=True)
class MeasureStats:
    mean: float
    second_moment: float
    variance: float
    size: int


def stats(m):
    """Raw (not Bessel-corrected) empirical moments."""
    s = m.samples if isinstance(m, EmpiricalMeasure) else np.asarray(m, dtype=float)
    if s.size == 0:
        raise ValueError("stats of an empty measure")
    mean = float(s.mean())
    second = float(np.mean(s * s))
    var = float(np.mean((s - mean) ** 2))
    return MeasureStats(mean=mean, second_moment=second, variance=var, size=int(s.size))


class GridTail:
    """Tail known at grid nodes, linearly interpolated; 1 below 0, 0 past the last node."""

    def __init__(self, x, v):
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)

    def value(self, x):
        return np.interp(x, self.x, self.v, left=1.0, right=0.0)

    left = value

    def breakpoints(self):
        return self.x


class FunctionTail:
    """Continuous closed-form tail evaluated on demand.

    ``grid`` adds evaluation points (for W1 quadrature accuracy); the
    function is taken as 0 beyond ``x_max``.
    """

    def __init__(self, fn, x_max, grid=None):
        self.fn = fn
        self.x_max = float(x_max)
        self.grid = np.linspace(0.0, x_max, 4001) if grid is None else np.asarray(grid, dtype=float)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0, 1.0, 0.0)
        inside = (x >= 0) & (x <= self.x_max)
        if np.any(inside):
            out = out.astype(float)
            out[inside] = self.fn(x[inside])
        return out

    left = value

    def breakpoints(self):
        return self.grid


class DiracTail:
    """Open tail of a point mass at c."""

    def __init__(self, c=0.0):
        self.c = float(c)

    def value(self, x):
        return np.where(np.asarray(x) < self.c, 1.0, 0.0)

    def left(self, x):
        return np.where(np.asarray(x) <= self.c, 1.0, 0.0)

    def breakpoints(self):
        return np.array([self.c])


def _merged_points(f, g, x_max=None):
    pts = np.union1d(np.union1d(f.breakpoints(), g.breakpoints()), [0.0])
    if x_max is not None:
        pts = np.union1d(pts[pts <= x_max], [x_max])
    return pts


def ks_distance(m, v, x_max=None):
    """Sup distance between two tails, checked on both sides of every breakpoint.

    Between consecutive merged breakpoints one tail is constant and the other
    monotone, so the supremum sits at an endpoint limit.
    """
    pts = _merged_points(m, v, x_max)
    d_right = np.abs(m.value(pts) - v.value(pts))
    d_left = np.abs(m.left(pts) - v.left(pts))
    return float(max(d_right.max(), d_left.max()))


def _abs_linear_integral(d0, d1, h):
    """Exact integral of |d| for d linear from d0 to d1 over length h."""
    same = d0 * d1 >= 0
    a0, a1 = np.abs(d0), np.abs(d1)
    denom = np.where(same, 1.0, a0 + a1)
    crossing = (d0 * d0 + d1 * d1) / (2.0 * np.where(denom == 0, 1.0, denom))
    return h * np.where(same, 0.5 * (a0 + a1), crossing)


def w1_distance(m, v, x_max=None):
    """Integral over [0, x_max] of |tail difference| on the merged breakpoint grid.

    On each cell both tails are replaced by the chord between their one-sided
    limits (exact for step and piecewise-linear tails).
    """
    pts = _merged_points(m, v, x_max)
    if pts.size < 2:
        return 0.0
    lo, hi = pts[:-1], pts[1:]
    d0 = m.value(lo) - v.value(lo)
    d1 = m.left(hi) - v.left(hi)
    return float(np.sum(_abs_linear_integral(d0, d1, hi - lo)))


def s_poly(a, b, ell):
    """Homogeneous sum a**(ell-1) + a**(ell-2) b + ... + b**(ell-1), by Horner in a."""
    if ell < 2:
        raise ValueError("ell must be >= 2")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.ones(np.broadcast(a, b).shape)
    bk = np.ones_like(s)
    for _ in range(ell - 1):
        bk = bk * b
        s = s * a + bk
    return s if s.ndim else float(s)


def mass_beyond(m, x_max):
    """Empirical mass strictly above the truncated domain."""
    return float(m.tail(x_max))


def exponential_tail(rate, x_max):
    return FunctionTail(lambda x: np.exp(-rate * x), x_max)


def uniform_tail(lo, hi):
    def fn(x):
        return np.clip((hi - x) / (hi - lo), 0.0, 1.0)
    return FunctionTail(fn, hi, grid=np.array([lo, hi]))


def kolmogorov_bound(n, level=0.99):
    """Asymptotic one-sample KS quantile sqrt(-log((1-level)/2) / (2n))."""
    return math.sqrt(-math.log((1.0 - level) / 2.0) / (2.0 * n))
