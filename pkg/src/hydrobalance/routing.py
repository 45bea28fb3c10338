"""JSQ(ell) routing: selection rule, rank law and an exact enumeration oracle.

Queue indices are 0-based; ranks are 1-based (``rank`` returns 1..n), so
``law.probs[r - 1]`` is the probability of routing to the queue of rank r.
Ties between equal lengths go to the smaller index, both in ``rank`` and in
the selection among sampled queues.
"""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit

from . import rng as _rng


@dataclass(frozen=True)
class RankLaw:
    n: int
    ell: int
    replacement: str
    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if abs(p.sum() - 1.0) > 1e-12:
            raise AssertionError(f"rank law sums to {p.sum()!r}")
        if np.any(np.diff(p) > 1e-15):
            raise AssertionError("rank law must be nonincreasing in r")

    def cdf(self):
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def rank(i, x):
    """#{j: x_j < x_i} + #{j <= i: x_j = x_i}, for 0-based index ``i``."""
    x = np.asarray(x)
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"index {i} out of range for n={x.shape[0]}")
    xi = x[i]
    return int(np.count_nonzero(x < xi) + np.count_nonzero(x[: i + 1] == xi))


def ranks(x):
    """Ranks of all entries; a permutation of 1..n."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    out = np.empty(x.shape[0], dtype=np.int64)
    out[order] = np.arange(1, x.shape[0] + 1)
    return out


def rank_law(n, ell, replacement="without"):
    """Probability that a JSQ(ell) arrival joins the queue of rank r, r = 1..n.

    Without replacement ``C(n-r, ell-1) / C(n, ell)``, evaluated as the
    product ``(ell/n) * prod_k (n-r-k+1)/(n-k)`` to avoid factorials; with
    replacement ``((n-r+1)/n)**ell - ((n-r)/n)**ell``.
    """
    n, ell = int(n), int(ell)
    if ell < 2:
        raise ValueError("ell must be >= 2")
    r = np.arange(1, n + 1, dtype=float)
    if replacement == "without":
        if ell > n:
            raise ValueError(f"ell={ell} > n={n} is impossible without replacement")
        p = np.full(n, ell / n)
        for k in range(1, ell):
            p *= np.maximum(n - r - k + 1, 0.0) / (n - k)
    elif replacement == "with":
        p = ((n - r + 1) / n) ** ell - ((n - r) / n) ** ell
    else:
        raise ValueError("replacement must be 'without' or 'with'")
    return RankLaw(n=n, ell=ell, replacement=replacement, probs=p)


@njit(cache=True)
def _select_direct(x, ell, with_replacement, state):
    n = x.shape[0]
    best = -1
    if with_replacement:
        for _ in range(ell):
            j = _rng.next_below(state, n)
            if best < 0 or x[j] < x[best] or (x[j] == x[best] and j < best):
                best = j
        return best
    # Floyd's algorithm: ell distinct indices without an n-sized scratch array
    picked = np.empty(ell, dtype=np.int64)
    m = 0
    for top in range(n - ell, n):
        t = _rng.next_below(state, top + 1)
        for q in range(m):
            if picked[q] == t:
                t = top
                break
        picked[m] = t
        m += 1
        if best < 0 or x[t] < x[best] or (x[t] == x[best] and t < best):
            best = t
    return best


def select_direct(x, ell, replacement, rng):
    """Sample ell queues, return the index of the shortest (smaller index on ties)."""
    x = np.ascontiguousarray(x, dtype=float)
    if replacement == "without" and ell > x.shape[0]:
        raise ValueError("ell > n without replacement")
    return int(_select_direct(x, int(ell), replacement == "with", rng.state))


def select_by_rank(x, law, rng):
    """Draw a rank from ``law`` and return the queue holding it."""
    x = np.asarray(x, dtype=float)
    if law.n != x.shape[0]:
        raise ValueError("law does not match the number of queues")
    theta = int(np.searchsorted(law.cdf(), rng.uniform(), side="right"))
    theta = min(theta, law.n - 1)
    return int(np.argsort(x, kind="stable")[theta])


def _surjections(ell, k):
    return sum((-1) ** j * math.comb(k, j) * (k - j) ** ell for j in range(k + 1))


def enumerate_selection_law(x, ell, replacement="without", exact=False):
    """Exact probability that ``select_direct`` returns each index.

    Enumerates the set S of distinct sampled indices.  Without replacement S
    ranges over the C(n, ell) ell-subsets, each with weight 1.  With
    replacement S ranges over all nonempty subsets of size <= ell, weighted
    by the number of ell-tuples whose set of entries is exactly S (the
    surjection count), which groups the n**ell tuples without listing them.
    Returns Fractions when ``exact`` else floats.
    """
    x = list(np.asarray(x, dtype=float))
    n = len(x)
    if n > 12:
        raise ValueError("enumeration limited to n <= 12")
    if ell < 1 or (replacement == "without" and ell > n):
        raise ValueError("need 1 <= ell <= n")
    counts = [0] * n
    if replacement == "without":
        total = math.comb(n, ell)
        sizes = [(ell, 1)]
    elif replacement == "with":
        total = n**ell
        sizes = [(k, _surjections(ell, k)) for k in range(1, min(ell, n) + 1)]
    else:
        raise ValueError("replacement must be 'without' or 'with'")
    key = lambda j: (x[j], j)
    for k, weight in sizes:
        for subset in itertools.combinations(range(n), k):
            counts[min(subset, key=key)] += weight
    probs = [Fraction(c, total) for c in counts]
    return probs if exact else np.array([float(p) for p in probs])


def enumerate_tuples(x, ell, replacement="without"):
    """Brute force over ordered draws; only for tiny n (cross-checks the subset oracle)."""
    x = list(np.asarray(x, dtype=float))
    n = len(x)
    if replacement == "with":
        draws = itertools.product(range(n), repeat=ell)
    else:
        draws = itertools.permutations(range(n), ell)
    counts = [0] * n
    total = 0
    for d in draws:
        counts[min(d, key=lambda j: (x[j], j))] += 1
        total += 1
    return [Fraction(c, total) for c in counts]
