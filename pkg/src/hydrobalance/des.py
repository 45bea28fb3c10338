"""Exact discrete-event simulation of the n-server prelimit system.

Each queue has its own Poisson dedicated stream (rate ``lambda_n``), the
load balancing stream (rate ``lambda0_n``) routes through JSQ(ell), and
servers are work-conserving FIFO with i.i.d. service times
``service_draw / mu_n``.  The event calendar is a binary min-heap over
``(time, code)`` with codes ``i`` (dedicated arrival at queue i), ``n + i``
(departure from queue i) and ``2n`` (load balancing arrival).  All
randomness comes from one sequential Philox stream per replication, so a
run is a pure function of (params, initial condition, plan, seed).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng
from .initial import InitialCondition
from .measure import EmpiricalMeasure, stats
from .params import derive, draw_service
from .routing import _select_direct

__all__ = [
    "InitialCondition", "SnapshotPlan", "Simulation", "SimOutput", "Snapshot",
    "ReplicationSummary", "init", "run", "run_replications",
]

# meta slots
_SIZE, _EVENTS, _N_DED, _N_LBS, _N_DEP = 0, 1, 2, 3, 4
_ERR_EMPTY_DEPARTURE = -1


@njit(cache=True, inline="always")
def _less(t1, e1, t2, e2):
    return t1 < t2 or (t1 == t2 and e1 < e2)


@njit(cache=True)
def _push(ht, he, size, t, e):
    k = size
    while k > 0:
        parent = (k - 1) >> 1
        if _less(t, e, ht[parent], he[parent]):
            ht[k] = ht[parent]
            he[k] = he[parent]
            k = parent
        else:
            break
    ht[k] = t
    he[k] = e
    return size + 1


@njit(cache=True)
def _pop(ht, he, size):
    """Remove the root; returns the new size.  Caller reads the root first."""
    size -= 1
    t = ht[size]
    e = he[size]
    k = 0
    while True:
        c = 2 * k + 1
        if c >= size:
            break
        if c + 1 < size and _less(ht[c + 1], he[c + 1], ht[c], he[c]):
            c += 1
        if _less(ht[c], he[c], t, e):
            ht[k] = ht[c]
            he[k] = he[c]
            k = c
        else:
            break
    if size > 0:
        ht[k] = t
        he[k] = e
    return size


@njit(cache=True)
def _rank_of(x, j):
    xj = x[j]
    r = 0
    for k in range(x.shape[0]):
        if x[k] < xj or (x[k] == xj and k <= j):
            r += 1
    return r


@njit(cache=True)
def _start_service(i, t, n, dep, ht, he, meta, state, code, shape, mu_n):
    d = t + draw_service(state, code, shape) / mu_n
    dep[i] = d
    meta[_SIZE] = _push(ht, he, meta[_SIZE], d, n + i)


@njit(cache=True)
def _arrive(i, t, n, x, dep, idle_total, idle_since, ht, he, meta, state, code, shape, mu_n):
    if x[i] == 0:
        idle_total[i] += t - idle_since[i]
        _start_service(i, t, n, dep, ht, he, meta, state, code, shape, mu_n)
    x[i] += 1


@njit(cache=True)
def _advance(x, dep, idle_total, idle_since, ded, lbs, dpt, hist, ht, he, meta, clock,
             state, rates, ell, with_repl, code, shape, record_ranks, t_until, max_events):
    """Process events with time <= t_until (at most max_events of them).

    Returns 0 normally, or a negative error code.  On return the clock is
    t_until if the calendar was exhausted up to it, otherwise the time of
    the last processed event.
    """
    n = x.shape[0]
    lambda_n, lambda0_n, mu_n = rates[0], rates[1], rates[2]
    done = 0
    while meta[_SIZE] > 0 and done < max_events:
        t = ht[0]
        e = he[0]
        if t > t_until:
            break
        meta[_SIZE] = _pop(ht, he, meta[_SIZE])
        clock[0] = t
        done += 1
        if e < n:
            _arrive(e, t, n, x, dep, idle_total, idle_since, ht, he, meta, state, code, shape, mu_n)
            ded[e] += 1
            meta[_N_DED] += 1
            meta[_SIZE] = _push(ht, he, meta[_SIZE], t + _rng.next_exponential(state, lambda_n), e)
        elif e < 2 * n:
            i = e - n
            if x[i] <= 0:
                return _ERR_EMPTY_DEPARTURE
            x[i] -= 1
            dpt[i] += 1
            meta[_N_DEP] += 1
            if x[i] > 0:
                _start_service(i, t, n, dep, ht, he, meta, state, code, shape, mu_n)
            else:
                dep[i] = np.inf
                idle_since[i] = t
        else:
            j = _select_direct(x, ell, with_repl, state)
            if record_ranks:
                hist[_rank_of(x, j)] += 1
            _arrive(j, t, n, x, dep, idle_total, idle_since, ht, he, meta, state, code, shape, mu_n)
            lbs[j] += 1
            meta[_N_LBS] += 1
            meta[_SIZE] = _push(ht, he, meta[_SIZE], t + _rng.next_exponential(state, lambda0_n), e)
    meta[_EVENTS] += done
    if done < max_events:
        clock[0] = max(clock[0], t_until)
    return 0


@njit(cache=True)
def _seed_calendar(x, dep, ht, he, meta, state, rates, code, shape):
    n = x.shape[0]
    lambda_n, lambda0_n, mu_n = rates[0], rates[1], rates[2]
    for i in range(n):
        meta[_SIZE] = _push(ht, he, meta[_SIZE], _rng.next_exponential(state, lambda_n), i)
    if lambda0_n > 0:
        meta[_SIZE] = _push(ht, he, meta[_SIZE], _rng.next_exponential(state, lambda0_n), 2 * n)
    for i in range(n):
        if x[i] > 0:
            _start_service(i, 0.0, n, dep, ht, he, meta, state, code, shape, mu_n)
        else:
            dep[i] = np.inf


@dataclass(frozen=True)
class SnapshotPlan:
    times: tuple
    measures: bool = True
    stats: bool = True
    tracked: tuple = ()

    def __post_init__(self):
        t = tuple(float(s) for s in self.times)
        if any(s < 0 for s in t) or list(t) != sorted(t):
            raise ValueError("snapshot times must be sorted and nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "tracked", tuple(int(i) for i in self.tracked))


class Simulation:
    """SystemState plus event calendar for one replication.

    Build with :func:`init`; drive with :meth:`step` or :meth:`advance`.
    """

    def __init__(self, params, x0, seed):
        self.params = params
        self.derived = d = derive(params)
        n = params.n
        self.n = n
        self.seed = int(seed)
        self.x0 = np.asarray(x0, dtype=np.int64).copy()
        self.x = self.x0.copy()
        self.dep = np.full(n, np.inf)
        self.idle_total = np.zeros(n)
        self.idle_since = np.zeros(n)
        self.dedicated = np.zeros(n, dtype=np.int64)
        self.lbs = np.zeros(n, dtype=np.int64)
        self.departures = np.zeros(n, dtype=np.int64)
        self.rank_hist = np.zeros(n + 1, dtype=np.int64)
        self.heap_t = np.empty(2 * n + 1)
        self.heap_e = np.empty(2 * n + 1, dtype=np.int64)
        self.meta = np.zeros(5, dtype=np.int64)
        self.clock = np.zeros(1)
        self.rates = np.array([d.lambda_n, d.lambda0_n, d.mu_n])
        self.code, self.shape = params.service.shape()
        self.with_repl = params.replacement == "with"
        self.state = _rng.new_state(np.uint64(_rng.derive_key(seed, _rng.PURPOSE_DES)), np.uint64(0))
        _seed_calendar(self.x, self.dep, self.heap_t, self.heap_e, self.meta, self.state,
                       self.rates, self.code, self.shape)

    @property
    def t(self):
        return float(self.clock[0])

    @property
    def residual(self):
        """Time to the current service completion; inf for idle servers."""
        return self.dep - self.t

    @property
    def idle_time(self):
        """Cumulative idleness t - T_i(t) at the current clock."""
        return self.idle_total + np.where(self.x == 0, self.t - self.idle_since, 0.0)

    @property
    def events(self):
        return int(self.meta[_EVENTS])

    def pending(self):
        """Pending calendar entries as (time, code) pairs in heap order."""
        k = int(self.meta[_SIZE])
        return list(zip(self.heap_t[:k].tolist(), self.heap_e[:k].tolist()))

    def _call(self, t_until, max_events, record_ranks):
        err = _advance(self.x, self.dep, self.idle_total, self.idle_since, self.dedicated, self.lbs,
                       self.departures, self.rank_hist, self.heap_t, self.heap_e, self.meta, self.clock,
                       self.state, self.rates, self.params.ell, self.with_repl, self.code, self.shape,
                       record_ranks, float(t_until), int(max_events))
        if err == _ERR_EMPTY_DEPARTURE:
            raise RuntimeError(f"departure from an empty queue at t={self.t}: calendar corrupted")

    def step(self, record_ranks=False):
        """Process exactly one event; returns its (time, code)."""
        if self.meta[_SIZE] == 0:
            raise RuntimeError("event calendar is empty")
        ev = (float(self.heap_t[0]), int(self.heap_e[0]))
        self._call(np.inf, 1, record_ranks)
        return ev

    def advance(self, t, record_ranks=False):
        """Process every event up to and including time t; the clock ends at t."""
        if t < self.t:
            raise ValueError("cannot run the clock backwards")
        self._call(t, np.iinfo(np.int64).max, record_ranks)

    def ledger_ok(self):
        """Queue-length balance: x = x(0) + dedicated + LBS - departures, for every queue."""
        return bool(np.array_equal(self.x, self.x0 + self.dedicated + self.lbs - self.departures))

    def rescaled(self):
        return self.x / math.sqrt(self.n)

    def rescaled_idle(self):
        return self.derived.mu_n * self.idle_time / math.sqrt(self.n)


def init(params, ic, seed=None):
    """Initial state: x_i = round(sqrt(n) * draw) with draws from ``ic``."""
    seed = params.seed if seed is None else seed
    draws = ic.draw(params.n, seed)
    x0 = np.floor(math.sqrt(params.n) * draws + 0.5).astype(np.int64)
    return Simulation(params, np.maximum(x0, 0), seed)


@dataclass
class Snapshot:
    t: float
    measure: EmpiricalMeasure | None
    stats: object


@dataclass
class SimOutput:
    snapshots: list
    tracked: dict = field(default_factory=dict)
    rank_histogram: np.ndarray | None = None
    events: int = 0
    seed: int = 0


def run(params, ic, plan, seed=None, record_ranks=False):
    """Simulate through ``plan.times`` and return rescaled snapshots.

    ``tracked[i]`` holds two arrays over the plan times: rescaled length and
    rescaled cumulative idleness of queue i.
    """
    sim = init(params, ic, seed)
    snaps = []
    tracked = {i: (np.empty(len(plan.times)), np.empty(len(plan.times))) for i in plan.tracked}
    for k, t in enumerate(plan.times):
        sim.advance(t, record_ranks=record_ranks)
        if not sim.ledger_ok():
            raise RuntimeError(f"queue-length ledger violated at t={t}")
        xs = sim.rescaled()
        m = EmpiricalMeasure(xs)
        snaps.append(Snapshot(t=t, measure=m if plan.measures else None,
                              stats=stats(m) if plan.stats else None))
        if tracked:
            li = sim.rescaled_idle()
            for i in plan.tracked:
                tracked[i][0][k] = xs[i]
                tracked[i][1][k] = li[i]
    hist = sim.rank_hist[1:].copy() if record_ranks else None
    return SimOutput(snapshots=snaps, tracked=tracked, rank_histogram=hist, events=sim.events, seed=sim.seed)


@dataclass
class ReplicationSummary:
    times: tuple
    mean: np.ndarray
    mean_se: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    second_moment: np.ndarray
    outputs: list
    seeds: list

    @property
    def sigma_n(self):
        """Square root of the replication-averaged empirical variance."""
        return np.sqrt(self.variance)

    @property
    def sigma_n_se(self):
        # delta method: se(sqrt(V)) = se(V) / (2 sqrt(V))
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.variance_se / (2.0 * np.sqrt(self.variance))


def _se(a):
    if a.shape[0] < 2:
        return np.full(a.shape[1:], np.nan)
    return a.std(axis=0, ddof=1) / math.sqrt(a.shape[0])


def run_replications(params, ic, plan, seeds, jobs=1, record_ranks=False):
    """Independent replications, aggregated in seed-list order."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    if jobs == 1:
        outs = [run(params, ic, plan, s, record_ranks) for s in seeds]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=jobs)(delayed(run)(params, ic, plan, s, record_ranks) for s in seeds)
    means = np.array([[s.stats.mean for s in o.snapshots] for o in outs])
    var = np.array([[s.stats.variance for s in o.snapshots] for o in outs])
    m2 = np.array([[s.stats.second_moment for s in o.snapshots] for o in outs])
    return ReplicationSummary(
        times=plan.times, mean=means.mean(axis=0), mean_se=_se(means),
        variance=var.mean(axis=0), variance_se=_se(var), second_moment=m2.mean(axis=0),
        outputs=outs, seeds=seeds,
    )
