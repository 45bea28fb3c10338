"""McKean-Vlasov limit: reflected Euler-Maruyama particles.

Each particle follows

    dX = (b1 + b0 * vbar(X, t)**(ell - 1)) dt + sigma dW + dL,   X >= 0,

where vbar is the open tail P(X(t) > x) supplied by a :class:`DriftSource`.
Reflection is by projection onto [0, inf); the clipped amount is added to
the particle's local time L.  Gaussian increments come from Philox blocks
addressed by (step, particle id), so each particle owns an independent
counter-based stream.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import rng as _rng
from .measure import EmpiricalMeasure, ks_distance


@dataclass(frozen=True)
class MvCoeffs:
    b0: float
    b1: float
    sigma: float
    ell: int

    @classmethod
    def from_derived(cls, d):
        return cls(b0=d.b0, b1=d.b1, sigma=d.sigma, ell=d.ell)


class DriftSource:
    """Where the tail in the drift comes from.

    * ``pde_fed``: a :class:`~hydrobalance.pde.PdeHistory`, linear in time and space;
    * ``self_consistent``: the ensemble's own empirical open tail at the step start
      (each particle counts itself);
    * ``stationary``: a closed-form :class:`~hydrobalance.pde.StationaryProfile`.
    """

    MODES = ("pde_fed", "self_consistent", "stationary")

    def __init__(self, mode, history=None, profile=None):
        if mode not in self.MODES:
            raise ValueError(f"unknown drift mode {mode!r}")
        if mode == "pde_fed" and history is None:
            raise ValueError("pde_fed drift needs a PDE history")
        if mode == "stationary" and profile is None:
            raise ValueError("stationary drift needs a stationary profile")
        self.mode = mode
        self.history = history
        self.profile = profile

    @classmethod
    def pde_fed(cls, history):
        return cls("pde_fed", history=history)

    @classmethod
    def self_consistent(cls):
        return cls("self_consistent")

    @classmethod
    def stationary(cls, profile):
        return cls("stationary", profile=profile)

    def horizon(self):
        return self.history.times[-1] if self.mode == "pde_fed" else math.inf

    def tail_at(self, positions, t):
        """Tail values in [0, 1] at each particle position."""
        if self.mode == "pde_fed":
            return np.interp(positions, self.history.x, self.history.at(t), left=1.0, right=0.0)
        if self.mode == "stationary":
            return self.profile.v(positions)
        s = np.sort(positions)
        return (s.size - np.searchsorted(s, positions, side="right")) / s.size


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    local_time: np.ndarray
    t: float
    step: int
    ids: np.ndarray
    coeffs: MvCoeffs
    seed: int = 0

    @property
    def size(self):
        return self.positions.size

    def measure(self):
        return EmpiricalMeasure(self.positions)


@njit(cache=True)
def _reflected_step(pos, lt, vals, ids, key, step, dt, b0, b1, sigma, ell):
    n = pos.shape[0]
    out = np.empty(n)
    lt_out = np.empty(n)
    sq = sigma * math.sqrt(dt)
    for k in range(n):
        p = pos[k] + (b1 + b0 * vals[k] ** (ell - 1)) * dt + sq * _rng.block_normal(key, step, ids[k])
        if p >= 0.0:
            out[k] = p
            lt_out[k] = lt[k]
        else:
            out[k] = 0.0
            lt_out[k] = lt[k] - p
    return out, lt_out


def make_ensemble(N, ic, coeffs, seed=0, ids=None):
    """N particles with i.i.d. initial positions from ``ic``; particle k uses stream ``ids[k]``."""
    ids = np.arange(N, dtype=np.uint64) if ids is None else np.asarray(ids, dtype=np.uint64)
    if ids.size != N:
        raise ValueError("ids must have one entry per particle")
    if ic.law == "from_samples":
        pos = ic.draw(N, seed)
    else:
        key = np.uint64(_rng.derive_key(seed, _rng.PURPOSE_INIT))
        pos = np.asarray(ic.quantile(_rng.id_uniforms(key, ids, np.uint64(0))), dtype=float)
    return ParticleEnsemble(positions=pos, local_time=np.zeros(N), t=0.0, step=0,
                            ids=ids, coeffs=coeffs, seed=int(seed))


def mv_step(ens, drift, dt):
    """One reflected Euler-Maruyama step with the drift frozen at the step start."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = ens.coeffs
    if c.b0 == 0.0:
        vals = np.zeros(ens.size)
    else:
        vals = np.asarray(drift.tail_at(ens.positions, ens.t), dtype=float)
    key = np.uint64(_rng.derive_key(ens.seed, _rng.PURPOSE_NOISE))
    pos, lt = _reflected_step(ens.positions, ens.local_time, vals, ens.ids, key, np.uint64(ens.step),
                              float(dt), c.b0, c.b1, c.sigma, int(c.ell))
    return replace(ens, positions=pos, local_time=lt, t=ens.t + dt, step=ens.step + 1)


@dataclass
class MvSnapshot:
    t: float
    measure: EmpiricalMeasure
    mean_local_time: float
    positions: np.ndarray = field(repr=False, default=None)


def mv_run(N, ic, drift, dt, t_end, times, coeffs, seed=0, ids=None, keep_positions=False):
    """March N particles to ``t_end``, recording snapshots at ``times``.

    The step is shortened where needed so every snapshot time is hit exactly.
    """
    times = sorted(float(s) for s in times)
    if times and times[-1] > t_end + 1e-12:
        raise ValueError("snapshot after t_end")
    if drift.horizon() < t_end - 1e-9:
        raise ValueError(f"drift history ends at {drift.horizon()} < t_end={t_end}")
    ens = make_ensemble(N, ic, coeffs, seed, ids)
    snaps = []
    targets = times + ([t_end] if not times or times[-1] < t_end else [])
    eps = 1e-9 * max(dt, 1e-300)
    for target in targets:
        while ens.t < target - eps:
            ens = mv_step(ens, drift, min(dt, target - ens.t))
        ens = replace(ens, t=target) if abs(ens.t - target) <= eps else ens
        if target in times:
            snaps.append(MvSnapshot(t=target, measure=ens.measure(),
                                    mean_local_time=float(ens.local_time.mean()),
                                    positions=ens.positions.copy() if keep_positions else None))
    return snaps, ens


def chaos_diagnostic(positions, x_star):
    """Covariance of 1{X_i > x*} over disjoint particle pairs (0,1), (2,3), ...

    Returns (estimate, standard error).  Independent particles give an
    estimate centred at 0 (up to an O(1/N) centring bias).
    """
    pos = np.asarray(positions, dtype=float)
    if pos.size < 2:
        raise ValueError("need at least two particles")
    ind = (pos > x_star).astype(float)
    p = ind.mean()
    half = pos.size // 2
    prod = (ind[0:2 * half:2] - p) * (ind[1:2 * half:2] - p)
    est = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(half)) if half > 1 else math.nan
    return est, se


def ks_vs_tail(ens_or_measure, tail):
    m = ens_or_measure.measure() if isinstance(ens_or_measure, ParticleEnsemble) else ens_or_measure
    return ks_distance(m, tail)
