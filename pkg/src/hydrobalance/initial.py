"""Initial laws for the rescaled queue lengths, shared by the DES, PDE and particle layers."""

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng

LAWS = ("dirac", "uniform", "from_tail", "from_samples")


@dataclass(frozen=True)
class InitialCondition:
    """Law of the rescaled initial lengths on [0, inf).

    * ``dirac``: ``x0``;
    * ``uniform``: ``lo``, ``hi``;
    * ``from_tail``: ``tail`` given as node arrays ``(x, v)`` of a
      nonincreasing tail with ``v[0] = 1``, linearly interpolated;
    * ``from_samples``: ``samples``, one rescaled value per queue/particle.

    Residual service of initially busy queues is always a fresh full
    service draw (``residual_law = "fresh"``).
    """

    law: str = "uniform"
    x0: float = 0.0
    lo: float = 0.0
    hi: float = 10.0
    tail: tuple | None = None
    samples: np.ndarray | None = field(default=None, compare=False)
    residual_law: str = "fresh"

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown initial law {self.law!r}")
        if self.law == "dirac" and self.x0 < 0:
            raise ValueError("dirac initial law must sit in [0, inf)")
        if self.law == "uniform" and not 0 <= self.lo < self.hi:
            raise ValueError("uniform initial law needs 0 <= lo < hi")
        if self.law == "from_tail":
            if self.tail is None:
                raise ValueError("from_tail needs tail=(x, v)")
            x, v = (np.asarray(a, dtype=float) for a in self.tail)
            if x[0] != 0 or np.any(np.diff(x) <= 0) or np.any(np.diff(v) > 1e-12) or v[0] > 1 + 1e-12 or v[-1] < 0:
                raise ValueError("from_tail needs increasing x from 0 and a nonincreasing tail in [0, 1]")
            object.__setattr__(self, "tail", (x, v))
        if self.law == "from_samples":
            if self.samples is None:
                raise ValueError("from_samples needs samples")
            s = np.asarray(self.samples, dtype=float)
            if np.any(s < 0):
                raise ValueError("initial samples must be nonnegative")
            object.__setattr__(self, "samples", s)
        if self.residual_law != "fresh":
            raise ValueError("only the 'fresh' residual law is implemented")

    def support_max(self):
        if self.law == "dirac":
            return self.x0
        if self.law == "uniform":
            return self.hi
        if self.law == "from_tail":
            x, v = self.tail
            inside = np.nonzero(v > 0)[0]
            return float(x[min(inside[-1] + 1, x.size - 1)]) if inside.size else 0.0
        return float(np.max(self.samples)) if self.samples.size else 0.0

    def tail_at(self, x):
        """Open tail xi_0(x, inf) at points x."""
        x = np.asarray(x, dtype=float)
        if self.law == "dirac":
            return np.where(x < self.x0, 1.0, 0.0)
        if self.law == "uniform":
            return np.clip((self.hi - x) / (self.hi - self.lo), 0.0, 1.0)
        if self.law == "from_tail":
            tx, tv = self.tail
            return np.interp(x, tx, tv, left=1.0, right=0.0)
        s = np.sort(self.samples)
        return (s.size - np.searchsorted(s, x, side="right")) / s.size

    def quantile(self, u):
        """Inverse of the tail: the x with P(X > x) = 1 - u (generalized inverse)."""
        u = np.asarray(u, dtype=float)
        if self.law == "dirac":
            return np.full(u.shape, self.x0)
        if self.law == "uniform":
            return self.lo + (self.hi - self.lo) * u
        if self.law == "from_tail":
            tx, tv = self.tail
            cdf = 1.0 - tv
            # flat stretches of the cdf carry no mass; interpolate on the strictly increasing part
            keep = np.concatenate(([True], np.diff(cdf) > 0))
            return np.interp(u, cdf[keep], tx[keep])
        s = np.sort(self.samples)
        idx = np.minimum((u * s.size).astype(np.int64), s.size - 1)
        return s[idx]

    def draw(self, count, seed, stream=0):
        """``count`` rescaled initial values from counter-addressed uniforms.

        Value i uses Philox counter ``(i, stream)`` under the init key, so it
        does not depend on ``count`` or on any other random consumer.
        ``from_samples`` returns the samples themselves (and requires
        ``count == len(samples)``).
        """
        if self.law == "from_samples":
            if self.samples.size != count:
                raise ValueError(f"from_samples has {self.samples.size} values, need {count}")
            return self.samples.copy()
        key = np.uint64(_rng.derive_key(seed, _rng.PURPOSE_INIT))
        u = _rng.counter_uniforms(key, int(count), np.uint64(stream))
        return self.quantile(u)

    def to_dict(self):
        if self.law == "dirac":
            return {"law": "dirac", "x0": float(self.x0)}
        if self.law == "uniform":
            return {"law": "uniform", "lo": float(self.lo), "hi": float(self.hi)}
        if self.law == "from_tail":
            return {"law": "from_tail", "x": [float(a) for a in self.tail[0]], "v": [float(a) for a in self.tail[1]]}
        return {"law": "from_samples", "samples": [float(a) for a in self.samples]}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        law = d.pop("law", "uniform")
        allowed = {"dirac": {"x0"}, "uniform": {"lo", "hi"}, "from_tail": {"x", "v"},
                   "from_samples": {"samples"}}.get(law)
        if allowed is None:
            raise ValueError(f"unknown initial law {law!r}")
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown fields for initial law {law!r}: {sorted(unknown)}")
        if law == "from_tail":
            return cls(law=law, tail=(np.asarray(d["x"], float), np.asarray(d["v"], float)))
        if law == "from_samples":
            return cls(law=law, samples=np.asarray(d["samples"], float))
        return cls(law=law, **{k: float(v) for k, v in d.items()})
