"""Model parameters, service laws and the limit-regime constants they induce."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng


class ParameterError(ValueError):
    """Raised for parameter sets outside the model's assumptions."""


SERVICE_KINDS = ("exponential", "deterministic", "lognormal", "hyperexp2", "uniform_shifted")
_KIND_CODE = {k: i for i, k in enumerate(SERVICE_KINDS)}


@dataclass(frozen=True)
class ServiceDist:
    """Unscaled service-time law with mean exactly 1.

    ``sigma`` is the standard deviation; it is fixed for ``exponential`` (1)
    and ``deterministic`` (0) and selects the shape parameter otherwise:

    * ``lognormal``: log-variance ``log(1 + sigma**2)``, log-mean ``-s2/2``;
    * ``hyperexp2``: balanced-means two-phase mixture, requires ``sigma >= 1``;
    * ``uniform_shifted``: uniform on ``[1 - h, 1 + h]`` with ``h = sqrt(3) sigma``,
      requires ``0 < sigma <= 1/sqrt(3)``.
    """

    kind: str = "exponential"
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ParameterError(f"unknown service kind {self.kind!r}; expected one of {SERVICE_KINDS}")
        fixed = {"exponential": 1.0, "deterministic": 0.0}
        if self.kind in fixed:
            if self.sigma is not None and float(self.sigma) != fixed[self.kind]:
                raise ParameterError(f"{self.kind} service has sigma={fixed[self.kind]}")
            object.__setattr__(self, "sigma", fixed[self.kind])
            return
        if self.sigma is None:
            raise ParameterError(f"{self.kind} service needs sigma")
        s = float(self.sigma)
        if not math.isfinite(s) or s <= 0:
            raise ParameterError("service sigma must be finite and positive")
        if self.kind == "hyperexp2" and s < 1.0:
            raise ParameterError("hyperexp2 needs sigma >= 1")
        if self.kind == "uniform_shifted" and s > 1.0 / math.sqrt(3.0):
            raise ParameterError("uniform_shifted needs sigma <= 1/sqrt(3) to keep support in [0, 2]")
        object.__setattr__(self, "sigma", s)

    @property
    def code(self):
        return _KIND_CODE[self.kind]

    def shape(self):
        """Kind code plus three shape parameters, as consumed by the jitted sampler."""
        s = self.sigma
        if self.kind == "lognormal":
            s2 = math.log1p(s * s)
            return self.code, np.array([-0.5 * s2, math.sqrt(s2), 0.0])
        if self.kind == "hyperexp2":
            c2 = s * s
            p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
            return self.code, np.array([p1, 2.0 * p1, 2.0 * (1.0 - p1)])
        if self.kind == "uniform_shifted":
            return self.code, np.array([math.sqrt(3.0) * s, 0.0, 0.0])
        return self.code, np.zeros(3)

    def to_dict(self):
        if self.kind in ("exponential", "deterministic"):
            return {"kind": self.kind}
        return {"kind": self.kind, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(kind=d)
        unknown = set(d) - {"kind", "sigma"}
        if unknown:
            raise ParameterError(f"unknown service fields: {sorted(unknown)}")
        return cls(kind=d.get("kind", "exponential"), sigma=d.get("sigma"))


@njit(cache=True)
def draw_service(state, code, shape):
    """One unscaled service time (mean 1) from a sequential Philox stream."""
    if code == 0:
        return _rng.next_exponential(state, 1.0)
    if code == 1:
        return 1.0
    if code == 2:
        return math.exp(shape[0] + shape[1] * _rng.next_normal(state))
    if code == 3:
        u = _rng.next_uniform(state)
        rate = shape[1] if u < shape[0] else shape[2]
        return _rng.next_exponential(state, rate)
    # uniform_shifted; the open lower end keeps draws strictly positive
    h = shape[0]
    x = 1.0 + h * (2.0 * _rng.next_uniform(state) - 1.0)
    return x if x > 0.0 else 1e-300


@njit(cache=True)
def _fill_service(state, code, shape, out):
    for i in range(out.shape[0]):
        out[i] = draw_service(state, code, shape)


def service_sample(dist, rng, size=None):
    """Draw from the unscaled service law; prelimit callers divide by ``mu_n``."""
    code, shape = dist.shape()
    if size is None:
        return draw_service(rng.state, code, shape)
    out = np.empty(int(size))
    _fill_service(rng.state, code, shape, out)
    return out


_PARAM_FIELDS = ("n", "lambda", "lambda_hat", "b", "mu", "mu_hat", "ell", "replacement", "service", "seed")


@dataclass(frozen=True)
class ModelParams:
    """Prelimit parameters of the n-server system.

    ``lam`` is serialized as ``lambda``.  ``b = 0`` is accepted (no load
    balancing stream, independent queues).
    """

    n: int
    lam: float = 1.0
    lambda_hat: float = 0.0
    b: float = 0.2
    mu: float = 1.0
    mu_hat: float = 0.21
    ell: int = 4
    replacement: str = "without"
    service: ServiceDist = field(default_factory=ServiceDist)
    seed: int = 0

    def __post_init__(self):
        for name in ("lam", "lambda_hat", "b", "mu", "mu_hat"):
            if not math.isfinite(float(getattr(self, name))):
                raise ParameterError(f"{name} must be finite")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("n must be a positive integer")
        if self.lam <= 0 or self.mu <= 0:
            raise ParameterError("lambda and mu must be positive")
        if self.lam != self.mu:
            raise ParameterError(f"critical load requires lambda == mu (got {self.lam} vs {self.mu})")
        if self.b < 0:
            raise ParameterError("b must be nonnegative")
        if int(self.ell) != self.ell or self.ell < 2:
            raise ParameterError("ell must be an integer >= 2")
        if self.replacement not in ("without", "with"):
            raise ParameterError("replacement must be 'without' or 'with'")
        if self.replacement == "without" and self.n < self.ell:
            raise ParameterError("sampling without replacement needs n >= ell")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must fit in 64 bits")
        if isinstance(self.service, (dict, str)):
            object.__setattr__(self, "service", ServiceDist.from_dict(self.service))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "ell", int(self.ell))
        object.__setattr__(self, "seed", int(self.seed))

    def replace(self, **changes):
        d = asdict(self)
        d["service"] = self.service
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self):
        return {
            "n": self.n, "lambda": float(self.lam), "lambda_hat": float(self.lambda_hat),
            "b": float(self.b), "mu": float(self.mu), "mu_hat": float(self.mu_hat),
            "ell": self.ell, "replacement": self.replacement,
            "service": self.service.to_dict(), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(_PARAM_FIELDS)
        if unknown:
            raise ParameterError(f"unknown model fields: {sorted(unknown)}")
        if "n" not in d:
            raise ParameterError("model.n is required")
        kw = {k: v for k, v in d.items() if k not in ("lambda", "service")}
        if "lambda" in d:
            kw["lam"] = d["lambda"]
        if "service" in d:
            kw["service"] = ServiceDist.from_dict(d["service"])
        for k in ("lam", "lambda_hat", "b", "mu", "mu_hat"):
            if k in kw:
                kw[k] = float(kw[k])
        return cls(**kw)


def reference_params(n=2000, **changes):
    """Reference constants: rho=-0.01, c1=0.21, b=0.2, ell=4, a=1 (exponential service)."""
    return ModelParams(n=n, lam=1.0, lambda_hat=0.0, b=0.2, mu=1.0, mu_hat=0.21, ell=4).replace(**changes)


@dataclass(frozen=True)
class DerivedConstants:
    lambda_n: float
    lambda0_n: float
    mu_n: float
    rho: float
    b1: float
    c1: float
    b0: float
    sigma_ser: float
    sigma2: float
    a: float
    lam: float
    b: float
    ell: int

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)


def derive(params):
    """Prelimit rates and limit coefficients for ``params``.

    >>> d = derive(reference_params(n=100))
    >>> round(d.rho, 12), round(d.c1, 12), d.b0, d.a
    (-0.01, 0.21, 0.8, 1.0)
    """
    p = params
    if p.lam != p.mu:
        raise ParameterError("critical load requires lambda == mu")
    if p.ell < 2:
        raise ParameterError("ell must be >= 2")
    rn = math.sqrt(p.n)
    sigma_ser = float(p.service.sigma)
    sigma2 = p.lam * (1.0 + sigma_ser * sigma_ser)
    out = DerivedConstants(
        lambda_n=p.n * p.lam + rn * p.lambda_hat,
        lambda0_n=p.b * p.n * rn,
        mu_n=p.n * p.mu + rn * p.mu_hat,
        rho=(p.lambda_hat + p.b - p.mu_hat) / p.lam,
        b1=p.lambda_hat - p.mu_hat,
        c1=p.mu_hat - p.lambda_hat,
        b0=p.b * p.ell,
        sigma_ser=sigma_ser,
        sigma2=sigma2,
        a=0.5 * sigma2,
        lam=float(p.lam),
        b=float(p.b),
        ell=p.ell,
    )
    for name, value in asdict(out).items():
        if not math.isfinite(value):
            raise ParameterError(f"derived constant {name} is not finite")
    if out.lambda_n <= 0 or out.mu_n <= 0:
        raise ParameterError("prelimit rates must be positive; n too small for lambda_hat/mu_hat")
    return out


def limit_constants(c1, b, ell, a, lam=1.0):
    """DerivedConstants-like record built from the limit coefficients alone.

    Useful for PDE/MV work that never touches a prelimit system.
    """
    rho = (b - c1) / lam
    return DerivedConstants(
        lambda_n=math.nan, lambda0_n=math.nan, mu_n=math.nan,
        rho=rho, b1=-c1, c1=c1, b0=b * ell,
        sigma_ser=math.sqrt(max(2.0 * a / lam - 1.0, 0.0)),
        sigma2=2.0 * a, a=a, lam=lam, b=b, ell=int(ell),
    )
