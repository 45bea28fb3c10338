"""Hydrodynamic-limit PDE in tail form, its stationary solution and macroscopic indices.

The unknown is the tail v(x, t) = xi_t(x, inf) on [0, x_max], solving

    v_t = (c1 v - b v**ell)_x + a v_xx,    v(0, t) = 1,

with v(x_max, t) = 0 as far field.  The density u = -v_x is a derived
diagnostic.  Time stepping is IMEX: the flux term is explicit and
first-order upwind (Engquist-Osher splitting of the flux by the sign of its
derivative), the diffusion is backward Euler with a tridiagonal solve.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import solve_banded

from .measure import GridTail


class SchemeError(RuntimeError):
    """Maximum principle, monotonicity or CFL violated during time stepping."""


@dataclass(frozen=True)
class PdeCoeffs:
    a: float
    c1: float
    b: float
    ell: int
    lam: float = 1.0

    @classmethod
    def from_derived(cls, d):
        return cls(a=d.a, c1=d.c1, b=d.b, ell=d.ell, lam=d.lam)

    @property
    def rho(self):
        return (self.b - self.c1) / self.lam

    def flux(self, v):
        """f(z) = c1 z - b z**ell."""
        return self.c1 * v - self.b * v**self.ell

    def flux_prime(self, v):
        return self.c1 - self.b * self.ell * v ** (self.ell - 1)

    def sonic_point(self):
        """Root of f' on [0, inf): f' >= 0 below it, <= 0 above it."""
        if self.c1 <= 0:
            return 0.0
        if self.b == 0:
            return math.inf
        return (self.c1 / (self.b * self.ell)) ** (1.0 / (self.ell - 1))

    def max_speed(self):
        """max |f'| over [0, 1]; f' is monotone in z."""
        return max(abs(self.c1), abs(self.c1 - self.b * self.ell))


def default_x_max(coeffs, support_max):
    scale = coeffs.a / max(coeffs.c1 * (coeffs.ell - 1), 0.05)
    return 6.0 * (scale + support_max)


@dataclass(frozen=True)
class TailGrid:
    x_max: float
    m: int
    v: np.ndarray
    t: float
    coeffs: PdeCoeffs

    @property
    def dx(self):
        return self.x_max / self.m

    @property
    def x(self):
        return np.linspace(0.0, self.x_max, self.m + 1)

    def tail(self):
        return GridTail(self.x, self.v)

    def truncation(self):
        """Tail mass at the last interior node (what the far-field Dirichlet value cuts off)."""
        return float(self.v[-2])


def check_tail(v, tol_range=1e-6, tol_mono=1e-8):
    lo, hi = float(v.min()), float(v.max())
    if lo < -tol_range or hi > 1.0 + tol_range:
        raise SchemeError(f"maximum principle violated: v in [{lo:.3e}, {hi:.6f}]")
    rise = float(np.max(np.diff(v))) if v.size > 1 else 0.0
    if rise > tol_mono:
        raise SchemeError(f"tail not monotone: increase of {rise:.3e}")


def init_tail(ic, coeffs, x_max=None, dx=0.01):
    """Grid tail from an initial law; node values are the exact open tail."""
    if x_max is None:
        x_max = default_x_max(coeffs, ic.support_max())
    m = int(round(x_max / dx))
    x = np.linspace(0.0, x_max, m + 1)
    if ic.support_max() >= x_max:
        raise ValueError(f"initial support reaches {ic.support_max()} >= x_max={x_max}")
    v = np.asarray(ic.tail_at(x), dtype=float).copy()
    v[0] = 1.0
    v[-1] = 0.0
    return TailGrid(x_max=float(x_max), m=m, v=v, t=0.0, coeffs=coeffs)


def grid_from_values(x_max, v, coeffs, t=0.0):
    v = np.array(v, dtype=float)
    return TailGrid(x_max=float(x_max), m=v.size - 1, v=v, t=float(t), coeffs=coeffs)


@dataclass
class PdeHistory:
    """Tail snapshots at every solver step; linear interpolation in time."""

    x: np.ndarray
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, t, v):
        self.times.append(float(t))
        self.values.append(np.asarray(v, dtype=float).copy())

    def stacked(self):
        return np.asarray(self.times), np.vstack(self.values)

    def at(self, t):
        ts = self.times
        if not ts[0] - 1e-12 <= t <= ts[-1] + 1e-12:
            raise ValueError(f"t={t} outside stored history [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 1)
        if k == len(ts) - 1 or ts[k + 1] == ts[k]:
            return self.values[k]
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def tail(self, t):
        return GridTail(self.x, self.at(t))


def _split_flux(coeffs, v):
    """Engquist-Osher parts of g = -f: g = g_plus + g_minus, g_plus' >= 0 >= g_minus'."""
    s = coeffs.sonic_point()
    g = lambda z: coeffs.b * z**coeffs.ell - coeffs.c1 * z
    if math.isinf(s):
        return np.zeros_like(v), g(v)
    gs = g(s)
    return g(np.maximum(v, s)) - gs, g(np.minimum(v, s))


def _advect(coeffs, v, dt, dx):
    gp, gm = _split_flux(coeffs, v)
    iface = gp[:-1] + gm[1:]
    out = v.copy()
    out[1:-1] -= (dt / dx) * (iface[1:] - iface[:-1])
    return out


def _diffuse(v_star, a, dt, dx):
    """Backward Euler for v_t = a v_xx with Dirichlet ends v[0], v[-1] held."""
    r = a * dt / (dx * dx)
    k = v_star.size - 2
    out = v_star.copy()
    if k <= 0 or r == 0:
        return out
    ab = np.empty((3, k))
    ab[0, :] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :] = -r
    rhs = v_star[1:-1].copy()
    rhs[0] += r * v_star[0]
    rhs[-1] += r * v_star[-1]
    out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return out


def evolve(grid, t_end, cfl=0.5, dt_max=None, history=None, check=True):
    """March the tail to ``t_end``.

    dt = cfl * min(dx / max|f'|, dt_max); the default cap is ``dx``.
    Range and monotonicity are checked after every step.
    """
    if t_end < grid.t:
        raise ValueError("t_end precedes the grid time")
    if not 0 < cfl <= 1:
        raise SchemeError(f"cfl={cfl} outside (0, 1]: upwind step would not be monotone")
    dx = grid.dx
    cap = dx if dt_max is None else float(dt_max)
    co = grid.coeffs
    v = grid.v.copy()
    t = grid.t
    if history is not None and (not history.times or history.times[-1] < t):
        history.append(t, v)
    while t < t_end - 1e-14 * max(1.0, t_end):
        fp = co.flux_prime(np.clip(v, 0.0, 1.0))
        speed = float(np.max(np.abs(fp)))
        dt = cfl * (min(dx / speed, cap) if speed > 0 else cap)
        dt = min(dt, t_end - t)
        if speed * dt / dx > 1.0 + 1e-12:
            raise SchemeError("CFL condition violated")
        v = _diffuse(_advect(co, v, dt, dx), co.a, dt, dx)
        t += dt
        if check:
            check_tail(v)
        if history is not None:
            history.append(t, v)
    return replace(grid, v=v, t=float(t_end) if t_end > grid.t else grid.t)


def evolve_history(grid, t_end, **kw):
    hist = PdeHistory(x=grid.x)
    final = evolve(grid, t_end, history=hist, **kw)
    return final, hist


@dataclass(frozen=True)
class DensityProfile:
    u: np.ndarray
    mass: float
    robin_residual: float


def density(grid):
    """u = -v_x: centered differences inside, one-sided at the ends.

    The trapezoid integral of u telescopes to v[0] - v[m] exactly.
    ``robin_residual`` is (c1 - b ell) u(0) + a u_x(0), the zero-flux
    condition at the origin, from second-order one-sided stencils on v.
    """
    v, dx, co = grid.v, grid.dx, grid.coeffs
    u = np.empty_like(v)
    u[1:-1] = -(v[2:] - v[:-2]) / (2.0 * dx)
    u[0] = -(v[1] - v[0]) / dx
    u[-1] = -(v[-1] - v[-2]) / dx
    if v.size > 3:
        u0 = (3.0 * v[0] - 4.0 * v[1] + v[2]) / (2.0 * dx)
        ux0 = -(2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (dx * dx)
        robin = (co.c1 - co.b * co.ell) * u0 + co.a * ux0
    else:
        robin = math.nan
    return DensityProfile(u=u, mass=float(v[0] - v[-1]), robin_residual=float(robin))


@dataclass(frozen=True)
class StationaryProfile:
    """Closed-form stationary tail v = w**(-1/(ell-1)), w = (1-alpha) e^{kx} + alpha, k = c1 (ell-1)/a."""

    alpha: float
    coeffs: PdeCoeffs

    @property
    def k(self):
        co = self.coeffs
        return co.c1 * (co.ell - 1) / co.a

    def log_w(self, x):
        x = np.asarray(x, dtype=float)
        # log((1-alpha) e^{kx} + alpha) without overflow
        return self.k * x + np.log((1.0 - self.alpha) + self.alpha * np.exp(-self.k * x))

    def w(self, x):
        return np.exp(self.log_w(x))

    def v(self, x):
        return np.exp(-self.log_w(x) / (self.coeffs.ell - 1))

    def u(self, x):
        co = self.coeffs
        x = np.asarray(x, dtype=float)
        lw = self.log_w(x)
        return (co.c1 / co.a) * (1.0 - self.alpha) * np.exp(self.k * x - co.ell / (co.ell - 1) * lw)

    def u_prime(self, x):
        """Analytic derivative of u; u'/u = k - (ell/(ell-1)) w'/w."""
        co = self.coeffs
        x = np.asarray(x, dtype=float)
        wp_over_w = self.k * (1.0 - self.alpha) * np.exp(self.k * x - self.log_w(x))
        return self.u(x) * (self.k - co.ell / (co.ell - 1) * wp_over_w)

    def robin_residual(self):
        co = self.coeffs
        return float((co.c1 - co.b * co.ell) * self.u(0.0) + co.a * self.u_prime(0.0))

    def grid(self, x_max, dx):
        m = int(round(x_max / dx))
        x = np.linspace(0.0, x_max, m + 1)
        v = self.v(x)
        v[0] = 1.0
        v[-1] = 0.0
        return TailGrid(x_max=float(x_max), m=m, v=v, t=0.0, coeffs=self.coeffs)


def _coeffs(c):
    return c if isinstance(c, PdeCoeffs) else PdeCoeffs.from_derived(c)


def stationary(derived):
    """Closed-form stationary solution; requires rho < 0 (equivalently c1 > b)."""
    co = _coeffs(derived)
    if not co.c1 > co.b or co.c1 <= 0:
        raise ValueError(f"no stationary solution unless rho < 0 (rho={co.rho})")
    return StationaryProfile(alpha=co.b / co.c1, coeffs=co)


def stationary_ode_oracle(derived, x, tol=1e-12):
    """Integrate v' = -(c1 v - b v**ell)/a from v(0) = 1 with adaptive RK45, sampled at x."""
    co = _coeffs(derived)
    if not co.c1 > co.b:
        raise ValueError("stationary ODE oracle needs rho < 0")
    x = np.asarray(x, dtype=float)
    sol = solve_ivp(lambda s, v: -co.flux(v) / co.a, (0.0, float(x.max())), [1.0],
                    method="RK45", rtol=tol, atol=tol * 1e-3, dense_output=True)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.sol(x)[0]


@dataclass(frozen=True)
class MacroStats:
    m_mac: float
    second: float
    sigma_mac: float


def _macro_from_tail(x, v):
    h = np.diff(x)
    m1 = float(np.sum(0.5 * h * (v[:-1] + v[1:])))
    # exact integral of x * (linear interpolant of v) on each cell
    xv = np.sum(h * (x[:-1] * (2 * v[:-1] + v[1:]) + x[1:] * (v[:-1] + 2 * v[1:])) / 6.0)
    second = float(2.0 * xv)
    return MacroStats(m_mac=m1, second=second, sigma_mac=math.sqrt(max(second - m1 * m1, 0.0)))


def macro_stats(grid, truncation_tol=1e-3):
    """Mean and standard deviation of the profile, via int x u = int v and int x^2 u = 2 int x v."""
    if grid.truncation() > truncation_tol:
        raise ValueError(f"tail mass {grid.truncation():.3e} beyond the domain exceeds {truncation_tol}")
    return _macro_from_tail(grid.x, grid.v)


def stationary_macro(profile):
    """m_mac and sigma_mac of the stationary law by adaptive quadrature on [0, inf)."""
    m1 = quad(profile.v, 0.0, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    xv = quad(lambda s: s * profile.v(s), 0.0, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    second = 2.0 * xv
    return MacroStats(m_mac=m1, second=second, sigma_mac=math.sqrt(max(second - m1 * m1, 0.0)))


@dataclass(frozen=True)
class WeightFunction:
    """Smooth weight phi with phi(0) = 0 and its first two derivatives."""

    name: str
    phi: object
    dphi: object
    d2phi: object


def _bump(center, radius):
    def parts(x):
        y = (np.asarray(x, dtype=float) - center) / radius
        inside = np.abs(y) < 1
        q = np.where(inside, 1.0 - y * y, 1.0)
        b = np.where(inside, np.exp(-1.0 / q), 0.0)
        # derivatives of exp(-1/(1-y^2)) with respect to y
        g1 = -2.0 * y / q**2
        g2 = (-2.0 * q**2 - 8.0 * y * y * q) / q**4
        return y, inside, b, g1, g2

    def phi(x):
        return parts(x)[2]

    def dphi(x):
        _, inside, b, g1, _ = parts(x)
        return np.where(inside, b * g1 / radius, 0.0)

    def d2phi(x):
        _, inside, b, g1, g2 = parts(x)
        return np.where(inside, b * (g1 * g1 + g2) / radius**2, 0.0)

    return WeightFunction(f"bump({center},{radius})", phi, dphi, d2phi)


def standard_weights():
    """Three weights: x e^{-x^2/8} (phi'(0)=1), x^2 e^{-x/2}, and a C-infinity bump on (2, 10)."""
    g = WeightFunction(
        "x*exp(-x^2/8)",
        lambda x: x * np.exp(-x * x / 8.0),
        lambda x: (1.0 - x * x / 4.0) * np.exp(-x * x / 8.0),
        lambda x: (x**3 / 16.0 - 0.75 * x) * np.exp(-x * x / 8.0),
    )
    p = WeightFunction(
        "x^2*exp(-x/2)",
        lambda x: x * x * np.exp(-x / 2.0),
        lambda x: (2.0 * x - x * x / 2.0) * np.exp(-x / 2.0),
        lambda x: (2.0 - 2.0 * x + x * x / 4.0) * np.exp(-x / 2.0),
    )
    return [g, p, _bump(6.0, 4.0)]


def zero_weight():
    z = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return WeightFunction("zero", z, z, z)


def _trap(y, x):
    return float(np.sum(0.5 * np.diff(x) * (y[:-1] + y[1:])))


def weak_residual(history, weight, coeffs, t=None):
    """|<v(t),phi> - <v0,phi> + int <f(v),phi'> - a int <v,phi''> - a phi'(0) t| by trapezoid quadrature.

    Space integrals use the grid nodes, time integrals the stored history times.
    """
    co = _coeffs(coeffs)
    times, vals = history.stacked()
    if t is not None:
        keep = times <= t + 1e-12
        times, vals = times[keep], vals[keep]
    x = history.x
    phi, dphi, d2phi = weight.phi(x), weight.dphi(x), weight.d2phi(x)
    lhs = _trap(vals[-1] * phi, x) - _trap(vals[0] * phi, x)
    flux_term = np.array([_trap(co.flux(v) * dphi, x) for v in vals])
    diff_term = np.array([_trap(v * d2phi, x) for v in vals])
    span = times[-1] - times[0]
    rhs = -_trap(flux_term, times) + co.a * _trap(diff_term, times) + co.a * float(weight.dphi(np.array(0.0))) * span
    return abs(lhs - rhs)


def heat_reference(x, t, x0, a):
    """Tail for v_t = a v_xx, v(0,t) = 1, v(x,0) = 1{x < x0}: odd reflection of v - 1."""
    from scipy.special import ndtr

    s = math.sqrt(2.0 * a * t)
    x = np.asarray(x, dtype=float)
    return ndtr(-(x - x0) / s) + ndtr(-(x + x0) / s)
