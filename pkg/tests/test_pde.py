import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from hydrobalance import pde
from hydrobalance.initial import InitialCondition
from hydrobalance.params import derive, limit_constants, reference_params

D = derive(reference_params(2000))
CO = pde.PdeCoeffs.from_derived(D)


def test_closed_form_solves_stationary_ode_symbolically():
    x, c1, b, a = sp.symbols("x c1 b a", positive=True)
    ell = 4
    alpha = b / c1
    w = (1 - alpha) * sp.exp(c1 / a * (ell - 1) * x) + alpha
    v = w ** sp.Rational(-1, ell - 1)
    # zero total flux: a v' + c1 v - b v**ell = 0, and v(0) = 1
    resid = sp.simplify(a * sp.diff(v, x) + c1 * v - b * v**ell)
    assert resid == 0
    assert sp.simplify(v.subs(x, 0)) == 1
    # Robin condition on u = -v': (c1 - b ell) u(0) + a u'(0) = 0
    u = -sp.diff(v, x)
    robin = sp.simplify(((c1 - b * ell) * u + a * sp.diff(u, x)).subs(x, 0))
    assert robin == 0


def test_stationary_closed_form_numerics():
    prof = pde.stationary(D)
    assert prof.alpha == pytest.approx(0.2 / 0.21)
    x = np.linspace(0, 50, 501)
    v = prof.v(x)
    assert v[0] == pytest.approx(1.0)
    assert np.all(np.diff(v) < 0) and np.all(v > 0)
    assert abs(prof.robin_residual()) < 1e-12
    u = prof.u(x)
    np.testing.assert_allclose(u[1:-1], -(v[2:] - v[:-2]) / 0.2, rtol=1e-3, atol=1e-8)
    # far tail: no overflow
    assert np.isfinite(prof.v(np.array([1e4]))).all()


def test_stationary_rejects_nonnegative_rho():
    with pytest.raises(ValueError):
        pde.stationary(limit_constants(0.1, 0.2, 4, 1.0))


def test_initial_grid_pins_boundaries():
    g = pde.init_tail(InitialCondition("uniform", lo=0, hi=10), CO, x_max=60, dx=0.01)
    assert g.v[0] == 1.0 and g.v[-1] == 0.0 and g.m == 6000
    with pytest.raises(ValueError):
        pde.init_tail(InitialCondition("uniform", lo=0, hi=70), CO, x_max=60)


def test_evolution_keeps_maximum_principle_and_mass():
    g = pde.init_tail(InitialCondition("dirac", x0=3.0), CO, x_max=40, dx=0.02)
    g1 = pde.evolve(g, 1.0)
    pde.check_tail(g1.v)
    dens = pde.density(g1)
    assert dens.mass == pytest.approx(1.0)
    assert np.trapezoid(dens.u, g1.x) == pytest.approx(1.0)
    assert abs(dens.robin_residual) < 0.05


def test_cfl_validation():
    g = pde.init_tail(InitialCondition("uniform"), CO, x_max=60, dx=0.05)
    with pytest.raises(pde.SchemeError):
        pde.evolve(g, 0.1, cfl=1.5)
    with pytest.raises(ValueError):
        pde.evolve(pde.evolve(g, 0.2), 0.1)


def test_check_tail_detects_violations():
    with pytest.raises(pde.SchemeError):
        pde.check_tail(np.array([1.0, 1.1, 0.0]))
    with pytest.raises(pde.SchemeError):
        pde.check_tail(np.array([1.0, 0.2, 0.3, 0.0]))


def test_density_of_stationary_grid_matches_closed_form():
    prof = pde.stationary(D)
    g = prof.grid(100.0, 0.005)
    dens = pde.density(g)
    assert np.max(np.abs(dens.u - prof.u(g.x))[1:-1]) < 1e-4
    assert abs(dens.robin_residual) < 1e-6


def test_macro_stats_grid_vs_quadrature():
    prof = pde.stationary(D)
    a = pde.macro_stats(prof.grid(200.0, 0.01))
    b = pde.stationary_macro(prof)
    assert a.m_mac == pytest.approx(b.m_mac, rel=1e-4)
    assert a.sigma_mac == pytest.approx(b.sigma_mac, rel=1e-4)
    with pytest.raises(ValueError):
        pde.macro_stats(prof.grid(10.0, 0.01))


def test_b_to_zero_mean_is_exponential_mean():
    # fixed (ell, rho, lam, a): m_mac -> a / (lam |rho|) as b -> 0
    rho = -0.5
    m = [pde.stationary_macro(pde.stationary(limit_constants(-rho + b, b, 4, 1.0))).m_mac
         for b in (1e-2, 1e-4, 1e-6)]
    assert abs(m[-1] - 2.0) < 1e-4
    assert abs(m[0] - 2.0) > abs(m[1] - 2.0) > abs(m[2] - 2.0)


def test_history_interpolates_in_time():
    g = pde.init_tail(InitialCondition("uniform"), CO, x_max=60, dx=0.05)
    final, hist = pde.evolve_history(g, 0.5)
    np.testing.assert_array_equal(hist.at(0.5), final.v)
    np.testing.assert_array_equal(hist.at(0.0), g.v)
    t1, t2 = hist.times[3], hist.times[4]
    np.testing.assert_allclose(hist.at(0.5 * (t1 + t2)), 0.5 * (hist.values[3] + hist.values[4]))
    with pytest.raises(ValueError):
        hist.at(0.6)


def test_zero_weight_has_zero_residual():
    g = pde.init_tail(InitialCondition("uniform"), CO, x_max=60, dx=0.05)
    _, hist = pde.evolve_history(g, 0.3)
    assert pde.weak_residual(hist, pde.zero_weight(), CO) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.2, 2.0))
def test_heat_reference_is_a_tail(x0, t):
    x = np.linspace(0, 30, 301)
    v = pde.heat_reference(x, t, x0, 1.0)
    assert v[0] == pytest.approx(1.0)
    assert np.all(np.diff(v) <= 1e-15)


def test_heat_kernel_convergence_order():
    heat = pde.PdeCoeffs(a=1.0, c1=0.0, b=0.0, ell=4)
    errs = []
    for dx in (0.02, 0.01):
        g = pde.init_tail(InitialCondition("dirac", x0=5.0), heat, x_max=30, dx=dx)
        g1 = pde.evolve(g, 1.0)
        errs.append(np.max(np.abs(g1.v - pde.heat_reference(g1.x, 1.0, 5.0, 1.0))))
    assert errs[1] < 0.7 * errs[0]
