import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from bcalculus import expr as ex
from bcalculus.bgeom import BForm, NotClosedError, b_d, chart
from bcalculus.desing import (DesingularizedForm, build_profile, closedness_residual,
                              convergence_report, desingularize)

P = ex.parse
ORDERS = [1, 2, 3, 4, 5, 6]
EPS = [0.2, 0.1, 0.05]


# -- profiles ----------------------------------------------------------------

def test_profile_outside_value_examples():
    assert build_profile(2, 1.0).df(2.0) == pytest.approx(0.25, abs=1e-15)
    assert build_profile(1, 1.0).f(3.0) == pytest.approx(math.log(3), abs=1e-15)
    for m in (2, 4, 6):
        assert build_profile(m, 0.3).f(0.0) == 0.0


@pytest.mark.parametrize("m", ORDERS)
@pytest.mark.parametrize("eps", EPS)
def test_outside_agreement_exact(m, eps):
    p = build_profile(m, eps)
    x = np.concatenate([np.linspace(2 * eps, 3.0, 5000), -np.linspace(2 * eps, 3.0, 5000)])
    exact = x ** (-float(m))
    assert np.max(np.abs(p.df(x) - exact) / np.abs(exact)) <= 1e-14
    if m % 2 == 0:
        x_in = np.linspace(eps, 2 * eps, 100)
        assert np.max(np.abs(p.df(x_in) - x_in ** -float(m)) / x_in ** -float(m)) <= 1e-14


@pytest.mark.parametrize("m", [2, 4, 6])
@pytest.mark.parametrize("eps", EPS)
def test_even_profile_positive_and_odd(m, eps):
    p = build_profile(m, eps)
    x = np.linspace(-3 * eps, 3 * eps, 10_000)
    assert np.all(p.df(x) > 0)
    assert np.allclose(p.f(-x), -p.f(x), atol=1e-12 * eps ** (1 - m))


@pytest.mark.parametrize("m", [1, 3, 5])
@pytest.mark.parametrize("eps", EPS)
def test_odd_profile_folds_at_zero(m, eps):
    p = build_profile(m, eps)
    x = np.linspace(1e-6, 3 * eps, 10_000)
    assert np.all(p.df(x) > 0)
    assert np.allclose(p.f(-x), p.f(x), rtol=0, atol=1e-12 * eps ** (1 - m))
    assert p.df(0.0) == 0.0
    assert p.d2f(0.0) > 0


@pytest.mark.parametrize("m", ORDERS)
@pytest.mark.parametrize("eps", EPS)
def test_c1_across_matching_points(m, eps):
    p = build_profile(m, eps)
    delta = 1e-12 * eps
    for c in p.matching_points:
        for s in (c, -c):
            for g, dg in ((p.f, p.df), (p.df, p.d2f)):
                jump = abs(float(g(s + delta)) - float(g(s - delta)))
                assert jump <= 1e-9 * max(1.0, abs(float(g(s)))) + 4 * delta * abs(float(dg(s)))


@pytest.mark.parametrize("m", ORDERS)
def test_profile_is_antiderivative_of_slope(m):
    """f(b) - f(a) against adaptive quadrature of f'."""
    p = build_profile(m, 0.1)
    for a, b in [(0.0, 0.05), (0.05, 0.15), (0.12, 0.5), (-0.3, -0.01)]:
        integral, _ = quad(lambda s: float(p.df(s)), a, b, points=[0.1, 0.2, -0.1, -0.2]
                           if a < 0 else [0.1, 0.2], limit=200, epsabs=1e-13, epsrel=1e-12)
        assert float(p.f(b) - p.f(a)) == pytest.approx(integral, rel=1e-9, abs=1e-9)


@given(st.integers(1, 6), st.floats(0.01, 1.0), st.floats(2.0, 50.0), st.booleans())
def test_outside_agreement_property(m, eps, k, negative):
    x = (-1 if negative else 1) * k * eps
    p = build_profile(m, eps)
    assert float(p.df(x)) == pytest.approx(x ** -float(m), rel=1e-14)


def test_bad_profile_arguments():
    with pytest.raises(ValueError):
        build_profile(0, 0.1)
    with pytest.raises(ValueError):
        build_profile(2, 0.0)


def closed_sample(m):
    """Tails on closed transverse forms, a smooth closed part and an exact part."""
    a = BForm(m, 2, {"dx^dy": P("1 + x + x^3"), "dx^du": P("2 + x"), "dy^du": 1})
    return a + b_d(BForm(m, 1, {"dy": P("x*u^2 + sin(y)"), "du": P("cos(x)")}))


# -- desingularize ---------------------------------------------------------------

def test_desingularize_b2_two_form_value():
    m = chart("t y", "t", 2)
    w = desingularize(BForm(m, 2, {"dt^dy": 1}), 0.1)
    assert isinstance(w, DesingularizedForm)
    vals = w.evaluator()({"t": np.array([0.5, -0.5, 0.01]), "y": np.zeros(3)})
    assert vals[(0, 1)][:2] == pytest.approx([4.0, 4.0], abs=1e-14)
    assert np.isfinite(vals[(0, 1)][2]) and vals[(0, 1)][2] > 0
    assert w.closed_residual is not None and w.closed_residual <= 1e-6


def test_desingularize_zero_tail_returns_input():
    m = chart("t y", "t", 2)
    a = BForm(m, 1, {"dy": 1})
    assert desingularize(a, 0.1) is a


def test_desingularize_cylinder_form_is_nowhere_zero():
    m = chart("x y", "sin(2*pi*x)", 2, periods={"x": 1, "y": 1})
    w = desingularize(BForm(m, 1, {"dx": 1}), 0.1)
    x = np.linspace(0, 1, 20001, endpoint=False)
    vals = w.evaluator()({"x": x, "y": np.zeros_like(x)})[(0,)]
    assert np.all(np.isfinite(vals)) and np.min(vals) > 0


def test_desingularize_rejects_non_closed():
    m = chart("t y", "t", 2)
    with pytest.raises(NotClosedError):
        desingularize(BForm(m, 1, {"dy": P("t")}), 0.1)


@pytest.mark.parametrize("m_", [1, 2, 3, 4])
@pytest.mark.parametrize("eps", EPS)
def test_desingularized_forms_are_closed(m_, eps):
    m = chart("x y u", "x", m_)
    a = closed_sample(m)
    w = desingularize(a, eps)
    assert closedness_residual(w) <= 1e-6


def test_desingularized_agrees_outside():
    m = chart("x y u", "x", 3)
    a = closed_sample(m)
    w = desingularize(a, 0.1)
    pts = {"x": np.linspace(0.2, 1, 50), "y": np.linspace(-1, 1, 50), "u": np.linspace(0, 1, 50)}
    got, want = w.evaluator()(pts), a.evaluator(ordinary=True)(pts)
    for k in want:
        assert np.allclose(got[k], want[k], rtol=1e-14, atol=0)


# -- convergence ------------------------------------------------------------------

def test_convergence_even_order():
    m = chart("x y", "x", 2)
    rep = convergence_report(BForm(m, 2, {"dx^dy": 1}), EPS)
    assert rep.columns[:3] == ["epsilon", "outside_max_err", "bivector_sup_err"]
    assert rep.columns[3:] == ["d1_sup_err"]
    assert all(v == 0.0 for v in rep.column("outside_max_err"))
    assert rep.bivector_monotone
    # oracle: sup |x^2 - 1/f_eps'(x)| over the same grid
    x = np.linspace(-1, 1, 2001)
    for eps, err in zip(EPS, rep.column("bivector_sup_err")):
        p = build_profile(2, eps)
        assert err == pytest.approx(np.max(np.abs(x ** 2 - 1 / p.df(x))), rel=1e-12)


def test_convergence_odd_order_fold():
    m = chart("x y", "x", 1)
    rep = convergence_report(BForm(m, 2, {"dx^dy": 1}), EPS)
    assert rep.parity == "odd"
    assert rep.column("fold_value") == [0.0, 0.0, 0.0]
    assert all(s > 0 for s in rep.column("fold_slope"))
    assert all(v <= 1e-14 for v in rep.column("outside_max_err"))


def test_convergence_csv(tmp_path):
    m = chart("x y", "x", 4)
    rep = convergence_report(BForm(m, 2, {"dx^dy": 1}), EPS)
    rep.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "epsilon,outside_max_err,bivector_sup_err,d1_sup_err,d2_sup_err,d3_sup_err"
    assert len(lines) == 4


def test_closedness_residual_detects_non_closed():
    m = chart("x y u", "x", 2)
    a = BForm(m, 2, {"dx^dy": 1})
    bad = DesingularizedForm(a, build_profile(2, 0.1), BForm(m, 1, {"dy": P("1 + u")}),
                             BForm(m.smooth(), 2, {}))
    assert closedness_residual(bad) > 1e-3
