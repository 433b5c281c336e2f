import math
import random

import numpy as np
import pytest
import sympy

from bcalculus import expr as ex
from bcalculus.bgeom import (BForm, BMetric, BVectorField, DegenerateError, b_d, chart,
                             interior, wedge)
from bcalculus.euler import (EulerData, beltrami_check, beltrami_to_contact,
                             bernoulli_two_form, contact_to_beltrami, curl, divergence_check,
                             section_check, stationary_check)
from conftest import random_poly

P = ex.parse
TWO_PI = 2 * sympy.pi
ABC = ["A*sin(z) + C*cos(y)", "B*sin(x) + A*cos(z)", "C*sin(y) + B*cos(x)"]


def torus(defining="sin(z)"):
    return chart("x y z", defining, periods={"x": TWO_PI, "y": TWO_PI, "z": TWO_PI})


def abc_data(m=None, values=None):
    m = m or torus()
    X = BVectorField(m, [P(c) for c in ABC])
    d = EulerData(X, BMetric.identity(m), BForm(m, 3, {"dx^dy^dz": 1}))
    return d.subs(values) if values else d


# -- curl and divergence ---------------------------------------------------------

def test_abc_curl_equals_field_when_a_vanishes():
    for m in (torus(), chart("x y z", "z")):
        d = abc_data(m, {"A": 0})
        assert curl(d).equivalent(d.X)


def test_curl_of_constant_field_is_zero():
    m = chart("x y z")
    d = EulerData(BVectorField(m, [1, 0, 0]), BMetric.identity(m), BForm(m, 3, {"dx^dy^dz": 1}))
    W = curl(d)
    assert all(ex.is_zero(c) for c in W.coeffs)


def test_curl_differs_from_field_for_a_only():
    m = chart("x y z", "z")
    d = abc_data(m, {"A": 1, "B": 0, "C": 0})
    W = curl(d)
    assert not W.equivalent(d.X)
    # dz/z slot: the z derivative produces z*A*cos(z) where i_X mu has A*cos(z)
    assert ex.equivalent(W[1], P("z*cos(z)"))
    assert ex.equivalent(d.X[1], P("cos(z)"))


def test_curl_identity_is_reverified():
    d = abc_data()
    W = curl(d)
    assert interior(W, d.mu).equivalent(b_d(d.alpha))


def test_divergence_examples():
    assert divergence_check(abc_data(chart("x y z", "z"))).holds
    m = chart("x y z")
    flat = BMetric.identity(m)
    mu = BForm(m, 3, {"dx^dy^dz": 1})
    assert not divergence_check(EulerData(BVectorField(m, [P("x"), 0, 0]), flat, mu)).holds
    assert divergence_check(EulerData(BVectorField(m, [2, -1, 3]), flat, mu)).holds


def test_volume_must_be_nonvanishing_top_form():
    m = chart("x y z")
    with pytest.raises(ValueError):
        EulerData(BVectorField(m, [1, 0, 0]), BMetric.identity(m), BForm(m, 3, {}))


# -- Beltrami --------------------------------------------------------------------

def test_abc_beltrami_symbolic_parameters():
    for m in (torus(), chart("x y z", "z")):
        r = beltrami_check(abc_data(m))
        assert not r.holds and r.mismatch is not None
        r0 = beltrami_check(abc_data(m, {"A": 0}))
        assert r0.holds and r0.f == 1


def test_abc_z_chart_forms_match_displayed_coefficients():
    m = chart("x y z", "z")
    d = abc_data(m)
    da, flux = b_d(d.alpha), interior(d.X, d.mu)
    expected_da = {"dx^dz": "-B*sin(x) - z*A*cos(z)", "dy^dz": "z*A*sin(z) + C*cos(y)",
                   "dx^dy": "C*sin(y) + B*cos(x)"}
    expected_flux = {"dx^dz": "-B*sin(x) - A*cos(z)", "dy^dz": "A*sin(z) + C*cos(y)",
                     "dx^dy": "C*sin(y) + B*cos(x)"}
    for k, v in expected_da.items():
        assert ex.equivalent(da.coefficient(k), P(v))
    for k, v in expected_flux.items():
        assert ex.equivalent(flux.coefficient(k), P(v))


def test_zero_curl_field_is_not_rotational():
    m = chart("x y z")
    d = EulerData(BVectorField(m, [1, 0, 0]), BMetric.identity(m), BForm(m, 3, {"dx^dy^dz": 1}))
    r = beltrami_check(d)
    assert not r.holds


def test_beltrami_implies_stationary_with_constant_bernoulli():
    for values in ({"A": 0}, {"A": 0, "B": 2, "C": 3}):
        d = abc_data(values=values)
        assert beltrami_check(d).holds
        d.B = P("7")
        assert stationary_check(d).holds


# -- stationary Euler -------------------------------------------------------------

def flat3(X):
    m = X.manifold
    return BMetric.identity(m), BForm(m, 3, {"dx^dy^dz": 1})


def test_stationary_rotation_with_hand_expansion():
    m = chart("x y z")
    X = BVectorField(m, [P("-y"), P("x"), 0])
    g, mu = flat3(X)
    # alpha = -y dx + x dy, d alpha = 2 dx^dy, i_X d alpha = -2x dx - 2y dy = -d(x^2 + y^2)
    assert stationary_check(EulerData(X, g, mu, P("x^2 + y^2"))).holds
    assert not stationary_check(EulerData(X, g, mu, P("x^2"))).holds


def test_stationary_hyperbolic_field():
    m = chart("x y z")
    X = BVectorField(m, [P("x"), P("-y"), 0])
    g, mu = flat3(X)
    # alpha = x dx - y dy is closed, so B must be constant
    assert stationary_check(EulerData(X, g, mu, P("3"))).holds
    assert not stationary_check(EulerData(X, g, mu, P("x*y"))).holds


def test_stationary_fails_for_translation():
    m = chart("x y z")
    X = BVectorField(m, [1, 0, 0])
    g, mu = flat3(X)
    v = stationary_check(EulerData(X, g, mu, P("-x")))
    assert not v.holds


def test_stationary_needs_bernoulli():
    with pytest.raises(ValueError):
        stationary_check(abc_data())


# -- Liouville two-form ------------------------------------------------------------

def test_mu2_saddle_point():
    m = chart("x y z")
    mu = BForm(m, 3, {"dx^dy^dz": 1})
    mu2 = bernoulli_two_form(P("x^2 + y^2 - z^2"), mu, BMetric.identity(m))
    r = "(2*(x^2 + y^2 + z^2))"
    expected = BForm(m, 2, {"dy^dz": P(f"x/{r}"), "dx^dz": P(f"-y/{r}"), "dx^dy": P(f"-z/{r}")},
                     check=False)
    assert mu2.equivalent(expected)


def test_mu2_saddle_circle():
    m = chart("x y z")
    mu = BForm(m, 3, {"dx^dy^dz": 1})
    mu2 = bernoulli_two_form(P("x^2 - y^2"), mu, BMetric.identity(m))
    r = "(2*(x^2 + y^2))"
    assert mu2.equivalent(BForm(m, 2, {"dy^dz": P(f"x/{r}"), "dx^dz": P(f"y/{r}")}, check=False))


def test_mu2_linear_function():
    m = chart("x y z")
    mu = BForm(m, 3, {"dx^dy^dz": 1})
    assert bernoulli_two_form(P("z"), mu, BMetric.identity(m)).equivalent(BForm(m, 2, {"dx^dy": 1}))


def test_mu2_critical_everywhere():
    m = chart("x y z")
    with pytest.raises(DegenerateError):
        bernoulli_two_form(P("5"), BForm(m, 3, {"dx^dy^dz": 1}), BMetric.identity(m))


def test_liouville_identity_random_pairs():
    rng = random.Random(41)
    m = chart("x y z")
    mu = BForm(m, 3, {"dx^dy^dz": P("1")})
    for k in range(20):
        B = P(random_poly(rng, m.coords, terms=2, trig=False) + f" + {k + 1}*x + y")
        g = BMetric.diagonal(m, [P(f"{rng.randint(1, 4)} + x^2"), P(f"{rng.randint(1, 3)}"),
                                 P("2 + sin(y)")])
        mu2 = bernoulli_two_form(B, mu, g)
        assert wedge(b_d(BForm.function(m, B)), mu2).equivalent(mu)


# -- Beltrami to contact ------------------------------------------------------------

@pytest.mark.parametrize("B, C", [(1, 0.5), (2, 1)])
def test_abc_section_nonvanishing(B, C):
    d = abc_data(values={"A": 0})
    v = section_check(d.X, d.g, {"B": B, "C": C})
    assert v.holds and v.grid_min > 0


def test_abc_section_zero_for_equal_amplitudes():
    d = abc_data(values={"A": 0})
    v = section_check(d.X, d.g, {"B": 1, "C": 1})
    assert not v.holds
    roots = [(math.pi, math.pi / 2), (0.0, 3 * math.pi / 2)]
    for z in v.zeros:
        assert math.sin(z["x"]) == pytest.approx(0, abs=1e-9)
        assert math.cos(z["y"]) == pytest.approx(0, abs=1e-9)
        assert any(abs(z["x"] - a) < 1e-6 and abs(z["y"] - b) < 1e-6 for a, b in roots)


def test_c0_beltrami_to_contact():
    d = abc_data(values={"A": 0, "C": 0})
    r = beltrami_to_contact(d, {"B": 2.0})
    assert r.holds and r.kernel and r.f == 1
    assert r.alpha.equivalent(BForm(d.manifold, 1, {"dy": P("B*sin(x)"), "dz": P("B*cos(x)")}))


def test_beltrami_to_contact_reports_vanishing_section():
    d = abc_data(values={"A": 0, "B": 1, "C": 1})
    r = beltrami_to_contact(d, {}, grid=32)
    assert not r.holds and r.section.zeros


def test_beltrami_to_contact_needs_beltrami():
    with pytest.raises(ValueError):
        beltrami_to_contact(abc_data(values={"A": 1}), {"B": 1, "C": 1})


# -- contact to Beltrami ------------------------------------------------------------

def c0_alpha():
    m = torus()
    return BForm(m, 1, {"dy": P("B*sin(x)"), "dz": P("B*cos(x)")})


@pytest.mark.parametrize("h", ["1", "2 + sin(x)"])
def test_contact_to_beltrami_c0(h):
    r = contact_to_beltrami(c0_alpha(), P(h), {"B": 2.0}, samples=500)
    assert r.holds
    assert max(r.errors[k] for k in ("i_Y_g", "i_Y_mu", "symmetry")) <= 1e-8
    assert r.errors["flat_recovery"] <= 1e-6
    assert r.min_eigenvalue > 0
    assert r.f_measured == pytest.approx(1.0, abs=1e-9) and r.f_spread <= 1e-8


def test_contact_to_beltrami_standard_model():
    m = chart("x y z")
    alpha = BForm(m, 1, {"dz": 1, "dy": P("x")})
    r = contact_to_beltrami(alpha, 1, {}, samples=500)
    assert r.holds
    assert [ex.normalize(c) for c in r.Y.coeffs] == [0, 0, 1]
    assert interior(r.Y, r.mu).equivalent(b_d(alpha))


def test_compatible_complex_structure():
    r = contact_to_beltrami(c0_alpha(), 1, {"B": 1.5}, samples=50)
    for p in [{"x": 0.3, "y": 1.0, "z": 0.7}, {"x": 2.0, "y": 0.1, "z": 4.0}]:
        J = r.metric.complex_structure(p)
        assert np.allclose(J @ J, -np.eye(2), atol=1e-12)
        G = r.metric({k: np.array([v]) for k, v in p.items()})[0]
        assert np.allclose(G, G.T, atol=1e-14) and np.all(np.linalg.eigvalsh(G) > 0)


def test_recovered_beltrami_field_has_constant_factor():
    """Y from the contact side is Beltrami for (g, mu) with f = 1 at every sample."""
    alpha = BForm(chart("x y z", "z"), 1, {"dx": 1, "dz": P("y")})
    r = contact_to_beltrami(alpha, 1, {}, samples=500, seed=3)
    assert r.holds and r.f_spread <= 1e-10 and r.f_measured == pytest.approx(1.0)


def test_contact_to_beltrami_rejects_bad_h_and_non_contact():
    with pytest.raises(ValueError):
        contact_to_beltrami(c0_alpha(), P("sin(x)"), {"B": 1.0})
    with pytest.raises(ValueError):
        contact_to_beltrami(BForm(chart("x y z"), 1, {"dx": 1}), 1, {})
