import math

import numpy as np
import pytest
import sympy

from bcalculus import expr as ex
from bcalculus.bgeom import BForm, BVectorField, chart, pair
from bcalculus.flowlab import (classify, discrepancy, integrate, ordinary_rhs, poincare, wrap)
from bcalculus.structures import reeb

P = ex.parse
TWO_PI = 2 * sympy.pi


def torus3():
    return chart("x y z", "sin(z)", periods={"x": TWO_PI, "y": TWO_PI, "z": TWO_PI})


def c0_reeb(m=None):
    m = m or torus3()
    alpha = BForm(m, 1, {"dy": P("B*sin(x)"), "dz": P("B*cos(x)")})
    return alpha, reeb(alpha)


def abc_field(A=0.0, B=1.0, C=0.5):
    m = torus3()
    X = BVectorField(m, [P("A*sin(z) + C*cos(y)"), P("B*sin(x) + A*cos(z)"),
                         P("C*sin(y) + B*cos(x)")])
    return X, {"A": A, "B": B, "C": C}


# -- integration --------------------------------------------------------------

@pytest.mark.parametrize("B", [1.0, 2.0])
def test_linear_flow_closed_form(B):
    _, R = c0_reeb()
    tr = integrate(R, [math.pi / 2, 0.0, 1.0], (-20, 20), params={"B": B})
    t = tr.times
    assert np.allclose(tr.unwrapped[:, 1], t / B, atol=1e-9)
    assert np.allclose(tr.unwrapped[:, 2], 1.0, atol=1e-12)
    assert np.allclose(tr.unwrapped[:, 0], math.pi / 2, atol=1e-12)


def test_singular_coordinate_closed_form():
    """tan(z/2) = tan(z0/2) exp(t/B) along x = 0."""
    _, R = c0_reeb()
    B = 1.5
    tr = integrate(R, [0.0, 0.0, 1.0], (-10, 10), params={"B": B})
    t, z = tr.times, tr.unwrapped[:, 2]
    expected = 2 * np.arctan(math.tan(0.5) * np.exp(t / B))
    assert np.max(np.abs(z - expected)) < 1e-7


def test_z_is_invariant():
    _, R = c0_reeb()
    for z0 in (0.0, math.pi):
        tr = integrate(R, [0.3, 1.0, z0], (-50, 50), params={"B": 2.0})
        assert np.max(np.abs(np.sin(tr.unwrapped[:, 2]))) < 1e-9
    X, params = abc_field()
    tr = integrate(X, [1.0, 2.0, 0.0], (-30, 30), params=params)
    assert np.max(np.abs(np.sin(tr.unwrapped[:, 2]))) < 1e-9


def test_near_z_seed_stays_close():
    # transverse growth is at most exp(|B| + |C|) per unit time, so keep the horizon short
    X, params = abc_field()
    for seed in ([1.0, 2.0, 1e-13], [0.3, 0.1, math.pi - 1e-13]):
        tr = integrate(X, seed, (-5, 5), params=params)
        assert np.max(np.abs(np.sin(tr.unwrapped[:, 2]))) < 1e-8


def test_zero_field_constant():
    m = chart("x y")
    tr = integrate(BVectorField(m, [0, 0]), [0.4, -0.2], (-5, 5))
    assert np.all(tr.unwrapped == np.array([0.4, -0.2]))


def test_wrapping_keeps_winding_counts():
    m = chart("x y", periods={"x": 1})
    pts, wind = wrap(m, np.array([[2.25, 3.0], [-0.5, 1.0]]))
    assert pts[:, 0].tolist() == [0.25, 0.5]
    assert wind[:, 0].tolist() == [2, -1]


def test_deterministic():
    X, params = abc_field()
    a = integrate(X, [0.5, 0.5, 1.0], (-20, 20), params=params)
    b = integrate(X, [0.5, 0.5, 1.0], (-20, 20), params=params)
    assert np.array_equal(a.unwrapped, b.unwrapped) and np.array_equal(a.times, b.times)


@pytest.mark.parametrize("seed", [[2.0, 1.0, 1.0], [1.0, 3.0, 2.0]])
def test_time_reversal_returns_to_seed(seed):
    # seeds whose orbits stay away from Z; orbits that approach Z are
    # exponentially ill-conditioned backward
    X, params = abc_field()
    seed = np.array(seed)
    end = integrate(X, seed, (0, 20), params=params).forward.y[-1]
    back = integrate(X, end, (-20, 0), params=params)
    assert np.max(np.abs(back.backward.y[-1] - seed)) < 1e-7


def test_reeb_flow_keeps_alpha_of_r_one():
    alpha, R = c0_reeb()
    params = {"B": 2.0}
    tr = integrate(R, [0.7, 0.2, 1.2], (-50, 50), params=params)
    val = ex.numpy_function(ex.substitute(pair(alpha, R), params), ("x", "y", "z"))
    pts = tr.unwrapped
    assert np.max(np.abs(val(pts[:, 0], pts[:, 1], pts[:, 2]) - 1.0)) < 1e-8


def test_bounded_chart_reports_left_domain():
    m = chart("x y")
    tr = integrate(BVectorField(m, [1, 0]), [0.0, 0.0], (-5, 5), bounded=True)
    assert classify(tr).kind == "left_domain"


def _abc_reference(X, params, seed, T):
    return integrate(X, seed, (0, T), tol=1e-13, params=params).forward.y[-1]


def test_fixed_step_order_on_abc_field():
    """Halving the step cuts the endpoint error by at least 4x (fifth-order propagation)."""
    X, params = abc_field()
    seed = np.array([0.5, 0.5, 1.0])
    T = 10.0
    ref = _abc_reference(X, params, seed, T)
    errs = []
    for h in (0.2, 0.1, 0.05, 0.025):
        end = integrate(X, seed, (0, T), params=params, step=h).forward.y[-1]
        errs.append(float(np.max(np.abs(end - ref))))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(r >= 4 for r in ratios), (errs, ratios)


def test_tolerance_ladder_reduces_error():
    """Adaptive tolerance halving: the error decreases, by a factor near 2."""
    X, params = abc_field()
    seed = np.array([0.5, 0.5, 1.0])
    T = 10.0
    ref = _abc_reference(X, params, seed, T)
    errs = []
    for tol in (1e-6, 5e-7, 2.5e-7, 1.25e-7):
        end = integrate(X, seed, (0, T), tol=tol, params=params).forward.y[-1]
        errs.append(float(np.max(np.abs(end - ref))))
    assert errs[-1] < errs[0]


# -- classification ---------------------------------------------------------------

def test_singular_periodic_orbit():
    _, R = c0_reeb()
    B = 1.0
    tr = integrate(R, [0.0, 0.0, 1.0], (-200 * B, 200 * B), params={"B": B})
    cls = classify(tr)
    assert cls.kind == "singular_periodic"
    assert abs(cls.forward_limit["z"][1] - math.pi) < 1e-3
    assert abs(cls.backward_limit["z"][0]) < 1e-3
    assert cls.to_json()["note"].startswith("finite-horizon surrogate")


@pytest.mark.parametrize("B", [1.0, 2.0])
def test_periodic_orbit_period(B):
    _, R = c0_reeb()
    tr = integrate(R, [math.pi / 2, 0.0, 1.0], (-50, 50), params={"B": B})
    cls = classify(tr)
    assert cls.kind == "periodic"
    assert cls.period == pytest.approx(2 * math.pi * B, abs=1e-4)


def test_constant_field_on_circle_period_one():
    m = chart("x y", periods={"x": 1})
    tr = integrate(BVectorField(m, [1, 0]), [0.2, 0.0], (-5, 5))
    cls = classify(tr)
    assert cls.kind == "periodic" and cls.period == pytest.approx(1.0, abs=1e-6)


def test_short_horizon_unresolved():
    _, R = c0_reeb()
    tr = integrate(R, [0.0, 0.0, 1.0], (-2, 2), params={"B": 1.0})
    assert classify(tr, min_span=10).kind == "unresolved"
    assert classify(tr).kind == "unresolved"


def test_trajectory_csv(tmp_path):
    _, R = c0_reeb()
    tr = integrate(R, [0.0, 0.0, 1.0], (-5, 5), params={"B": 1.0})
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,z,dist_to_Z"
    assert len(lines) == len(tr.times) + 1


# -- Poincare sections ------------------------------------------------------------

def linear_torus_flow(b):
    m = chart("x y", periods={"x": 1, "y": 1})
    return BVectorField(m, [1, b])


def test_poincare_rational_closes_up():
    X = linear_torus_flow(sympy.Rational(2, 5))
    res = poincare(X, "y", 0.0, [[0.1, 0.0]], t_max=60, returns=20)
    rec = res.records[0]
    assert len(rec.times) == 20
    # return map is the rotation x -> x + 5/2 (mod 1): two distinct points
    assert res.distinct == 2
    xs = [p[0] for p in rec.points]
    assert xs[0] == pytest.approx((0.1 + 2.5) % 1, abs=1e-9)


def test_poincare_irrational_equidistributes():
    X = linear_torus_flow(sympy.sqrt(2))
    res = poincare(X, "y", 0.0, [[0.0, 0.0]], t_max=400, returns=400)
    xs = np.array([p[0] for p in res.records[0].points])
    alpha = 1 / math.sqrt(2)
    expected = np.mod(np.arange(1, len(xs) + 1) * alpha, 1.0)
    assert np.max(np.abs(xs - expected)) < 1e-7
    assert res.distinct == len(xs)
    assert res.dispersion["x"] == pytest.approx(discrepancy(expected), abs=1e-9)
    assert res.dispersion["x"] < 0.02


def test_abc_z_section_has_no_returns():
    """With A = 0, H = C sin y + B cos x is conserved and z' = H sin z, so z is monotone."""
    X, params = abc_field()
    res = poincare(X, "z", 1.0, [[0.5, 0.5, 1.0], [2.0, 1.0, 1.0]], t_max=100, params=params)
    assert all(r.no_return for r in res.records)
    tr = integrate(X, [2.0, 1.0, 1.0], (-20, 20), params=params)
    x, y, z = tr.unwrapped.T
    H = 0.5 * np.sin(y) + np.cos(x)
    assert np.max(np.abs(H - H[0])) < 1e-7
    assert np.all(np.diff(z) * np.sign(H[0]) >= -1e-12)


def test_poincare_abc_time_reversal():
    X, params = abc_field()
    seed = np.array([2.0, 1.0, 1.0])
    res = poincare(X, "y", 1.0, [seed], t_max=100, returns=3, params=params)
    rec = res.records[0]
    assert len(rec.times) == 3
    rev = BVectorField(X.manifold, [-c for c in X.coeffs])
    # flowing the first return backward reaches the seed again
    back = integrate(rev, rec.points[0], (0, rec.times[0]), params=params).forward.y[-1]
    diff = np.mod(back - seed + math.pi, 2 * math.pi) - math.pi
    assert np.max(np.abs(diff)) < 1e-7
    # and the reversed field's returns retrace the forward ones
    res_back = poincare(rev, "y", 1.0, [rec.points[1]], t_max=100, returns=1, params=params)
    diff = np.mod(np.array(res_back.records[0].points[0]) - np.array(rec.points[0]) + math.pi,
                  2 * math.pi) - math.pi
    assert np.max(np.abs(diff)) < 1e-7
    assert res_back.records[0].times[0] == pytest.approx(rec.times[1] - rec.times[0], abs=1e-7)


def test_poincare_no_return_and_non_transverse():
    m = chart("x y")
    X = BVectorField(m, [1, 0])
    with pytest.raises(ValueError):
        poincare(X, "y", 0.0, [[0.0, 0.0]])
    res = poincare(X, "x", 5.0, [[0.0, 0.0]], t_max=1.0)
    assert res.records[0].no_return and not res.to_json()["holds"]


def test_discrepancy_of_uniform_grid():
    u = (np.arange(10) + 0.5) / 10
    assert discrepancy(u) == pytest.approx(0.05)


def test_ordinary_rhs_expands_singular_slot():
    m = chart("x z", "z", 2)
    rhs = ordinary_rhs(BVectorField(m, [0, 1]))
    assert rhs(0.0, np.array([0.0, 0.5]))[1] == pytest.approx(0.25)
