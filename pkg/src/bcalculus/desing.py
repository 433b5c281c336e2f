"""Profile functions and the desingularization of b^m-forms.

For even ``m`` the profile ``f`` is odd and increasing, equal to an
antiderivative of ``x^-m`` for ``|x| >= 1``; inside it is the odd polynomial
matching that antiderivative to second order at ``x = 1``.  For odd ``m`` it
is even, equal to ``x^2 - 2`` on ``[-1, 1]`` and to the antiderivative of
``x^-m`` for ``|x| >= 2``, with a quintic Hermite blend in between.  Scaling
``f_eps(x) = eps^(1-m) f(x/eps)`` keeps ``f_eps'(x) = x^-m`` outside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy

from . import expr as ex
from .bgeom import (BForm, NotClosedError, _sort_sign, dual_bivector, laurent,
                    numeric_d, require_closed)

P = np.polynomial.polynomial


def _odd_interior(m: int, degree: int) -> np.ndarray:
    """Odd polynomial matching ``F(u) = -1/((m-1)u^(m-1)) + 2`` to order ``(degree-1)/2`` at 1."""
    K = (degree - 1) // 2
    powers = [2 * j + 1 for j in range(K + 1)]
    # derivatives of F at 1: F = 2 - 1/(m-1), F^(k) = (-1)^(k-1) m(m+1)...(m+k-2)
    target = [sympy.Rational(2) - sympy.Rational(1, m - 1)]
    for k in range(1, K + 1):
        target.append((-1) ** (k - 1) * sympy.rf(m, k - 1))
    rows = [[sympy.ff(p, k) for p in powers] for k in range(K + 1)]
    sol = sympy.Matrix(rows).LUsolve(sympy.Matrix(target))
    c = np.zeros(degree + 1)
    for p, v in zip(powers, sol):
        c[p] = float(v)
    return c


def _hermite(a: float, b: float, left: Sequence[float], right: Sequence[float]) -> np.ndarray:
    """Quintic in ``s = u - a`` with value, slope and curvature given at both ends."""
    h = b - a
    A, rhs = [], []
    for s0, data in ((0.0, left), (h, right)):
        for k in range(3):
            A.append([math.perm(p, k) * s0 ** (p - k) if p >= k else 0.0 for p in range(6)])
            rhs.append(data[k])
    return np.linalg.solve(np.array(A), np.array(rhs, dtype=float))


def _odd_outside(m: int, u: np.ndarray) -> np.ndarray:
    """Antiderivative of ``u^-m`` for ``u > 0`` (``log u`` when ``m = 1``)."""
    return np.log(u) if m == 1 else -1.0 / ((m - 1) * u ** (m - 1))


@dataclass
class Profile:
    m: int
    eps: float
    interior: np.ndarray = field(init=False, repr=False)
    blend: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("order must be a positive integer")
        if not self.eps > 0:
            raise ValueError("epsilon must be positive")
        self.m = int(self.m)
        self.eps = float(self.eps)
        m = self.m
        if self.parity == "even":
            self.interior = _odd_interior(m, 5)
            u = np.linspace(0.0, 1.0, 10001)
            if np.min(P.polyval(u, P.polyder(self.interior))) <= 0:
                self.interior = _odd_interior(m, 7)
        else:
            self.interior = np.array([-2.0, 0.0, 1.0])
            F2 = float(_odd_outside(m, np.array(2.0)))
            self.blend = _hermite(1.0, 2.0, (-1.0, 2.0, 2.0),
                                  (F2, 2.0 ** -m, -m * 2.0 ** (-m - 1)))

    @property
    def parity(self) -> str:
        return "even" if self.m % 2 == 0 else "odd"

    @property
    def matching_points(self) -> list[float]:
        return [self.eps] if self.parity == "even" else [self.eps, 2 * self.eps]

    @property
    def outside_radius(self) -> float:
        """``f_eps' = x^-m`` exactly for ``|x|`` at or beyond this."""
        return self.matching_points[-1]

    def _pieces(self, x, k: int) -> np.ndarray:
        """``k``-th derivative (k = 0, 1, 2) of ``f_eps`` at ``x``."""
        x = np.asarray(x, dtype=float)
        m, eps = self.m, self.eps
        u = x / eps
        scale = eps ** (1 - m - k)
        out = np.empty_like(x)
        with np.errstate(all="ignore"):
            if k == 0:
                far = (-1.0 / ((m - 1) * x ** (m - 1)) + 2.0 * np.sign(x) * eps ** (1 - m)
                       if self.parity == "even" else
                       eps ** (1 - m) * _odd_outside(m, np.abs(u)))
            elif k == 1:
                far = x ** (-float(m))
            else:
                far = -m * x ** (-float(m) - 1)
        if self.parity == "even":
            inside = np.abs(u) < 1.0
            poly = self.interior
            for _ in range(k):
                poly = P.polyder(poly)
            out[inside] = scale * P.polyval(u[inside], poly)
            out[~inside] = far[~inside]
            return out
        a = np.abs(u)
        core, mid = a <= 1.0, (a > 1.0) & (a < 2.0)
        poly = self.interior
        blend = self.blend
        for _ in range(k):
            poly, blend = P.polyder(poly), P.polyder(blend)
        out[core] = scale * P.polyval(u[core], poly)
        sign = np.sign(u[mid]) ** k
        out[mid] = scale * sign * P.polyval(a[mid] - 1.0, blend)
        rest = ~(core | mid)
        out[rest] = far[rest]
        return out

    def f(self, x):
        return self._pieces(x, 0)

    def df(self, x):
        return self._pieces(x, 1)

    def d2f(self, x):
        return self._pieces(x, 2)


def build_profile(m: int, eps: float) -> Profile:
    return Profile(m, eps)


# -- desingularization -------------------------------------------------------

@dataclass
class DesingularizedForm:
    """``f_eps'(phi(t)) dt ^ S + rest`` as an ordinary form on the smooth chart.

    ``S`` collects the Laurent tails ``sum_i t^i tail_i``; ``rest`` is the
    remainder of the decomposition written in the ordinary coframe.
    """

    source: BForm
    profile: Profile
    tail_sum: BForm
    rest: BForm
    closed_residual: float | None = None

    @property
    def manifold(self):
        return self.rest.manifold

    @property
    def degree(self) -> int:
        return self.source.degree

    def evaluator(self, params: Mapping[str, float] | None = None, *, ordinary: bool = True):
        if not ordinary:
            raise ValueError("a desingularized form only has ordinary coefficients")
        m = self.source.manifold
        s = m.s
        phi = ex.numpy_function(ex.substitute(m.defining, params or {}), m.coords)
        tail = self.tail_sum.evaluator(params)
        rest = self.rest.evaluator(params)
        keys = {}
        for J in self.tail_sum.coeffs:
            sign, K = _sort_sign((s,) + J)
            keys[J] = (sign, K)

        def evaluate(points: Mapping[str, np.ndarray]) -> dict[tuple[int, ...], np.ndarray]:
            cols = [np.asarray(points[c], dtype=float) for c in m.coords]
            g = self.profile.df(np.asarray(phi(*cols), dtype=float) * np.ones_like(cols[0]))
            out = dict(rest(points))
            for J, v in tail(points).items():
                sign, K = keys[J]
                out[K] = out.get(K, 0.0) + sign * g * v
            return out

        return evaluate

    def __str__(self) -> str:
        m = self.source.manifold
        t = m.coords[m.s]
        phi = ex.to_text(m.defining)
        head = f"f_eps'({phi})*d{t}"
        if self.degree > 1:
            head += f"^({self.tail_sum})"
        elif self.tail_sum.coefficient(()) != 1:
            head = f"({ex.to_text(self.tail_sum.coefficient(()))})*{head}"
        return head if self.rest.is_zero() else f"{head} + {self.rest}"


def closedness_residual(form, params: Mapping[str, float] | None = None,
                        n: int = 64, seed: int = 0, h: float = 1e-5) -> float:
    """Largest finite-difference ``d`` coefficient, relative to the form's size."""
    m = form.manifold
    if form.degree >= m.dim:
        return 0.0
    pts = m.random_points(n, seed)
    if isinstance(form, DesingularizedForm):
        # cluster half the points inside the profile's transition region
        src = form.source.manifold
        width = 3 * form.profile.outside_radius
        rng = np.random.default_rng(seed + 1)
        t = src.coords[src.s]
        near = rng.uniform(-width, width, n // 2)
        pts[t][: n // 2] = near
    arr = np.column_stack([pts[c] for c in m.coords])
    ev = form.evaluator(params, ordinary=True)

    def coeffs(a: np.ndarray):
        return ev({c: a[:, i] for i, c in enumerate(m.coords)})

    size = max([1.0] + [float(np.max(np.abs(v))) for v in coeffs(arr).values()])
    d = numeric_d(coeffs, m.dim, form.degree, arr, h)
    worst = max([0.0] + [float(np.max(np.abs(v))) for v in d.values()])
    return worst / size


def desingularize(a: BForm, eps: float, params: Mapping[str, float] | None = None,
                  verify: bool = True, tol: float = 1e-6):
    """Replace ``dt/phi^m`` by ``f_eps'(phi) dt`` in the Laurent tail part of ``a``.

    A form without singular part is returned as is.
    """
    m = a.manifold
    if not m.is_b:
        raise ValueError("desingularization needs a b-chart")
    require_closed(a)
    lau = laurent(a, check_closed=False)
    if all(tl.is_zero() for tl in lau.tail):
        return a
    t = m.t
    S = BForm.zero(m, a.degree - 1)
    for i, tl in enumerate(lau.tail):
        S = S + tl * t ** i
    rest = lau.rest.to_ordinary()
    out = DesingularizedForm(a, build_profile(m.order, eps), S, rest)
    if verify and not (a.free_params() - set(params or {})):
        out.closed_residual = closedness_residual(out, params)
        if out.closed_residual > tol:
            raise NotClosedError(
                f"desingularized form fails the closedness check ({out.closed_residual:.3g})")
    return out


# -- convergence diagnostics -------------------------------------------------

@dataclass
class ConvergenceReport:
    parity: str
    columns: list[str]
    rows: list[list[float]]

    def column(self, name: str) -> list[float]:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    @property
    def bivector_monotone(self) -> bool:
        """Bivector error non-increasing as epsilon decreases."""
        if "bivector_sup_err" not in self.columns:
            return True
        pairs = sorted(zip(self.column("epsilon"), self.column("bivector_sup_err")), reverse=True)
        errs = [e for _, e in pairs]
        return all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(errs, errs[1:]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([format(v, ".17g") for v in r])

    def to_json(self) -> dict:
        return {"holds": self.bivector_monotone, "parity": self.parity,
                "columns": self.columns, "rows": self.rows}


def _matrix_function(M: sympy.Matrix, coords, params):
    n = M.shape[0]
    fns = [[ex.numpy_function(ex.substitute(M[i, j], params or {}), coords) for j in range(n)]
           for i in range(n)]

    def evaluate(cols):
        N = len(cols[0])
        out = np.zeros((N, n, n))
        for i in range(n):
            for j in range(n):
                out[:, i, j] = np.asarray(fns[i][j](*cols), dtype=float) * np.ones(N)
        return out

    return evaluate


def convergence_report(w: BForm, eps_list: Sequence[float],
                       params: Mapping[str, float] | None = None,
                       n_t: int = 2001, n_transverse: int = 5) -> ConvergenceReport:
    """Compare ``w_eps`` with ``w`` and their bivectors on a fixed grid.

    The grid is ``n_t`` points along the singular coordinate times
    ``n_transverse`` points per other coordinate.  Derivative columns are
    finite differences in ``t`` of the bivector error.
    """
    m = w.manifold
    if not m.is_b or w.degree != 2:
        raise ValueError("convergence report needs a two-form on a b-chart")
    from .structures import check_b_symplectic
    if m.dim % 2 == 0 and not check_b_symplectic(w, params):
        raise ValueError("form is not b-symplectic")
    box = m.box()
    axes = []
    for c in m.coords:
        lo, hi = box[c]
        k = n_t if c == m.singular else n_transverse
        periodic = m.period(c) is not None and c not in dict(m.bounds)
        axes.append(np.linspace(lo, hi, k, endpoint=not periodic))
    # singular coordinate first so derivatives run along axis 0
    order = [m.s] + [i for i in range(m.dim) if i != m.s]
    mesh = np.meshgrid(*[axes[i] for i in order], indexing="ij")
    pts = {m.coords[i]: g.ravel() for i, g in zip(order, mesh)}
    cols = [pts[c] for c in m.coords]
    t_axis = axes[m.s]
    dt = t_axis[1] - t_axis[0]
    phi = np.asarray(ex.numpy_function(ex.substitute(m.defining, params or {}), m.coords)(*cols),
                     dtype=float) * np.ones_like(cols[0])

    with np.errstate(all="ignore"):
        exact = w.evaluator(params, ordinary=True)(pts)

    parity = "even" if m.order % 2 == 0 else "odd"
    if parity == "even":
        k_max = min(m.order - 1, 3)
        columns = ["epsilon", "outside_max_err", "bivector_sup_err"] + \
                  [f"d{k}_sup_err" for k in range(1, k_max + 1)]
        Pi = _matrix_function(dual_bivector(w).matrix(ordinary=True), m.coords, params)(cols)
    else:
        columns = ["epsilon", "outside_max_err", "fold_value", "fold_slope"]
    rows = []
    for eps in eps_list:
        we = desingularize(w, eps, params, verify=False)
        approx = we.evaluator(params)(pts)
        outside = np.abs(phi) >= 2 * eps
        err = 0.0
        for key in set(exact) | set(approx):
            a = np.asarray(approx.get(key, 0.0)) * np.ones_like(phi)
            b = np.asarray(exact.get(key, 0.0)) * np.ones_like(phi)
            rel = np.abs(a - b)[outside] / np.maximum(1.0, np.abs(b[outside]))
            if rel.size:
                err = max(err, float(rel.max()))
        if parity == "odd":
            prof = we.profile
            slope0 = float(ex.evaluate(sympy.diff(m.defining, m.t), {m.singular: 0.0}, params))
            rows.append([eps, err, float(prof.df(0.0)), float(prof.d2f(0.0)) * slope0])
            continue
        W = np.zeros((len(phi), m.dim, m.dim))
        for (i, j), v in approx.items():
            W[:, i, j] = v
            W[:, j, i] = -v
        diff = -np.linalg.inv(W) - Pi
        row = [eps, err, float(np.max(np.abs(diff)))]
        shaped = diff.reshape((len(t_axis), -1))
        for _ in range(k_max):
            shaped = np.gradient(shaped, dt, axis=0)
            row.append(float(np.max(np.abs(shaped))))
        rows.append(row)
    return ConvergenceReport(parity, columns, rows)
