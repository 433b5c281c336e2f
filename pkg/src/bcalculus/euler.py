"""Steady Euler and Beltrami operators on three-dimensional b-charts.

Velocity ``X``, metric ``g`` and volume ``mu`` are given in the b-frame.  The
dual one-form ``alpha = g(X, .)`` carries the dynamics: ``d i_X mu = 0`` is
incompressibility, ``i_X d alpha = -dB`` is stationarity with Bernoulli
function ``B``, and ``d alpha = f i_X mu`` is the Beltrami condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import least_squares

from . import expr as ex
from .bgeom import (BForm, BMetric, BVectorField, DegenerateError, b_d, flat, interior,
                    pair, sharp, wedge)
from .expr import Expr, normalize
from .structures import StructureVerdict, check_b_contact, nonvanishing, reeb


@dataclass
class EulerData:
    X: BVectorField
    g: BMetric
    mu: BForm
    B: Expr | None = None

    def __post_init__(self):
        m = self.X.manifold
        if self.g.manifold != m or self.mu.manifold != m:
            raise ValueError("field, metric and volume must share a chart")
        if self.mu.degree != m.dim or normalize(self.mu.coefficient(tuple(range(m.dim)))) == 0:
            raise ValueError("volume must be a nonvanishing top-degree form")
        if self.B is not None:
            self.B = normalize(ex.as_expr(self.B))

    @property
    def manifold(self):
        return self.X.manifold

    @property
    def alpha(self) -> BForm:
        return flat(self.g, self.X)

    def subs(self, values: Mapping[str, object]) -> "EulerData":
        B = None if self.B is None else ex.substitute(self.B, values)
        return EulerData(self.X.subs(values), self.g.subs(values), self.mu.subs(values), B)


def _need_3d(d: EulerData) -> None:
    if d.manifold.dim != 3:
        raise ValueError("curl and Beltrami operations need a three-dimensional chart")


def solve_contraction(mu: BForm, beta: BForm) -> BVectorField:
    """The field ``W`` with ``i_W mu = beta`` for a two-form ``beta`` in dimension 3."""
    c = mu.coefficient((0, 1, 2))
    comps = [beta.coefficient((1, 2)) / c, -beta.coefficient((0, 2)) / c,
             beta.coefficient((0, 1)) / c]
    return BVectorField(mu.manifold, [normalize(v) for v in comps])


def curl(d: EulerData) -> BVectorField:
    _need_3d(d)
    da = b_d(d.alpha)
    W = solve_contraction(d.mu, da)
    if not interior(W, d.mu).equivalent(da):
        raise ArithmeticError("internal error: i_curl mu != d alpha")
    return W


def divergence_check(d: EulerData) -> StructureVerdict:
    flux = b_d(interior(d.X, d.mu))
    w = normalize(flux.coefficient(tuple(range(d.manifold.dim))))
    ok = flux.is_zero()
    return StructureVerdict(ok, w, [], "symbolic", "" if ok else "d i_X mu is not zero")


@dataclass
class BeltramiResult:
    f: Expr | None
    mismatch: tuple[str, str, str] | None = None
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.f is not None

    def to_json(self) -> dict:
        out = {"holds": self.holds, "f": None if self.f is None else ex.to_text(self.f),
               "reason": self.reason}
        if self.mismatch:
            out["mismatch"] = {"basis": self.mismatch[0], "d_alpha": self.mismatch[1],
                               "i_X_mu": self.mismatch[2]}
        return out


def beltrami_check(d: EulerData, params: Mapping[str, float] | None = None) -> BeltramiResult:
    """Return ``f`` with ``d alpha = f i_X mu`` when it exists and is nonvanishing."""
    _need_3d(d)
    if not divergence_check(d):
        return BeltramiResult(None, None, "field is not divergence free")
    m = d.manifold
    da = b_d(d.alpha)
    flux = interior(d.X, d.mu)
    f = None
    keys = sorted(set(da.coeffs) | set(flux.coeffs))
    word = lambda K: "^".join(m.basis_word(i) for i in K)
    for K in keys:
        a, b = da.coefficient(K), flux.coefficient(K)
        if b == 0:
            if a != 0 and not ex.is_zero(a):
                return BeltramiResult(None, (word(K), ex.to_text(a), ex.to_text(b)),
                                      "d alpha has a component i_X mu lacks")
            continue
        if f is None:
            f = normalize(a / b)
            continue
        if not ex.equivalent(a, f * b):
            return BeltramiResult(None, (word(K), ex.to_text(a), ex.to_text(b)),
                                  f"coefficient ratio differs from f = {ex.to_text(f)}")
    if f is None:
        return BeltramiResult(None, None, "i_X mu vanishes identically")
    if ex.is_zero(f):
        return BeltramiResult(None, None, "f = 0: the field is not rotational")
    if ex.free_names(f) & set(m.coords):
        if not (ex.free_names(f) - set(m.coords) - set(params or {})):
            if not nonvanishing(f, m, params):
                return BeltramiResult(None, None, f"f = {ex.to_text(f)} vanishes somewhere")
    return BeltramiResult(f)


def stationary_check(d: EulerData) -> StructureVerdict:
    if d.B is None:
        raise ValueError("stationarity needs a Bernoulli function")
    lhs = interior(d.X, b_d(d.alpha))
    rhs = -b_d(BForm.function(d.manifold, d.B))
    residual = lhs - rhs
    div = divergence_check(d)
    ok = residual.is_zero() and div.holds
    witness = next(iter(residual.coeffs.values()), div.witness)
    reason = ""
    if not residual.is_zero():
        reason = f"i_X d alpha + dB = {residual}"
    elif not div.holds:
        reason = div.reason
    return StructureVerdict(ok, normalize(witness), [], "symbolic", reason)


def bernoulli_two_form(B, mu: BForm, g: BMetric) -> BForm:
    """``mu_2 = i_V mu`` with ``V = grad B / |grad B|^2``; checks ``dB ^ mu_2 = mu``."""
    m = mu.manifold
    dB = b_d(BForm.function(m, B))
    grad = sharp(g, dB)
    norm2 = normalize(pair(dB, grad))
    if norm2 == 0:
        raise DegenerateError("B is critical everywhere")
    V = BVectorField(m, [normalize(c / norm2) for c in grad.coeffs])
    mu2 = interior(V, mu)
    if not wedge(dB, mu2).equivalent(mu):
        raise ArithmeticError("internal error: dB ^ mu_2 != mu")
    return mu2


# -- Beltrami fields to contact forms ---------------------------------------

@dataclass
class SectionVerdict:
    """Is ``X`` nonvanishing as a section of the b-tangent bundle?"""

    holds: bool
    method: str
    grid_min: float | None = None
    zeros: list[dict[str, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"holds": self.holds, "method": self.method, "grid_min": self.grid_min,
                "zeros": self.zeros}


def section_check(X: BVectorField, g: BMetric, params: Mapping[str, float] | None = None,
                  n: int = 64, refine: int = 32, tol: float = 1e-8) -> SectionVerdict:
    """Grid minimum of the b-frame norm of ``X`` plus least-squares refinement.

    A visibly constant norm is decided symbolically.  Otherwise the ``refine``
    smallest grid values seed a least-squares solve of ``X = 0``; converged
    roots are reported as zeros.
    """
    m = X.manifold
    n2 = normalize(sum(g.matrix[i, j] * X.coeffs[i] * X.coeffs[j]
                       for i in range(m.dim) for j in range(m.dim)))
    if not ex.free_names(n2) & set(m.coords):
        value = None
        if not ex.free_names(n2) - set(params or {}):
            value = ex.evaluate(n2, {}, params)
        if n2 != 0 and (value is None or value > tol ** 2):
            return SectionVerdict(True, "symbolic")
        return SectionVerdict(False, "symbolic", 0.0 if value is None else value ** 0.5)
    Xs = X.subs(params or {})
    comps = [ex.numpy_function(c, m.coords) for c in Xs.coeffs]
    G = g.evaluator(params)
    pts = m.grid(n)
    cols = [pts[c] for c in m.coords]
    N = len(cols[0])
    vec = np.stack([np.asarray(f(*cols), dtype=float) * np.ones(N) for f in comps], axis=1)
    norms = np.sqrt(np.einsum("ni,nij,nj->n", vec, G(pts), vec))
    grid_min = float(np.nanmin(norms))
    box = m.box()
    lo = np.array([box[c][0] for c in m.coords])
    hi = np.array([box[c][1] for c in m.coords])
    # greedy seeds at least three grid cells apart, smallest norm first
    cell = 3 * (hi - lo) / n
    seeds: list[int] = []
    for k in np.argsort(norms)[: 64 * refine]:
        p = np.array([pts[c][k] for c in m.coords])
        if all(np.any(np.abs(p - np.array([pts[c][j] for c in m.coords])) > cell) for j in seeds):
            seeds.append(int(k))
            if len(seeds) == refine:
                break
    zeros: list[dict[str, float]] = []

    def residual(p):
        return np.array([float(f(*p)) for f in comps])

    for k in seeds:
        x0 = np.array([pts[c][k] for c in m.coords])
        sol = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(sol.fun)) < 1e-10:
            p = sol.x
            for i, c in enumerate(m.coords):
                per = m.period(c)
                if per is not None:
                    p[i] = lo[i] + np.mod(p[i] - lo[i], per)
            if not any(np.max(np.abs(p - np.array(list(z.values())))) < 1e-6 for z in zeros):
                zeros.append({c: float(v) for c, v in zip(m.coords, p)})
    holds = not zeros and grid_min > tol
    return SectionVerdict(holds, "sampled", grid_min, zeros)


@dataclass
class ContactFromBeltrami:
    alpha: BForm
    contact: StructureVerdict
    section: SectionVerdict
    kernel: bool
    f: Expr | None

    @property
    def holds(self) -> bool:
        return self.contact.holds and self.section.holds and self.kernel

    def to_json(self) -> dict:
        return {"holds": self.holds, "alpha": str(self.alpha), "contact": self.contact.to_json(),
                "section": self.section.to_json(), "i_X_d_alpha_zero": self.kernel,
                "f": None if self.f is None else ex.to_text(self.f)}


def beltrami_to_contact(d: EulerData, params: Mapping[str, float] | None = None,
                        grid: int = 64) -> ContactFromBeltrami:
    bel = beltrami_check(d, params)
    if not bel.holds:
        raise ValueError(f"not a rotational Beltrami field: {bel.reason}")
    section = section_check(d.X, d.g, params, grid)
    alpha = d.alpha
    kernel = interior(d.X, b_d(alpha)).is_zero()
    if section.holds:
        contact = check_b_contact(alpha, params)
    else:
        contact = StructureVerdict(False, normalize(pair(alpha, d.X)), section.zeros, section.method,
                                   "field vanishes as a b-section")
    return ContactFromBeltrami(alpha, contact, section, kernel, bel.f)


# -- contact forms to Beltrami fields ---------------------------------------

def _vectors(form: BForm, params, pts, n: int) -> np.ndarray:
    N = len(next(iter(pts.values())))
    out = np.zeros((N, n))
    for (i,), v in form.evaluator(params)(pts).items():
        out[:, i] = v
    return out


def _matrices(form: BForm, params, pts, n: int) -> np.ndarray:
    N = len(next(iter(pts.values())))
    out = np.zeros((N, n, n))
    for (i, j), v in form.evaluator(params)(pts).items():
        out[:, i, j] = v
        out[:, j, i] = -v
    return out


@dataclass
class CompatibleMetric:
    """Pointwise metric ``g = a a^T / h + dalpha(. , J .)`` on ``ker alpha``."""

    alpha: BForm
    d_alpha: BForm
    reeb: BVectorField
    h: Expr
    params: dict

    def __call__(self, points: Mapping[str, np.ndarray]) -> np.ndarray:
        m = self.alpha.manifold
        n = m.dim
        pts = {c: np.atleast_1d(np.asarray(points[c], dtype=float)) for c in m.coords}
        N = len(pts[m.coords[0]])
        a = _vectors(self.alpha, self.params, pts, n)
        W = _matrices(self.d_alpha, self.params, pts, n)
        r = self.reeb.evaluator(self.params)(pts) * np.ones((N, n))
        h = np.asarray(ex.numpy_function(ex.substitute(self.h, self.params), m.coords)(
            *[pts[c] for c in m.coords]), dtype=float) * np.ones(N)
        out = np.empty((N, n, n))
        eye = np.eye(n)
        for k in range(N):
            # orthonormal basis of ker alpha from the SVD of the row a
            _, _, vt = np.linalg.svd(a[k][None, :])
            E = vt[1:].T
            A = E.T @ W[k] @ E
            vals, vecs = np.linalg.eigh(-A @ A)
            Pm = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
            proj = eye - np.outer(r[k], a[k])
            out[k] = np.outer(a[k], a[k]) / h[k] + proj.T @ E @ Pm @ E.T @ proj
        return out

    def complex_structure(self, point: Mapping[str, float]) -> np.ndarray:
        """``J`` on ``ker alpha`` in the orthonormal kernel basis used by :meth:`__call__`."""
        m = self.alpha.manifold
        pts = {c: np.atleast_1d(float(point[c])) for c in m.coords}
        a = _vectors(self.alpha, self.params, pts, m.dim)[0]
        W = _matrices(self.d_alpha, self.params, pts, m.dim)[0]
        E = np.linalg.svd(a[None, :])[2][1:].T
        A = E.T @ W @ E
        vals, vecs = np.linalg.eigh(-A @ A)
        Pinv = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        return -Pinv @ A


@dataclass
class BeltramiFromContact:
    Y: BVectorField
    mu: BForm
    metric: CompatibleMetric
    errors: dict[str, float]
    min_eigenvalue: float
    f_measured: float
    f_spread: float
    samples: int
    tol: float = 1e-8

    @property
    def holds(self) -> bool:
        e = self.errors
        return (e["i_Y_g"] <= self.tol and e["i_Y_mu"] <= self.tol and e["symmetry"] <= self.tol
                and self.min_eigenvalue > self.tol and e["flat_recovery"] <= 1e-6)

    def to_json(self) -> dict:
        return {"holds": self.holds, "Y": str(self.Y), "mu": str(self.mu),
                "samples": self.samples, "errors": self.errors,
                "min_eigenvalue": self.min_eigenvalue, "f_measured": self.f_measured,
                "f_spread": self.f_spread}


def contact_to_beltrami(alpha: BForm, h=1, params: Mapping[str, float] | None = None,
                        samples: int = 500, seed: int = 0, tol: float = 1e-8) -> BeltramiFromContact:
    """Metric and volume for which ``Y = h R`` is a Beltrami field.

    ``mu = alpha ^ d alpha / h`` symbolically; the metric is pointwise and all
    identities are checked at ``samples`` random points.  ``h`` must be
    positive there, since ``g(Y, Y) = alpha(Y) = h``.
    """
    m = alpha.manifold
    if m.dim % 2 == 0:
        raise ValueError("contact forms live on odd-dimensional charts")
    params = dict(params or {})
    verdict = check_b_contact(alpha, params)
    if not verdict.holds:
        raise ValueError(f"alpha is not b-contact: {verdict.reason}")
    h = normalize(ex.as_expr(h))
    R = reeb(alpha)
    Y = R * h
    da = b_d(alpha)
    top = wedge(alpha, da)
    mu = BForm(m, m.dim, {K: normalize(c / h) for K, c in top.coeffs.items()})

    pts = m.random_points(samples, seed)
    hv = np.asarray(ex.numpy_function(ex.substitute(h, params), m.coords)(
        *[pts[c] for c in m.coords]), dtype=float) * np.ones(samples)
    if np.min(hv) <= tol:
        raise ValueError("h must be positive at the sample points (g(Y, Y) = h)")
    metric = CompatibleMetric(alpha, da, R, h, params)
    G = metric(pts)
    a = _vectors(alpha, params, pts, m.dim)
    y = Y.evaluator(params)(pts) * np.ones((samples, m.dim))
    gy = np.einsum("nij,nj->ni", G, y)
    flux = _matrices(interior(Y, mu), params, pts, m.dim)
    Wm = _matrices(da, params, pts, m.dim)
    errors = {
        "i_Y_g": float(np.max(np.abs(gy - a))),
        "i_Y_mu": float(np.max(np.abs(flux - Wm))),
        "symmetry": float(np.max(np.abs(G - np.transpose(G, (0, 2, 1))))),
        "flat_recovery": float(np.max(np.abs(np.einsum("nji,nj->ni", G, y) - a))),
    }
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (G + np.transpose(G, (0, 2, 1))))))
    # measured proportionality d(g(Y, .)) = f i_Y mu, with g(Y, .) = alpha at these points
    num = np.einsum("nij,nij->n", Wm, flux)
    den = np.einsum("nij,nij->n", flux, flux)
    ratio = num[den > 1e-12] / den[den > 1e-12]
    f = float(np.mean(ratio)) if ratio.size else float("nan")
    spread = float(np.ptp(ratio)) if ratio.size else float("nan")
    return BeltramiFromContact(Y, mu, metric, errors, min_eig, f, spread, samples, tol)
