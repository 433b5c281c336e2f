"""Verdicts and constructions for b-symplectic and b-contact structures.

Also hosts the machinery for the Tischler-type examples: reflection across
``Z``, normalisation of Laurent tails, periods over coordinate circles and
the commensurate fibration map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
import sympy

from . import expr as ex
from .bgeom import (BForm, BManifold, BVectorField, CoordinateMap, DegenerateError,
                    NotClosedError, PoleError, b_d, form_matrix, interior, laurent, pair,
                    pfaffian, pullback, require_closed, wedge)
from .expr import Expr, normalize

VERIFY_TOL = 1e-8
POLE_GUARD = 1e-3


class CommensurabilityError(ValueError):
    pass


@dataclass
class StructureVerdict:
    holds: bool
    witness: Expr
    failure_points: list[dict[str, float]] = field(default_factory=list)
    method: str = "symbolic"
    reason: str = ""

    def __bool__(self) -> bool:
        return self.holds

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "method": self.method,
            "witness_text": ex.to_text(self.witness),
            "failure_points": [{k: float(v) for k, v in p.items()} for p in self.failure_points],
            "reason": self.reason,
        }


# -- nonvanishing verdicts ---------------------------------------------------

def _bind(e: Expr, m: BManifold, params: Mapping[str, float] | None) -> Expr:
    e = ex.substitute(e, params or {})
    free = ex.free_names(e) - set(m.coords)
    if free:
        raise ex.UnboundSymbolError(
            f"sampling needs values for parameters {sorted(free)} (use --param)")
    return e


def _bisect(f, a: np.ndarray, b: np.ndarray, fa: float, iters: int = 60) -> np.ndarray:
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def nonvanishing(e: Expr, m: BManifold, params: Mapping[str, float] | None = None,
                 n: int = 16, tol: float = VERIFY_TOL, max_points: int = 10) -> StructureVerdict:
    """Decide whether ``e`` vanishes somewhere on the chart.

    Constant (coordinate-free) witnesses are decided symbolically.  Otherwise
    ``e`` is sampled on the uniform ``n^dim`` grid, skipping a small
    neighbourhood of its poles, and a sign change between grid neighbours
    also counts as a zero; such zeros are located by bisection.
    """
    e = normalize(e)
    if e == 0:
        return StructureVerdict(False, e, [], "symbolic", "witness is identically zero")
    if not ex.free_names(e) & set(m.coords):
        if params is not None and not (ex.free_names(e) - set(params)):
            value = ex.evaluate(e, {}, params)
            if abs(value) < tol:
                return StructureVerdict(False, e, [], "symbolic",
                                        f"witness evaluates to {value:g} at the given parameters")
        return StructureVerdict(True, e, [], "symbolic")

    bound = _bind(e, m, params)
    f = ex.numpy_function(bound, m.coords)
    pts = m.grid(n)
    cols = [pts[c] for c in m.coords]
    with np.errstate(all="ignore"):
        vals = np.asarray(f(*cols), dtype=float) * np.ones_like(cols[0])
        den = sympy.fraction(bound)[1]
        if den.is_number:
            mask = np.isfinite(vals)
        else:
            dv = np.asarray(ex.numpy_function(den, m.coords)(*cols), dtype=float) * np.ones_like(cols[0])
            mask = np.isfinite(vals) & (np.abs(dv) >= POLE_GUARD)

    failures: list[dict[str, float]] = []
    small = np.flatnonzero(mask & (np.abs(vals) < tol))
    for k in small[:max_points]:
        failures.append({c: float(pts[c][k]) for c in m.coords})

    shape = (n,) * m.dim
    grid_vals = vals.reshape(shape)
    grid_mask = mask.reshape(shape)
    point_fn = ex.math_function(bound, m.coords)
    sign_change = False
    for axis in range(m.dim):
        lo = [slice(None)] * m.dim
        hi = [slice(None)] * m.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a, b = grid_vals[tuple(lo)], grid_vals[tuple(hi)]
        ok = grid_mask[tuple(lo)] & grid_mask[tuple(hi)] & (a * b < 0)
        for flat_index in np.flatnonzero(ok):
            sign_change = True
            if len(failures) >= max_points:
                break
            idx = np.unravel_index(flat_index, a.shape)
            p = np.array([pts[c].reshape(shape)[idx] for c in m.coords])
            step = np.zeros(m.dim)
            step[axis] = pts[m.coords[axis]].reshape(shape)[tuple(
                i + 1 if d == axis else i for d, i in enumerate(idx))] - p[axis]

            def g(q):
                try:
                    return point_fn(*q)
                except (ZeroDivisionError, ValueError):
                    return float("nan")

            root = _bisect(g, p, p + step, float(a[idx]))
            failures.append({c: float(v) for c, v in zip(m.coords, root)})

    holds = bool(mask.any()) and not small.size and not sign_change
    reason = "" if holds else ("witness vanishes on the verification grid" if mask.any()
                               else "no pole-free grid points")
    return StructureVerdict(holds, e, failures, "sampled", reason)


def top_power(a: BForm, k: int) -> BForm:
    out = a
    for _ in range(k - 1):
        out = wedge(out, a)
    return out


def _top_coefficient(a: BForm) -> Expr:
    return a.coefficient(tuple(range(a.manifold.dim)))


def check_b_symplectic(w: BForm, params: Mapping[str, float] | None = None,
                       grid: int = 16) -> StructureVerdict:
    m = w.manifold
    if m.dim % 2:
        raise ValueError("b-symplectic check needs an even-dimensional chart")
    if w.degree != 2:
        raise ValueError("b-symplectic check needs a two-form")
    witness = _top_coefficient(top_power(w, m.dim // 2))
    if not b_d(w).is_zero():
        return StructureVerdict(False, normalize(witness), [], "symbolic", "form is not closed")
    return nonvanishing(witness, m, params, grid)


def contact_witness(alpha: BForm) -> Expr:
    m = alpha.manifold
    n = m.dim // 2
    top = alpha if n == 0 else wedge(alpha, top_power(b_d(alpha), n))
    return normalize(_top_coefficient(top))


def check_b_contact(alpha: BForm, params: Mapping[str, float] | None = None,
                    grid: int = 16) -> StructureVerdict:
    m = alpha.manifold
    if m.dim % 2 == 0:
        raise ValueError("b-contact check needs an odd-dimensional chart")
    if alpha.degree != 1:
        raise ValueError("b-contact check needs a one-form")
    return nonvanishing(contact_witness(alpha), m, params, grid)


def reeb(alpha: BForm, verify: bool = True) -> BVectorField:
    """The field with ``alpha(R) = 1`` and ``i_R d alpha = 0``.

    The kernel of the odd-size antisymmetric matrix of ``d alpha`` is spanned
    by its signed sub-Pfaffians; dividing by ``alpha`` of that vector is
    Cramer's rule for the bordered system.
    """
    m = alpha.manifold
    if m.dim % 2 == 0 or alpha.degree != 1:
        raise ValueError("Reeb field needs a one-form on an odd-dimensional chart")
    D = form_matrix(b_d(alpha))
    n = m.dim
    v = []
    for i in range(n):
        keep = [k for k in range(n) if k != i]
        v.append((-1) ** i * pfaffian(D.extract(keep, keep)))
    norm = normalize(sum(alpha.coefficient((i,)) * v[i] for i in range(n)))
    if norm == 0:
        raise DegenerateError("alpha does not pair with the kernel of d alpha: not contact")
    R = BVectorField(m, [normalize(c / norm) for c in v])
    if verify:
        if not ex.equivalent(pair(alpha, R), 1):
            raise ArithmeticError("internal error: alpha(R) != 1")
        if not interior(R, b_d(alpha)).is_zero():
            raise ArithmeticError("internal error: i_R d alpha != 0")
    return R


# -- doubling ----------------------------------------------------------------

@dataclass
class ReflectionVerdict:
    symmetric: bool
    antisymmetric: bool
    reflected: BForm
    parities: dict[str, str]

    @property
    def extends(self) -> bool:
        return self.symmetric or self.antisymmetric

    def to_json(self) -> dict:
        return {"holds": self.symmetric, "symmetric": self.symmetric,
                "antisymmetric": self.antisymmetric, "extends": self.extends,
                "reflected": str(self.reflected), "parities": self.parities}


def _parity(c: Expr, t) -> str:
    flipped = c.xreplace({t: -t})
    if ex.is_zero(flipped - c):
        return "even"
    if ex.is_zero(flipped + c):
        return "odd"
    return "mixed"


def reflect_double(a: BForm) -> ReflectionVerdict:
    """Pull ``a`` back under ``t -> -t`` and compare with ``a``.

    ``symmetric`` means the reflected form equals ``a``; ``antisymmetric``
    means it equals ``-a``.  Parities refer to the stored coefficients.
    """
    m = a.manifold
    if not m.is_b:
        raise ValueError("reflection needs a chart with a defining coordinate")
    t = m.t
    comps = tuple(-s if s == t else s for s in m.symbols)
    reflected = pullback(CoordinateMap(m, m, comps), a).form
    words = {}
    for K, c in a.coeffs.items():
        word = "^".join(m.basis_word(i) for i in K) or "1"
        words[word] = _parity(c, t)
    return ReflectionVerdict(reflected.equivalent(a), reflected.equivalent(-a), reflected, words)


# -- Laurent tails of one-forms ----------------------------------------------

@dataclass
class RegularizedTails:
    forms: list[BForm]
    order: list[int]
    notice: str = ""


def regularize_tails(forms: Sequence[BForm]) -> RegularizedTails:
    """Subtract multiples of one form so only it keeps a leading tail.

    The form with a nonzero order-0 tail is moved to the front; every other
    form ``a_i`` becomes ``a_i - (tail_i / tail_1) a_1``.
    """
    forms = list(forms)
    if not forms:
        raise ValueError("no forms given")
    for a in forms:
        if a.degree != 1:
            raise ValueError("tail regularisation acts on one-forms")
        require_closed(a)
    leads = [normalize(laurent(a, check_closed=False).tail[0].coefficient(())) for a in forms]
    first = next((i for i, c in enumerate(leads) if c != 0), None)
    order = list(range(len(forms)))
    if first is None:
        return RegularizedTails(forms, order, "all leading tails vanish; forms returned unchanged")
    if len(forms) == 1:
        return RegularizedTails(forms, order)
    order = [first] + [i for i in order if i != first]
    base = forms[first]
    out = [base]
    for i in order[1:]:
        ratio = normalize(leads[i] / leads[first])
        new = forms[i] - base * ratio
        if not b_d(new).is_zero():
            raise NotClosedError(f"tail ratio {ex.to_text(ratio)} is not constant; "
                                 "redefined form is not closed")
        out.append(new)
    notice = "" if first == 0 else f"forms reordered as {order}"
    return RegularizedTails(out, order, notice)


# -- periods and fibrations --------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _panels(f, lo: float, hi: float, panels: int) -> float:
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    vals = f(x)
    if not np.all(np.isfinite(vals)):
        raise PoleError("integrand is not finite on the cycle")
    return float(np.dot(w, vals))


def integrate_line(f, lo: float, hi: float, target: float = 1e-10,
                   start: int = 8, limit: int = 4096) -> float:
    """Composite 16-point Gauss-Legendre, doubling panels until two passes agree."""
    panels = start
    prev = _panels(f, lo, hi, panels)
    while panels < limit:
        panels *= 2
        cur = _panels(f, lo, hi, panels)
        if abs(cur - prev) <= target:
            return cur
        prev = cur
    return prev


def default_base(m: BManifold) -> dict[str, float]:
    """Lower box corner, moved a quarter of the way along the singular side (off ``Z``)."""
    return {c: lo + (0.25 * (hi - lo) if c == m.singular else 0.0)
            for c, (lo, hi) in m.box().items()}


def _reject_poles(a: BForm, j: int, base: Mapping[str, float], params) -> None:
    """Raise if the ordinary ``dx_j`` coefficient has a pole on the ``x_j`` circle."""
    m = a.manifold
    name = m.coords[j]
    c = a.coefficient((j,))
    if m.is_b and j == m.s and c != 0:
        raise PoleError(f"cycle {name} meets Z and the form has a singular {m.basis_word(j)} part")
    if isinstance(a, BForm) and not m.is_b and c != 0:
        den = sympy.fraction(ex.substitute(c, params or {}))[1]
        if den.is_number:
            return
        lo, hi = m.box()[name]
        xs = np.linspace(lo, hi, 4097)
        fixed = {k: np.full_like(xs, v) for k, v in base.items()}
        fixed[name] = xs
        dv = np.asarray(ex.numpy_function(den, m.coords)(*[fixed[k] for k in m.coords]),
                        dtype=float) * np.ones_like(xs)
        if np.any(np.abs(dv) < 1e-12) or np.any(np.sign(dv[:-1]) * np.sign(dv[1:]) < 0):
            raise PoleError(f"coefficient of d{name} has a pole on the {name}-cycle")


def _line_function(form, j: int, base: Mapping[str, float], params):
    m = form.manifold
    ev = form.evaluator(params, ordinary=True)
    name = m.coords[j]

    def f(xs: np.ndarray) -> np.ndarray:
        pts = {c: np.full_like(xs, base[c]) for c in m.coords}
        pts[name] = xs
        return np.asarray(ev(pts).get((j,), 0.0), dtype=float) * np.ones_like(xs)

    return f


def periods(forms: Sequence, cycles: Sequence[str], params: Mapping[str, float] | None = None,
            base: Mapping[str, float] | None = None, target: float = 1e-10) -> np.ndarray:
    """``P[i, j] = integral of forms[i] over the coordinate circle cycles[j]``.

    ``forms`` may mix b-forms and desingularized forms; anything with an
    ``evaluator(params, ordinary=True)`` and a ``manifold`` works.
    """
    if not forms:
        raise ValueError("no forms given")
    m = forms[0].manifold
    base = {**default_base(m), **(base or {})}
    out = np.zeros((len(forms), len(cycles)))
    for j_col, name in enumerate(cycles):
        if m.period(name) is None:
            raise ValueError(f"{name} is not a periodic coordinate")
        j = m.index(name)
        P = m.period(name)
        for i, a in enumerate(forms):
            if a.degree != 1:
                raise ValueError("periods are defined for one-forms")
            if isinstance(a, BForm):
                _reject_poles(a, j, base, params)
            out[i, j_col] = integrate_line(_line_function(a, j, base, params), 0.0, P, target)
    return out


def _commensurate(row: np.ndarray, tol: float = 1e-8, max_den: int = 1000) -> float:
    """Largest ``c > 0`` with every entry an integer multiple of ``c``."""
    nz = [p for p in row if abs(p) > 1e-12]
    if not nz:
        raise CommensurabilityError("form has no nonzero period")
    ref = nz[0]
    fracs = []
    for p in nz:
        r = p / ref
        q = Fraction(r).limit_denominator(max_den)
        if abs(r - float(q)) > tol * max(1.0, abs(r)):
            raise CommensurabilityError(
                "commensurability required; general Tischler approximation not implemented")
        fracs.append(q)
    num = 0
    den = 1
    for q in fracs:
        num = math.gcd(num, q.numerator)
        den = den * q.denominator // math.gcd(den, q.denominator)
    return abs(ref) * num / den


@dataclass
class FibrationMap:
    forms: list
    cycles: list[str]
    period_matrix: np.ndarray
    generators: np.ndarray
    base: dict[str, float]
    params: dict[str, float]
    independent: StructureVerdict
    rank: int

    def __call__(self, point: Mapping[str, float]) -> np.ndarray:
        """Normalised integrals from the base point, reduced mod 1."""
        m = self.forms[0].manifold
        out = np.zeros(len(self.forms))
        for i, a in enumerate(self.forms):
            total = 0.0
            corner = dict(self.base)
            for j, c in enumerate(m.coords):
                lo, hi = corner[c], float(point[c])
                if hi != lo:
                    total += integrate_line(_line_function(a, j, corner, self.params), lo, hi,
                                            start=4, limit=64)
                corner[c] = hi
            out[i] = total / self.generators[i]
        return np.mod(out, 1.0)

    def to_json(self) -> dict:
        return {"holds": self.independent.holds and self.rank == len(self.forms),
                "rank": self.rank, "generators": [float(g) for g in self.generators],
                "periods": self.period_matrix.tolist(), "base": self.base,
                "independence": self.independent.to_json()}


def _coefficient_matrix(forms: Sequence, params, pts: Mapping[str, np.ndarray]) -> np.ndarray:
    m = forms[0].manifold
    N = len(next(iter(pts.values())))
    A = np.zeros((N, len(forms), m.dim))
    for i, a in enumerate(forms):
        vals = a.evaluator(params, ordinary=True)(pts)
        for (j,), v in vals.items():
            A[:, i, j] = v
    return A


def independence(forms: Sequence, params: Mapping[str, float] | None = None,
                 n: int = 16, tol: float = VERIFY_TOL) -> StructureVerdict:
    """Pointwise independence of one-forms: Gram determinant on the 16^n grid."""
    m = forms[0].manifold
    pts = m.grid(n)
    A = _coefficient_matrix(forms, params, pts)
    gram = np.linalg.det(A @ np.transpose(A, (0, 2, 1)))
    vol = np.sqrt(np.clip(gram, 0.0, None))
    bad = np.flatnonzero(~(vol >= tol))
    fails = [{c: float(pts[c][k]) for c in m.coords} for k in bad[:10]]
    witness = sympy.Float(float(np.nanmin(vol)) if vol.size else 0.0)
    return StructureVerdict(not bad.size, witness, fails, "sampled",
                            "" if not bad.size else "forms are dependent somewhere on the grid")


def fibration_map(forms: Sequence, cycles: Sequence[str], params: Mapping[str, float] | None = None,
                  base: Mapping[str, float] | None = None, samples: int = 32,
                  seed: int = 0) -> FibrationMap:
    m = forms[0].manifold
    base = {**default_base(m), **(base or {})}
    P = periods(forms, cycles, params, base)
    gens = np.array([_commensurate(row) for row in P])
    indep = independence(forms, params)
    pts = m.random_points(samples, seed)
    A = _coefficient_matrix(forms, params, pts)
    rank = int(min(np.linalg.matrix_rank(A[k], tol=1e-8) for k in range(samples)))
    return FibrationMap(list(forms), list(cycles), P, gens, base, dict(params or {}), indep, rank)
