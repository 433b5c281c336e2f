"""b^m-charts, b-forms, b-vector fields, b-metrics and their calculus.

A chart carries an optional defining function ``phi(t)`` of one coordinate
``t`` (the *singular* coordinate) and an order ``m``.  Forms are stored in
the b-coframe

    e^s = dt / phi(t)^m,    e^i = dx_i  (i != s)

and vector fields in the dual b-frame ``e_s = phi^m d/dt``, ``e_i = d/dx_i``.
All singular behaviour lives in ``e^s``; coefficients are required to be
smooth across ``Z = {phi = 0}``.  A chart without a defining function is an
ordinary chart and every basis element is an honest differential.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy

from . import expr as ex
from .expr import Expr, normalize


class PoleError(ValueError):
    """A coefficient divides by the defining function."""


class DegenerateError(ValueError):
    pass


class NotClosedError(ValueError):
    pass


class TransversalityError(ValueError):
    def __init__(self, message: str, order: int):
        super().__init__(message)
        self.order = order


# -- charts ------------------------------------------------------------------

@dataclass(frozen=True)
class BManifold:
    coords: tuple[str, ...]
    defining: Expr | None = None
    order: int = 1
    singular: str | None = None
    periods: tuple[tuple[str, Expr], ...] = ()
    params: tuple[str, ...] = ()
    bounds: tuple[tuple[str, tuple[float, float]], ...] = ()

    def __post_init__(self):
        coords = tuple(self.coords)
        if not coords or len(set(coords)) != len(coords):
            raise ValueError(f"coordinates must be distinct and non-empty: {coords}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "params", tuple(self.params))
        if set(self.params) & set(coords):
            raise ValueError("a name cannot be both a coordinate and a parameter")
        periods = self.periods.items() if isinstance(self.periods, Mapping) else self.periods
        periods = tuple(sorted((str(k), ex.as_expr(v)) for k, v in periods))
        for name, _ in periods:
            if name not in coords:
                raise ValueError(f"period given for unknown coordinate {name!r}")
        object.__setattr__(self, "periods", periods)
        bounds = self.bounds.items() if isinstance(self.bounds, Mapping) else self.bounds
        bounds = tuple(sorted((str(k), (float(v[0]), float(v[1]))) for k, v in bounds))
        object.__setattr__(self, "bounds", bounds)

        if self.defining is None:
            object.__setattr__(self, "singular", None)
            return
        phi = normalize(ex.as_expr(self.defining))
        object.__setattr__(self, "defining", phi)
        names = ex.free_names(phi)
        if self.singular is None:
            if len(names) != 1:
                raise ValueError("defining function must depend on exactly one coordinate")
            object.__setattr__(self, "singular", names.pop())
        elif names - {self.singular}:
            raise ValueError("defining function may depend only on the singular coordinate")
        if self.singular not in coords:
            raise ValueError(f"singular coordinate {self.singular!r} is not a chart coordinate")
        if int(self.order) < 1:
            raise ValueError("order must be at least 1")
        t = ex.symbol(self.singular)
        if normalize(phi.xreplace({t: 0})) != 0:
            raise ValueError("defining function must vanish at t = 0")
        slope = normalize(sympy.diff(phi, t).xreplace({t: 0}))
        if slope == 0:
            raise ValueError("defining function does not vanish transversally at t = 0")

    # basic data

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def is_b(self) -> bool:
        return self.defining is not None

    @property
    def s(self) -> int | None:
        return None if self.singular is None else self.coords.index(self.singular)

    @property
    def t(self) -> sympy.Symbol | None:
        return None if self.singular is None else ex.symbol(self.singular)

    @property
    def symbols(self) -> tuple[sympy.Symbol, ...]:
        return ex.symbols(self.coords)

    @property
    def declared(self) -> tuple[str, ...]:
        return self.coords + self.params

    def index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise KeyError(f"unknown coordinate {name!r}") from None

    def period(self, name: str) -> float | None:
        for k, v in self.periods:
            if k == name:
                return float(v)
        return None

    def box(self) -> dict[str, tuple[float, float]]:
        """Sampling box: declared bounds, else one period, else [-1, 1]."""
        out = {}
        given = dict(self.bounds)
        for c in self.coords:
            if c in given:
                out[c] = given[c]
            elif self.period(c) is not None:
                out[c] = (0.0, self.period(c))
            else:
                out[c] = (-1.0, 1.0)
        return out

    def smooth(self) -> "BManifold":
        """Same coordinates with the ordinary coframe."""
        if not self.is_b:
            return self
        return BManifold(self.coords, None, 1, None, self.periods, self.params, self.bounds)

    def singular_factor(self) -> Expr:
        """``phi^m``: the factor turning ``d/dt`` into the b-frame element."""
        return self.defining ** self.order if self.is_b else ex.ONE

    def basis_word(self, i: int) -> str:
        c = self.coords[i]
        if i != self.s:
            return f"d{c}"
        phi = ex.to_text(self.defining)
        if self.defining.is_Add or self.defining.is_Mul:
            phi = f"({phi})"
        power = f"^{self.order}" if self.order > 1 else ""
        return f"(d{c}/{phi}{power})"

    def frame_word(self, i: int) -> str:
        c = self.coords[i]
        if i != self.s:
            return f"d/d{c}"
        return f"{ex.to_text(self.singular_factor())}*d/d{c}"

    def derivation(self, c: Expr, i: int) -> Expr:
        """Apply the b-frame element ``e_i`` to a coefficient."""
        d = sympy.diff(c, ex.symbol(self.coords[i]))
        if i == self.s:
            d = self.singular_factor() * d
        return d

    def grid(self, n: int, exclude: float = 0.0) -> dict[str, np.ndarray]:
        """Uniform ``n^dim`` grid over :meth:`box`, flattened per coordinate."""
        axes = []
        for c, (lo, hi) in self.box().items():
            periodic = self.period(c) is not None and c not in dict(self.bounds)
            axes.append(np.linspace(lo, hi, n, endpoint=not periodic))
        mesh = np.meshgrid(*axes, indexing="ij")
        return {c: m.ravel() for c, m in zip(self.coords, mesh)}

    def random_points(self, n: int, seed: int = 0) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        return {c: rng.uniform(lo, hi, n) for c, (lo, hi) in self.box().items()}


def chart(coords: Sequence[str] | str, defining=None, order: int = 1, **kw) -> BManifold:
    """Convenience constructor: ``chart("x y z", "sin(z)", periods={...})``."""
    if isinstance(coords, str):
        coords = coords.replace(",", " ").split()
    return BManifold(tuple(coords), None if defining is None else ex.as_expr(defining), order, **kw)


# -- forms -------------------------------------------------------------------

def _sort_sign(idx: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Sign of the sorting permutation, or 0 on a repeated index."""
    if len(set(idx)) != len(idx):
        return 0, ()
    inversions = sum(1 for a, b in itertools.combinations(idx, 2) if a > b)
    return (-1) ** inversions, tuple(sorted(idx))


def _check_pole_free(m: BManifold, c: Expr) -> None:
    if not m.is_b or c.is_number:
        return
    _, den = sympy.fraction(c)
    if den.is_number or not den.has(m.t):
        return
    if normalize(den.xreplace({m.t: 0})) == 0:
        raise PoleError(
            f"coefficient {ex.to_text(c)} has a pole along {ex.to_text(m.defining)} = 0; "
            "singular behaviour belongs in the basis element"
        )


class BForm:
    """A degree-k form: ``{increasing index tuple: coefficient}`` over the b-coframe."""

    __slots__ = ("manifold", "degree", "coeffs")

    def __init__(self, manifold: BManifold, degree: int, coeffs: Mapping | None = None,
                 *, check: bool = True):
        self.manifold = manifold
        self.degree = int(degree)
        acc: dict[tuple[int, ...], Expr] = {}
        for key, c in (coeffs or {}).items():
            idx = self._index(key)
            if len(idx) != self.degree:
                raise ValueError(f"basis word {key!r} does not have degree {self.degree}")
            if any(i < 0 or i >= manifold.dim for i in idx):
                raise ValueError(f"basis word {key!r} out of range")
            sign, idx = _sort_sign(idx)
            if sign == 0:
                continue
            acc[idx] = acc.get(idx, ex.ZERO) + sign * ex.as_expr(c)
        out = {}
        for idx, c in sorted(acc.items()):
            c = normalize(c)
            if c != 0:
                if check:
                    _check_pole_free(manifold, c)
                out[idx] = c
        self.coeffs = out

    def _index(self, key) -> tuple[int, ...]:
        if isinstance(key, int):
            return (key,)
        if isinstance(key, str):
            key = key.strip()
            key = () if key in ("", "1") else tuple(self._coord_of(p.strip()) for p in key.split("^"))
        return tuple(k if isinstance(k, int) else self.manifold.index(k) for k in key)

    def _coord_of(self, token: str) -> str:
        coords = self.manifold.coords
        if token not in coords and token.startswith("d") and token[1:] in coords:
            return token[1:]
        return token

    # construction helpers

    @classmethod
    def zero(cls, manifold: BManifold, degree: int) -> "BForm":
        return cls(manifold, degree, {})

    @classmethod
    def function(cls, manifold: BManifold, f) -> "BForm":
        return cls(manifold, 0, {(): f})

    @classmethod
    def basis(cls, manifold: BManifold, *names) -> "BForm":
        return cls(manifold, len(names), {tuple(names): 1})

    # algebra

    def _same(self, other: "BForm") -> None:
        if not isinstance(other, BForm):
            raise TypeError("expected a BForm")
        if other.manifold != self.manifold:
            raise ValueError("forms live on different charts")

    def __add__(self, other: "BForm") -> "BForm":
        self._same(other)
        if other.degree != self.degree:
            raise ValueError("cannot add forms of different degree")
        coeffs = dict(self.coeffs)
        for k, c in other.coeffs.items():
            coeffs[k] = coeffs.get(k, ex.ZERO) + c
        return BForm(self.manifold, self.degree, coeffs)

    def __neg__(self) -> "BForm":
        return BForm(self.manifold, self.degree, {k: -c for k, c in self.coeffs.items()}, check=False)

    def __sub__(self, other: "BForm") -> "BForm":
        return self + (-other)

    def __mul__(self, scalar) -> "BForm":
        if isinstance(scalar, BForm):
            return wedge(self, scalar)
        s = ex.as_expr(scalar)
        return BForm(self.manifold, self.degree, {k: s * c for k, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __xor__(self, other: "BForm") -> "BForm":
        return wedge(self, other)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BForm)
            and other.manifold == self.manifold
            and other.degree == self.degree
            and other.coeffs == self.coeffs
        )

    def __hash__(self):
        return hash((self.manifold, self.degree, tuple(self.coeffs.items())))

    def coefficient(self, key) -> Expr:
        sign, idx = _sort_sign(self._index(key))
        return sign * self.coeffs.get(idx, ex.ZERO)

    def is_zero(self) -> bool:
        """Symbolic zero test with sampled fallback per coefficient."""
        return all(ex.equivalent(c, 0) for c in self.coeffs.values())

    def equivalent(self, other: "BForm") -> bool:
        self._same(other)
        if self.degree != other.degree:
            return False
        keys = set(self.coeffs) | set(other.coeffs)
        return all(ex.equivalent(self.coefficient(k), other.coefficient(k)) for k in keys)

    def subs(self, values: Mapping[str, object]) -> "BForm":
        return BForm(self.manifold, self.degree,
                     {k: ex.substitute(c, values) for k, c in self.coeffs.items()})

    def free_params(self) -> set[str]:
        names = set()
        for c in self.coeffs.values():
            names |= ex.free_names(c)
        return names - set(self.manifold.coords)

    # coframe changes

    def to_ordinary(self) -> "BForm":
        """Rewrite ``e^s`` as ``dt / phi^m``; coefficients may then carry poles."""
        m = self.manifold
        if not m.is_b:
            return self
        factor = 1 / m.singular_factor()
        coeffs = {k: (c * factor if m.s in k else c) for k, c in self.coeffs.items()}
        return BForm(m.smooth(), self.degree, coeffs, check=False)

    @classmethod
    def from_ordinary(cls, form: "BForm", manifold: BManifold) -> "BForm":
        if not manifold.is_b:
            return BForm(manifold, form.degree, form.coeffs, check=False)
        factor = manifold.singular_factor()
        coeffs = {k: (c * factor if manifold.s in k else c) for k, c in form.coeffs.items()}
        return cls(manifold, form.degree, coeffs)

    # numerics

    def evaluator(self, params: Mapping[str, float] | None = None, *, ordinary: bool = False):
        """Vectorized ``points -> {key: values}``; points map coordinate names to arrays."""
        form = self.to_ordinary() if ordinary else self
        names = self.manifold.coords
        funcs = {k: ex.numpy_function(ex.substitute(c, params or {}), names)
                 for k, c in form.coeffs.items()}

        def evaluate(points: Mapping[str, np.ndarray]) -> dict[tuple[int, ...], np.ndarray]:
            arrays = [np.asarray(points[c], dtype=float) for c in names]
            return {k: f(*arrays) for k, f in funcs.items()}

        return evaluate

    # text

    def __str__(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        for k, c in self.coeffs.items():
            word = "^".join(self.manifold.basis_word(i) for i in k)
            ctext = ex.to_text(c)
            if not word:
                parts.append(ctext)
            elif c == 1:
                parts.append(word)
            else:
                parts.append(f"({ctext})*{word}")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"BForm[{self.degree}]({self})"


# -- vector fields, metrics, bivectors ---------------------------------------

class BVectorField:
    """Components in the b-frame ``(..., phi^m d/dt, ..., d/dx_i, ...)``."""

    __slots__ = ("manifold", "coeffs")

    def __init__(self, manifold: BManifold, coeffs: Sequence | Mapping):
        self.manifold = manifold
        if isinstance(coeffs, Mapping):
            comps = [ex.ZERO] * manifold.dim
            for k, v in coeffs.items():
                comps[k if isinstance(k, int) else manifold.index(k)] = ex.as_expr(v)
        else:
            comps = [ex.as_expr(v) for v in coeffs]
        if len(comps) != manifold.dim:
            raise ValueError(f"expected {manifold.dim} components, got {len(comps)}")
        self.coeffs = tuple(normalize(c) for c in comps)
        for c in self.coeffs:
            _check_pole_free(manifold, c)

    def __getitem__(self, i) -> Expr:
        return self.coeffs[i if isinstance(i, int) else self.manifold.index(i)]

    def __add__(self, other: "BVectorField") -> "BVectorField":
        return BVectorField(self.manifold, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __mul__(self, scalar) -> "BVectorField":
        s = ex.as_expr(scalar)
        return BVectorField(self.manifold, [s * c for c in self.coeffs])

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return isinstance(other, BVectorField) and other.manifold == self.manifold \
            and other.coeffs == self.coeffs

    def __hash__(self):
        return hash((self.manifold, self.coeffs))

    def equivalent(self, other: "BVectorField") -> bool:
        return all(ex.equivalent(a, b) for a, b in zip(self.coeffs, other.coeffs))

    def subs(self, values: Mapping[str, object]) -> "BVectorField":
        return BVectorField(self.manifold, [ex.substitute(c, values) for c in self.coeffs])

    def to_ordinary(self) -> tuple[Expr, ...]:
        """Components against ``d/dx_i``: the singular slot is multiplied by ``phi^m``."""
        m = self.manifold
        return tuple(normalize(c * m.singular_factor()) if i == m.s else c
                     for i, c in enumerate(self.coeffs))

    def evaluator(self, params: Mapping[str, float] | None = None, *, ordinary: bool = False):
        comps = self.to_ordinary() if ordinary else self.coeffs
        names = self.manifold.coords
        funcs = [ex.numpy_function(ex.substitute(c, params or {}), names) for c in comps]

        def evaluate(points: Mapping[str, np.ndarray]) -> np.ndarray:
            arrays = [np.asarray(points[c], dtype=float) for c in names]
            return np.stack([f(*arrays) for f in funcs], axis=-1)

        return evaluate

    def __str__(self) -> str:
        parts = []
        for i, c in enumerate(self.coeffs):
            if c != 0:
                word = self.manifold.frame_word(i)
                parts.append(word if c == 1 else f"({ex.to_text(c)})*{word}")
        return " + ".join(parts) if parts else "0"

    def __repr__(self) -> str:
        return f"BVectorField({self})"


class BMetric:
    """Symmetric matrix of expressions in the b-frame."""

    __slots__ = ("manifold", "matrix")

    def __init__(self, manifold: BManifold, matrix):
        n = manifold.dim
        mat = sympy.Matrix(matrix).applyfunc(lambda v: normalize(ex.as_expr(v)))
        if mat.shape != (n, n):
            raise ValueError(f"metric must be {n}x{n}")
        for i in range(n):
            for j in range(i + 1, n):
                if normalize(mat[i, j] - mat[j, i]) != 0:
                    raise ValueError("metric matrix is not symmetric")
        self.manifold = manifold
        self.matrix = mat

    @classmethod
    def diagonal(cls, manifold: BManifold, entries) -> "BMetric":
        return cls(manifold, sympy.diag(*[ex.as_expr(e) for e in entries]))

    @classmethod
    def identity(cls, manifold: BManifold) -> "BMetric":
        return cls(manifold, sympy.eye(manifold.dim))

    def subs(self, values) -> "BMetric":
        return BMetric(self.manifold, self.matrix.applyfunc(lambda v: ex.substitute(v, values)))

    def evaluator(self, params: Mapping[str, float] | None = None):
        n = self.manifold.dim
        names = self.manifold.coords
        funcs = [[ex.numpy_function(ex.substitute(self.matrix[i, j], params or {}), names)
                  for j in range(n)] for i in range(n)]

        def evaluate(points):
            arrays = [np.asarray(points[c], dtype=float) for c in names]
            return np.stack([np.stack([f(*arrays) for f in row], axis=-1) for row in funcs], axis=-2)

        return evaluate

    def positive_definite(self, params: Mapping[str, float] | None = None,
                          samples: int = 64, seed: int = 0) -> bool:
        """Leading principal minors positive at random points of the box."""
        pts = self.manifold.random_points(samples, seed)
        mats = self.evaluator(params)(pts)
        ok = np.all(np.isfinite(mats), axis=(-1, -2))
        mats = mats[ok]
        for k in range(1, self.manifold.dim + 1):
            if np.any(np.linalg.det(mats[:, :k, :k]) <= 0):
                return False
        return True


class BBivector:
    """Antisymmetric table ``{(i, j): coefficient}`` with ``i < j`` over the b-frame."""

    __slots__ = ("manifold", "coeffs")

    def __init__(self, manifold: BManifold, coeffs: Mapping):
        out = {}
        for (i, j), c in coeffs.items():
            if i == j:
                if normalize(ex.as_expr(c)) != 0:
                    raise ValueError("bivector diagonal must vanish")
                continue
            c = ex.as_expr(c)
            if i > j:
                i, j, c = j, i, -c
            out[(i, j)] = out.get((i, j), ex.ZERO) + c
        self.manifold = manifold
        self.coeffs = {k: normalize(v) for k, v in sorted(out.items()) if normalize(v) != 0}

    def matrix(self, ordinary: bool = False) -> sympy.Matrix:
        n = self.manifold.dim
        P = sympy.zeros(n, n)
        s = self.manifold.s
        for (i, j), c in self.coeffs.items():
            if ordinary and s in (i, j):
                c = normalize(c * self.manifold.singular_factor())
            P[i, j] = c
            P[j, i] = -c
        return P

    def __str__(self) -> str:
        parts = []
        for (i, j), c in self.coeffs.items():
            word = f"{self.manifold.frame_word(i)}^{self.manifold.frame_word(j)}"
            parts.append(word if c == 1 else f"({ex.to_text(c)})*{word}")
        return " + ".join(parts) if parts else "0"


# -- calculus ----------------------------------------------------------------

def wedge(a: BForm, b: BForm) -> BForm:
    a._same(b)
    acc: dict[tuple[int, ...], Expr] = {}
    for I, ca in a.coeffs.items():
        for J, cb in b.coeffs.items():
            sign, K = _sort_sign(I + J)
            if sign:
                acc[K] = acc.get(K, ex.ZERO) + sign * ca * cb
    return BForm(a.manifold, a.degree + b.degree, acc)


def b_d(a: BForm) -> BForm:
    """Exterior derivative in the b-coframe; the basis elements are closed."""
    m = a.manifold
    acc: dict[tuple[int, ...], Expr] = {}
    for I, c in a.coeffs.items():
        for j in range(m.dim):
            if j in I:
                continue
            dc = m.derivation(c, j)
            if dc == 0:
                continue
            sign, K = _sort_sign((j,) + I)
            acc[K] = acc.get(K, ex.ZERO) + sign * dc
    return BForm(m, a.degree + 1, acc)


def interior(X: BVectorField, a: BForm) -> BForm:
    if X.manifold != a.manifold:
        raise ValueError("field and form live on different charts")
    if a.degree == 0:
        raise ValueError("cannot contract a function")
    acc: dict[tuple[int, ...], Expr] = {}
    for I, c in a.coeffs.items():
        for p, j in enumerate(I):
            if X.coeffs[j] == 0:
                continue
            K = I[:p] + I[p + 1:]
            acc[K] = acc.get(K, ex.ZERO) + (-1) ** p * X.coeffs[j] * c
    return BForm(a.manifold, a.degree - 1, acc)


def pair(a: BForm, X: BVectorField) -> Expr:
    """``a(X)`` for a one-form."""
    if a.degree != 1:
        raise ValueError("pairing needs a one-form")
    return interior(X, a).coefficient(())


def flat(g: BMetric, X: BVectorField) -> BForm:
    n = g.manifold.dim
    return BForm(g.manifold, 1, {(j,): sum(g.matrix[i, j] * X.coeffs[i] for i in range(n))
                                 for j in range(n)})


def _inverse(mat: sympy.Matrix, what: str) -> sympy.Matrix:
    det = normalize(mat.det(method="berkowitz"))
    if det == 0:
        raise DegenerateError(f"{what} matrix is singular")
    adj = mat.adjugate(method="berkowitz")
    return adj.applyfunc(lambda v: normalize(v / det))


def sharp(g: BMetric, a: BForm) -> BVectorField:
    if a.degree != 1:
        raise ValueError("sharp needs a one-form")
    n = g.manifold.dim
    inv = _inverse(g.matrix, "metric")
    vec = [a.coefficient((j,)) for j in range(n)]
    return BVectorField(g.manifold, [sum(inv[i, j] * vec[j] for j in range(n)) for i in range(n)])


# -- pullback ----------------------------------------------------------------

@dataclass(frozen=True)
class CoordinateMap:
    """``source -> target`` given by target coordinates as source expressions."""

    source: BManifold
    target: BManifold
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(normalize(ex.as_expr(c)) for c in self.components)
        if len(comps) != self.target.dim:
            raise ValueError(f"map needs {self.target.dim} components, got {len(comps)}")
        allowed = set(self.source.coords) | set(self.source.params) | set(self.target.params)
        for c in comps:
            extra = ex.free_names(c) - allowed
            if extra:
                raise ValueError(f"map component uses unknown symbols {sorted(extra)}")
        object.__setattr__(self, "components", comps)

    def substitution(self) -> dict:
        return {ex.symbol(n): c for n, c in zip(self.target.coords, self.components)}

    def jacobian(self) -> sympy.Matrix:
        return sympy.Matrix([[sympy.diff(F, u) for u in self.source.symbols] for F in self.components])


def compose(outer: CoordinateMap, inner: CoordinateMap) -> CoordinateMap:
    """``outer o inner``; ``inner.target`` must be ``outer.source`` (as coordinates)."""
    if inner.target.coords != outer.source.coords:
        raise ValueError("maps are not composable")
    sub = inner.substitution()
    return CoordinateMap(inner.source, outer.target, tuple(c.xreplace(sub) for c in outer.components))


def pole_order(c: Expr, manifold: BManifold, limit: int = 16) -> int:
    """Order of the pole of ``c`` along the chart's ``Z`` (0 if none)."""
    if not manifold.is_b:
        return 0
    t, phi = manifold.t, manifold.defining
    _, den = sympy.fraction(normalize(c))
    order = 0
    while order < limit and not den.is_number and den.has(t) \
            and normalize(den.xreplace({t: 0})) == 0:
        den = sympy.fraction(normalize(den / phi))[0]
        order += 1
    return order


@dataclass
class PullbackResult:
    form: BForm
    ordinary: BForm
    poles: dict[tuple[int, ...], int] = field(default_factory=dict)
    residual_poles: dict[tuple[int, ...], int] = field(default_factory=dict)

    @property
    def pole_free(self) -> bool:
        return not self.residual_poles

    def describe(self) -> str:
        if not self.residual_poles:
            return str(self.form)
        worst = max(self.residual_poles.values())
        return f"{self.form}  [pole of order {worst}]"


def pullback(phi: CoordinateMap, a: BForm) -> PullbackResult:
    """Pull ``a`` back along ``phi``.

    The target b-slot is first expanded into the ordinary coframe, then
    coordinates are substituted and differentials pulled back through the
    Jacobian minors.  If the source chart designates a defining function the
    result is re-expressed in the source b-coframe; poles that survive that
    step are reported, not raised.
    """
    if a.manifold.coords != phi.target.coords:
        raise ValueError("form does not live on the target chart")
    src = phi.source
    ordinary = a.to_ordinary()
    sub = phi.substitution()
    J = phi.jacobian()
    k = a.degree
    acc: dict[tuple[int, ...], Expr] = {}
    for I, c in ordinary.coeffs.items():
        c_src = c.xreplace(sub)
        for K in itertools.combinations(range(src.dim), k):
            minor = J.extract(list(I), list(K)).det() if k else ex.ONE
            if minor != 0:
                acc[K] = acc.get(K, ex.ZERO) + c_src * minor
    plain = BForm(src.smooth(), k, acc, check=False)
    if not src.is_b:
        return PullbackResult(plain, plain)
    poles = {K: pole_order(c, src) for K, c in plain.coeffs.items()}
    poles = {K: p for K, p in poles.items() if p}
    residual = {}
    for K, p in poles.items():
        r = p - src.order if src.s in K else p
        if r > 0:
            residual[K] = r
    if residual:
        return PullbackResult(plain, plain, poles, residual)
    return PullbackResult(BForm.from_ordinary(plain, src), plain, poles, {})


def identity_map(m: BManifold) -> CoordinateMap:
    return CoordinateMap(m, m, m.symbols)


# -- Laurent decomposition ---------------------------------------------------

@dataclass
class Laurent:
    tail: list[BForm]
    rest: BForm

    def reassemble(self) -> BForm:
        m = self.rest.manifold
        es = BForm.basis(m, m.s)
        total = self.rest
        for i, tail in enumerate(self.tail):
            total = total + wedge(es, tail) * m.t**i
        return total


def require_closed(a: BForm) -> None:
    if not b_d(a).is_zero():
        raise NotClosedError("form is not closed")


def laurent(a: BForm, *, check_closed: bool = True) -> Laurent:
    """Split ``a = sum_i t^i e^s ^ tail_i + rest`` with ``i < m``.

    ``tail_i`` is the i-th Taylor coefficient at ``t = 0`` of the
    ``e^s``-component, so it depends on the transverse coordinates only.
    """
    m = a.manifold
    if not m.is_b:
        raise ValueError("Laurent decomposition needs a b-chart")
    if a.degree == 0:
        raise ValueError("functions have no singular part")
    if check_closed:
        require_closed(a)
    t, s = m.t, m.s
    tails = []
    for i in range(m.order):
        coeffs = {}
        for I, c in a.coeffs.items():
            if s not in I:
                continue
            p = I.index(s)
            taylor = sympy.diff(c, t, i).xreplace({t: 0}) / math.factorial(i)
            coeffs[I[:p] + I[p + 1:]] = (-1) ** p * taylor
        tails.append(BForm(m, a.degree - 1, coeffs))
    es = BForm.basis(m, s)
    rest = a
    for i, tail in enumerate(tails):
        rest = rest - wedge(es, tail) * t**i
    return Laurent(tails, rest)


# -- dual bivector -----------------------------------------------------------

def form_matrix(w: BForm) -> sympy.Matrix:
    if w.degree != 2:
        raise ValueError("expected a two-form")
    n = w.manifold.dim
    W = sympy.zeros(n, n)
    for (i, j), c in w.coeffs.items():
        W[i, j] = c
        W[j, i] = -c
    return W


def pfaffian(A: sympy.Matrix) -> Expr:
    n = A.shape[0]
    if n == 0:
        return ex.ONE
    if n % 2:
        return ex.ZERO
    total = ex.ZERO
    for j in range(1, n):
        if A[0, j] == 0:
            continue
        keep = [k for k in range(n) if k not in (0, j)]
        total += (-1) ** (j + 1) * A[0, j] * pfaffian(A.extract(keep, keep))
    return total


@dataclass
class Transversality:
    order: int
    holds: bool
    method: str
    top_coefficient: Expr


def _nonvanishing_on_slice(e: Expr, m: BManifold, params, n: int = 10, tol: float = 1e-8) -> bool:
    """``|e| >= tol`` on an ``n^(dim-1)`` grid of ``{t = 0}``."""
    free = ex.free_names(e) - set(m.coords) - set(params or {})
    if free:
        raise ex.UnboundSymbolError(f"parameters needed for sampling: {sorted(free)}")
    pts = dict(m.grid(n))
    pts[m.singular] = np.zeros_like(next(iter(pts.values())))
    f = ex.numpy_function(ex.substitute(e, params or {}), m.coords)
    vals = f(*[pts[c] for c in m.coords])
    vals = vals[np.isfinite(vals)]
    return vals.size > 0 and bool(np.min(np.abs(vals)) >= tol)


def transversality(P: BBivector, params=None) -> Transversality:
    """Vanishing order of the top power of ``P`` (ordinary frame) along ``Z``."""
    m = P.manifold
    top = normalize(pfaffian(P.matrix(ordinary=True)))
    if not m.is_b:
        return Transversality(0, False, "symbolic", top)
    t = m.t
    for k in range(0, 8):
        dk = normalize(sympy.diff(top, t, k).xreplace({t: 0}))
        if dk != 0:
            break
    else:
        return Transversality(8, False, "symbolic", top)
    if k != 1:
        return Transversality(k, False, "symbolic", top)
    if not ex.free_names(dk) - set(m.params):
        return Transversality(1, True, "symbolic", top)
    ok = _nonvanishing_on_slice(dk, m, params)
    return Transversality(1, ok, "sampled", top)


def dual_bivector(w: BForm, check_transversality: bool = False, params=None) -> BBivector:
    """Invert the coefficient matrix of ``w``: ``Pi = -W^{-1}`` in the b-frame."""
    m = w.manifold
    if m.dim % 2:
        raise ValueError("dual bivector needs an even-dimensional chart")
    W = form_matrix(w)
    P = -_inverse(W, "two-form")
    n = m.dim
    bivector = BBivector(m, {(i, j): P[i, j] for i in range(n) for j in range(i + 1, n)})
    if check_transversality:
        report = transversality(bivector, params)
        if not report.holds:
            raise TransversalityError(
                f"top power of the bivector vanishes to order {report.order} along Z", report.order)
    return bivector


# -- numeric exterior derivative (independent of the symbolic path) ----------

def numeric_d(coeff_fn, n: int, degree: int, points: np.ndarray, h: float = 1e-5) -> dict:
    """Central-difference exterior derivative of an ordinary form.

    ``coeff_fn(points)`` returns ``{key: values}`` for an ``(N, n)`` array.
    """
    out: dict[tuple[int, ...], np.ndarray] = {}
    derivs = {}
    for j in range(n):
        step = np.zeros(n)
        step[j] = h
        plus, minus = coeff_fn(points + step), coeff_fn(points - step)
        for key in set(plus) | set(minus):
            derivs[(j, key)] = (plus.get(key, 0.0) - minus.get(key, 0.0)) / (2 * h)
    for (j, key), v in derivs.items():
        sign, K = _sort_sign((j,) + key)
        if sign:
            out[K] = out.get(K, 0.0) + sign * v
    return out
