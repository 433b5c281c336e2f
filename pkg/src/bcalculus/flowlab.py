"""Streamlines of b-vector fields, orbit classification and Poincare returns.

A b-field is an ordinary smooth field once the singular slot is multiplied
out (``phi^m d/dt``), so trajectories are computed with scipy's adaptive
Dormand-Prince 5(4) pair and its dense output.  ``Z`` stays invariant because
the normal component vanishes there; nothing special happens at ``Z``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from . import expr as ex
from .bgeom import BManifold, BVectorField

DEFAULT_TOL = 1e-9
DEFAULT_TOL_RETURN = 1e-5
DEFAULT_TOL_Z = 1e-4
DEFAULT_TMAX = 1000.0


def ordinary_rhs(X: BVectorField, params: Mapping[str, float] | None = None):
    """``f(t, y)`` for the ordinary field underlying ``X``."""
    m = X.manifold
    fns = [ex.math_function(ex.substitute(c, params or {}), m.coords) for c in X.to_ordinary()]
    free = set().union(*(ex.free_names(ex.substitute(c, params or {})) for c in X.to_ordinary()))
    free -= set(m.coords)
    if free:
        raise ex.UnboundSymbolError(f"integration needs values for {sorted(free)} (use --param)")

    def rhs(t, y):
        return [f(*y) for f in fns]

    return rhs


@dataclass
class Branch:
    """One time direction of a trajectory."""

    t: np.ndarray
    y: np.ndarray
    sol: object
    status: str  # "ok" | "left_domain" | "failed"
    message: str = ""

    @property
    def t_end(self) -> float:
        return float(self.t[-1])


@dataclass
class OrbitClass:
    kind: str  # periodic | singular_periodic | left_domain | unresolved
    period: float | None = None
    forward_limit: dict | None = None
    backward_limit: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"class": self.kind, "period": self.period, "forward_limit": self.forward_limit,
                "backward_limit": self.backward_limit, "diagnostics": self.diagnostics,
                "note": "finite-horizon surrogate for limits as t -> +-infinity"
                if self.kind == "singular_periodic" else ""}


@dataclass
class Trajectory:
    field: BVectorField
    seed: np.ndarray
    tol: float
    params: dict
    forward: Branch
    backward: Branch
    classification: OrbitClass | None = None

    @property
    def manifold(self) -> BManifold:
        return self.field.manifold

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([self.backward.t[::-1][:-1], self.forward.t])

    @property
    def unwrapped(self) -> np.ndarray:
        return np.concatenate([self.backward.y[::-1][:-1], self.forward.y])

    @property
    def points(self) -> np.ndarray:
        """Samples with periodic coordinates wrapped into the box."""
        return wrap(self.manifold, self.unwrapped)[0]

    @property
    def windings(self) -> np.ndarray:
        return wrap(self.manifold, self.unwrapped)[1]

    def at(self, t: float) -> np.ndarray:
        branch = self.forward if t >= 0 else self.backward
        return np.asarray(branch.sol(t), dtype=float)

    def dist_to_z(self, pts: np.ndarray | None = None) -> np.ndarray:
        return defining_values(self.manifold, self.unwrapped if pts is None else pts, self.params)

    def write_csv(self, path) -> None:
        m = self.manifold
        pts = self.points
        dz = self.dist_to_z()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + list(m.coords) + ["dist_to_Z"])
            for t, p, d in zip(self.times, pts, dz):
                w.writerow([format(float(t), ".17g")] + [format(float(v), ".17g") for v in p]
                           + [format(float(d), ".17g")])


def wrap(m: BManifold, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.array(y, dtype=float, copy=True)
    turns = np.zeros_like(y, dtype=int)
    box = m.box()
    for i, c in enumerate(m.coords):
        P = m.period(c)
        if P is None:
            continue
        lo = box[c][0]
        k = np.floor((y[..., i] - lo) / P)
        y[..., i] -= k * P
        turns[..., i] = k.astype(int)
    return y, turns


def defining_values(m: BManifold, pts: np.ndarray, params=None) -> np.ndarray:
    """``|phi|`` along points (infinite on an ordinary chart, which has no Z)."""
    pts = np.atleast_2d(pts)
    if not m.is_b:
        return np.full(len(pts), np.inf)
    f = ex.numpy_function(ex.substitute(m.defining, params or {}), m.coords)
    return np.abs(np.asarray(f(*pts.T), dtype=float) * np.ones(len(pts)))


def _domain_events(m: BManifold):
    events = []
    box = m.box()
    for i, c in enumerate(m.coords):
        if m.period(c) is not None and c not in dict(m.bounds):
            continue
        lo, hi = box[c]
        for edge, sgn in ((lo, 1.0), (hi, -1.0)):
            def ev(t, y, i=i, edge=edge, sgn=sgn):
                return sgn * (y[i] - edge)
            ev.terminal = True
            events.append(ev)
    return events


def _branch(rhs, m: BManifold, seed: np.ndarray, t_end: float, tol: float,
            bounded: bool, step: float | None = None) -> Branch:
    if t_end == 0:
        return Branch(np.array([0.0]), seed[None, :].copy(), lambda t: seed.copy(), "ok")
    events = _domain_events(m) if bounded else None
    opts = {"rtol": tol, "atol": tol}
    if step is not None:
        # every step accepted: the pair runs as a fixed-step fifth-order method
        opts = {"rtol": 1e10, "atol": 1e10, "first_step": step, "max_step": step}
    res = solve_ivp(rhs, (0.0, t_end), seed, method="RK45", dense_output=True,
                    events=events, **opts)
    y = res.y.T
    status = "ok"
    if res.status == 1:
        status = "left_domain"
    elif res.status == -1 or not np.all(np.isfinite(y)):
        status = "left_domain" if "step size" in res.message.lower() else "failed"
        good = np.all(np.isfinite(y), axis=1)
        y, t = y[good], res.t[good]
        return Branch(t, y, res.sol, status, res.message)
    return Branch(res.t, y, res.sol, status, res.message)


def integrate(X: BVectorField, seed: Sequence[float] | Mapping[str, float],
              t_span: tuple[float, float] = (-DEFAULT_TMAX, DEFAULT_TMAX), tol: float = DEFAULT_TOL,
              params: Mapping[str, float] | None = None, bounded: bool = False,
              step: float | None = None) -> Trajectory:
    """Trajectory through ``seed`` over ``t_span`` (``t- <= 0 <= t+``).

    With ``bounded`` the walls of the box in non-periodic coordinates end the
    integration and mark it ``left_domain``.  ``step`` switches off error
    control and uses that fixed step size instead of ``tol``.
    """
    m = X.manifold
    if isinstance(seed, Mapping):
        seed = [seed[c] for c in m.coords]
    seed = np.asarray(seed, dtype=float)
    if seed.shape != (m.dim,):
        raise ValueError(f"seed needs {m.dim} coordinates")
    lo, hi = t_span
    if lo > 0 or hi < 0:
        raise ValueError("time span must contain 0")
    rhs = ordinary_rhs(X, params)
    fwd = _branch(rhs, m, seed, float(hi), tol, bounded, step)
    bwd = _branch(rhs, m, seed, float(lo), tol, bounded, step)
    return Trajectory(X, seed, tol, dict(params or {}), fwd, bwd)


# -- classification ----------------------------------------------------------

def _torus_distance(m: BManifold, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(np.asarray(a, dtype=float) - b)
    for i, c in enumerate(m.coords):
        P = m.period(c)
        if P is not None:
            d[..., i] = np.mod(d[..., i], P)
            d[..., i] = np.minimum(d[..., i], P - d[..., i])
    return np.sqrt(np.sum(d ** 2, axis=-1))


def _limit_box(m: BManifold, pts: np.ndarray) -> dict:
    wrapped = wrap(m, pts)[0]
    return {c: [float(wrapped[:, i].min()), float(wrapped[:, i].max())]
            for i, c in enumerate(m.coords)}


def _first_return(tr: Trajectory, tol_return: float, n: int):
    """Refined first near-return time of the forward branch, or ``None``."""
    m = tr.manifold
    br = tr.forward
    if br.t_end <= 0:
        return None, math.inf
    ts = np.linspace(0.0, br.t_end, n)
    d = _torus_distance(m, br.sol(ts).T, tr.seed)
    away = np.flatnonzero(d > 10 * tol_return)
    if not away.size:
        return None, math.inf
    best = math.inf
    for k in range(max(away[0], 1), n - 1):
        if not (d[k] <= d[k - 1] and d[k] <= d[k + 1]):
            continue
        if d[k] > 0.1 * max(1.0, float(d.max())):
            continue
        res = minimize_scalar(lambda s: float(_torus_distance(m, br.sol(s), tr.seed)),
                              bounds=(ts[k - 1], ts[k + 1]), method="bounded",
                              options={"xatol": 1e-12})
        best = min(best, float(res.fun))
        if res.fun < tol_return:
            return float(res.x), float(res.fun)
    return None, best


def classify(tr: Trajectory, tol_return: float = DEFAULT_TOL_RETURN,
             tol_z: float = DEFAULT_TOL_Z, min_span: float = 0.0,
             resolution: int = 20001) -> OrbitClass:
    """Periodic, singular periodic, left the chart, or unresolved.

    Periodic needs a refined return to the seed within ``tol_return`` and,
    when the horizon allows, a second return at twice the period.  Singular
    periodic needs ``|phi| < tol_z`` at both ends with ``|phi|`` non-increasing
    over the last quarter of each branch.
    """
    m = tr.manifold
    span = tr.forward.t_end - tr.backward.t_end
    diag: dict = {"horizon": [tr.backward.t_end, tr.forward.t_end]}
    if "left_domain" in (tr.forward.status, tr.backward.status):
        out = OrbitClass("left_domain", diagnostics=diag)
        tr.classification = out
        return out
    if span < min_span:
        out = OrbitClass("unresolved", diagnostics={**diag, "reason": "horizon too short"})
        tr.classification = out
        return out

    n = max(resolution, 8 * len(tr.forward.t))
    T, dist = _first_return(tr, tol_return, n)
    diag["return_distance"] = None if math.isinf(dist) else dist
    if T is not None:
        consistent = True
        if 2 * T <= tr.forward.t_end:
            consistent = bool(_torus_distance(m, tr.forward.sol(2 * T), tr.seed) < 10 * tol_return)
        diag["recurrence_checked"] = 2 * T <= tr.forward.t_end
        if consistent:
            out = OrbitClass("periodic", T, diagnostics=diag)
            tr.classification = out
            return out

    if m.is_b:
        ends = []
        for br in (tr.forward, tr.backward):
            tail = br.y[int(0.75 * (len(br.y) - 1)):]
            dz = defining_values(m, tail, tr.params)
            # increases below the integrator tolerance are noise, not growth
            monotone = bool(np.all(np.diff(dz) <= max(1e-12, 10 * tr.tol)))
            ends.append((float(dz[-1]), monotone, tail))
        diag["dist_to_Z_end"] = [ends[0][0], ends[1][0]]
        diag["monotone_decay"] = [ends[0][1], ends[1][1]]
        # log-linear fit over the asymptotic window, above the integrator's noise floor
        for label, br in (("forward_decay_rate", tr.forward), ("backward_decay_rate", tr.backward)):
            dz = defining_values(m, br.y, tr.params)
            tt = np.abs(br.t)
            ok = (dz > 100 * tr.tol) & (dz < 1e-2)
            if ok.sum() >= 2 and np.ptp(tt[ok]) > 0:
                diag[label] = float(np.polyfit(tt[ok], np.log(dz[ok]), 1)[0])
        if all(d < tol_z and mono for d, mono, _ in ends):
            out = OrbitClass("singular_periodic", None, _limit_box(m, ends[0][2]),
                             _limit_box(m, ends[1][2]), diag)
            tr.classification = out
            return out
    out = OrbitClass("unresolved", diagnostics=diag)
    tr.classification = out
    return out


# -- Poincare sections -------------------------------------------------------

@dataclass
class ReturnRecord:
    seed: list[float]
    times: list[float]
    points: list[list[float]]
    no_return: bool = False

    def to_json(self) -> dict:
        return {"seed": self.seed, "times": self.times, "points": self.points,
                "no_return": self.no_return}


@dataclass
class PoincareResult:
    coordinate: str
    value: float
    records: list[ReturnRecord]
    dispersion: dict[str, float]
    distinct: int

    def to_json(self) -> dict:
        return {"holds": all(not r.no_return for r in self.records),
                "section": f"{self.coordinate} = {self.value!r}",
                "returns": [r.to_json() for r in self.records],
                "dispersion": self.dispersion, "distinct_points": self.distinct}

    def write_csv(self, path, coords: Sequence[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "k", "t"] + list(coords))
            for s, r in enumerate(self.records):
                for k, (t, p) in enumerate(zip(r.times, r.points), start=1):
                    w.writerow([s, k, format(t, ".17g")] + [format(v, ".17g") for v in p])


def discrepancy(u: np.ndarray) -> float:
    """Star discrepancy of points in ``[0, 1)``."""
    u = np.sort(np.asarray(u, dtype=float))
    N = len(u)
    if N == 0:
        return float("nan")
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - u), np.max(u - (i - 1) / N)))


def poincare(X: BVectorField, coordinate: str, value: float, seeds: Sequence,
             t_max: float = 100.0, returns: int = 1, tol: float = DEFAULT_TOL,
             params: Mapping[str, float] | None = None) -> PoincareResult:
    """Successive crossings of ``coordinate = value`` in the seed's direction.

    Crossings are bracketed on a fine resampling of the dense output and
    refined by bisection (brentq) to ``1e-10`` in time or better.
    """
    m = X.manifold
    i = m.index(coordinate)
    P = m.period(coordinate)
    rhs = ordinary_rhs(X, params)
    records = []
    for seed in seeds:
        if isinstance(seed, Mapping):
            seed = [seed[c] for c in m.coords]
        seed = np.asarray(seed, dtype=float)
        normal = rhs(0.0, seed)[i]
        if abs(normal) <= 1e-6:
            raise ValueError(f"section {coordinate} = {value} is not transverse at seed {list(seed)}")
        direction = 1.0 if normal > 0 else -1.0
        res = solve_ivp(rhs, (0.0, t_max), seed, method="RK45", rtol=tol, atol=tol,
                        dense_output=True)
        ts = np.linspace(0.0, res.t[-1], max(20001, 16 * len(res.t)))
        u = res.sol(ts)[i] - value

        def level(s, k):
            return res.sol(s)[i] - value - k * (P or 0.0)

        times, pts = [], []
        if P is None:
            ks = np.zeros_like(u)
        else:
            ks = np.floor(u / P)
        for j in range(1, len(ts)):
            if len(times) >= returns:
                break
            if P is None:
                crossed = u[j - 1] * u[j] <= 0 and u[j] != u[j - 1]
                k = 0
            else:
                crossed = ks[j] != ks[j - 1]
                k = max(ks[j], ks[j - 1])
            if not crossed or (u[j] - u[j - 1]) * direction <= 0:
                continue
            a, b = ts[j - 1], ts[j]
            if level(a, k) * level(b, k) > 0:
                continue
            t_hit = brentq(level, a, b, args=(k,), xtol=1e-13, rtol=1e-15)
            if t_hit <= 1e-9:
                continue
            times.append(float(t_hit))
            hit = wrap(m, res.sol(t_hit))[0]
            hit[i] = value
            pts.append([float(v) for v in hit])
        records.append(ReturnRecord([float(v) for v in seed], times, pts, not times))

    dispersion = {}
    all_pts = np.array([p for r in records for p in r.points]) if any(r.points for r in records) else None
    distinct = 0
    if all_pts is not None:
        distinct = len({tuple(np.round(p, 7)) for p in all_pts})
        box = m.box()
        for j, c in enumerate(m.coords):
            per = m.period(c)
            if per is None or c == coordinate:
                continue
            dispersion[c] = discrepancy(np.mod(all_pts[:, j] - box[c][0], per) / per)
    return PoincareResult(coordinate, float(value), records, dispersion, distinct)
