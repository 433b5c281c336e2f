"""Command-line front end: ``bcalc COMMAND [options] MANIFEST``.

Every command writes ``verdicts.json`` (plus CSV data where it has any) into
``--out``, prints one line, and exits 0 when its verdict holds, 1 when it
fails and 2 on usage or manifest errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy

from . import expr as ex
from . import flowlab
from .bgeom import (BForm, DegenerateError, NotClosedError, PoleError, TransversalityError,
                    b_d, laurent, pullback, wedge)
from .desing import convergence_report, desingularize
from .euler import (EulerData, beltrami_check, beltrami_to_contact, bernoulli_two_form, curl,
                    contact_to_beltrami, divergence_check, stationary_check)
from .manifest import Manifest, ManifestError, load
from .structures import (CommensurabilityError, check_b_contact, check_b_symplectic,
                         fibration_map, periods, reeb, reflect_double, regularize_tails)

# Domain failures turn into a failed verdict (exit 1) rather than a usage error.
VERDICT_ERRORS = (PoleError, DegenerateError, NotClosedError, TransversalityError,
                  CommensurabilityError, ArithmeticError)


class UsageError(Exception):
    pass


# -- deterministic JSON ------------------------------------------------------

def _float(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    text = format(v, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _json(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, sympy.Basic):
        if obj.is_Number:
            return _float(float(obj))
        return _json(ex.to_text(obj))
    if isinstance(obj, str):
        out = ['"']
        for ch in obj:
            if ch in '"\\':
                out.append("\\" + ch)
            elif ord(ch) < 0x20:
                out.append(f"\\u{ord(ch):04x}")
            else:
                out.append(ch)
        out.append('"')
        return "".join(out)
    if isinstance(obj, np.ndarray):
        return _json(obj.tolist(), indent)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + "  " * indent + "]"
    return _json(str(obj))


def dumps(obj) -> str:
    """Sorted keys, 17 significant digits, nan/inf as strings."""
    return _json(obj) + "\n"


def _csv_float(v: float) -> str:
    return format(float(v), ".17g")


# -- argument handling ---------------------------------------------------------

COMMANDS: dict[str, Callable] = {}


def command(name: str):
    def register(fn):
        COMMANDS[name] = fn
        return fn
    return register


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcalc", description=__doc__.splitlines()[0])
    p.add_argument("command", help="one of: " + ", ".join(sorted(COMMANDS)))
    p.add_argument("manifest", help="manifest path or bundled name (e.g. abc)")
    p.add_argument("--out", default="bcalc-out", help="artifact directory (default bcalc-out)")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="substitute a parameter value; repeatable")
    p.add_argument("--grid", type=int, help="grid points per coordinate for sampled checks")
    p.add_argument("--tol", type=float, help="tolerance")
    p.add_argument("--seed", action="append", default=[], metavar="CSV",
                   help="seed point, e.g. 0,0,1.0; several seeds may be separated by ';'")
    p.add_argument("--tmax", type=float, help="integration horizon")
    p.add_argument("--epsilon", help="desingularization scale; converge takes a comma list")
    p.add_argument("--returns", type=int, help="poincare: returns per seed")
    p.add_argument("--samples", type=int, help="sample points for pointwise checks")
    p.add_argument("--field")
    p.add_argument("--form")
    p.add_argument("--forms", help="comma-separated form names")
    p.add_argument("--cycles", help="comma-separated periodic coordinates")
    p.add_argument("--metric")
    p.add_argument("--volume", help="volume form name")
    p.add_argument("--function", help="Bernoulli function, or h for contact-to-beltrami")
    p.add_argument("--map")
    p.add_argument("--section", help="poincare section, e.g. z=1.0")
    return p


class Context:
    """Manifest plus resolved options for one invocation."""

    def __init__(self, man: Manifest, command: str, args: argparse.Namespace):
        self.man = man
        self.command = command
        self.args = args
        task = man.tasks.get(command, {})
        self.task = task
        self.symbolic = {}
        for item in list(task.get("param", [])) + list(args.param):
            name, sep, value = item.partition("=")
            name = name.strip()
            if not sep or not name:
                raise UsageError(f"--param expects NAME=VALUE, got {item!r}")
            try:
                self.symbolic[name] = float(ex.evaluate(ex.parse(value), {}))
            except (ex.ExprSyntaxError, ex.DomainError, ex.UnboundSymbolError) as err:
                raise UsageError(f"--param {name}: {err}") from None
        self.sampling = {**man.defaults, **self.symbolic}

    def option(self, name: str, convert=str, default=None):
        v = getattr(self.args, name, None)
        if v is not None and v != []:
            return v
        if name in self.task:
            vals = self.task[name]
            try:
                return [convert(x) for x in vals] if len(vals) > 1 else convert(vals[0])
            except ValueError:
                raise UsageError(f"task [{self.command}]: bad value for {name}") from None
        return default

    def _pick(self, kind: str, table: dict, flag: str, fallback: str | None = None):
        name = self.option(flag)
        if name is None:
            if len(table) == 1:
                name = next(iter(table))
            elif fallback in table:
                name = fallback
            else:
                raise UsageError(f"missing named object: {self.command} needs --{flag} "
                                 f"({len(table)} {kind}s in manifest)")
        if name not in table:
            raise UsageError(f"missing named object: {kind} {name!r}")
        return name, table[name]

    def field(self):
        return self._pick("field", self.man.fields, "field")[1].subs(self.symbolic)

    def form(self):
        return self._pick("form", self.man.forms, "form")[1].subs(self.symbolic)

    def forms(self, flag: str = "forms") -> list[tuple[str, BForm]]:
        names = self.option(flag)
        if names is None:
            raise UsageError(f"missing named object: {self.command} needs --{flag}")
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        out = []
        for n in names:
            if n not in self.man.forms:
                raise UsageError(f"missing named object: form {n!r}")
            out.append((n, self.man.forms[n].subs(self.symbolic)))
        return out

    def metric(self):
        return self._pick("metric", self.man.metrics, "metric")[1].subs(self.symbolic)

    def volume(self):
        name = self.option("volume")
        if name is None:
            if "mu" in self.man.forms:
                name = "mu"
            else:
                raise UsageError(f"missing named object: {self.command} needs --volume")
        if name not in self.man.forms:
            raise UsageError(f"missing named object: form {name!r}")
        return self.man.forms[name].subs(self.symbolic)

    def function(self, required: bool = True):
        name = self.option("function")
        if name is None:
            if len(self.man.functions) == 1:
                name = next(iter(self.man.functions))
            elif not required:
                return None, None
            else:
                raise UsageError(f"missing named object: {self.command} needs --function")
        if name not in self.man.functions:
            raise UsageError(f"missing named object: function {name!r}")
        return name, ex.substitute(self.man.functions[name], self.symbolic)

    def euler(self, with_function: bool = False) -> EulerData:
        B = self.function()[1] if with_function else None
        return EulerData(self.field(), self.metric(), self.volume(), B)

    def cycles(self) -> list[str]:
        c = self.option("cycles")
        if c is None:
            return [x for x in self.man.manifold.coords if self.man.manifold.period(x) is not None]
        if isinstance(c, str):
            c = [x.strip() for x in c.split(",") if x.strip()]
        return list(c)

    def seeds(self) -> list[list[float]]:
        raw = self.option("seed")
        if raw is None:
            raise UsageError(f"{self.command} needs --seed")
        if isinstance(raw, str):
            raw = [raw]
        dim = self.man.manifold.dim
        out = []
        for chunk in raw:
            for part in chunk.split(";"):
                if not part.strip():
                    continue
                try:
                    pt = [float(ex.evaluate(ex.parse(v), {})) for v in part.split(",")]
                except (ex.ExprSyntaxError, ex.DomainError, ex.UnboundSymbolError) as err:
                    raise UsageError(f"bad seed {part!r}: {err}") from None
                if len(pt) != dim:
                    raise UsageError(f"seed {part!r} has {len(pt)} coordinates, chart has {dim}")
                out.append(pt)
        return out

    def epsilons(self, default: Sequence[float]) -> list[float]:
        raw = self.option("epsilon")
        if raw is None:
            return list(default)
        if isinstance(raw, list):
            raw = ",".join(raw)
        try:
            eps = [float(v) for v in str(raw).split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --epsilon {raw!r}") from None
        if not eps or min(eps) <= 0:
            raise UsageError("epsilon values must be positive")
        return eps

    def number(self, name: str, convert=float, default=None):
        v = self.option(name, convert, default)
        if isinstance(v, list):
            raise UsageError(f"{name} takes one value")
        return v if v is None else convert(v)


# -- commands ----------------------------------------------------------------
# Each returns (holds, one-line summary, json payload, {filename: writer}).

def _verdict_line(label: str, holds: bool, detail: str = "") -> str:
    return f"{label}: {'holds' if holds else 'fails'}" + (f" ({detail})" if detail else "")


@command("check-symplectic")
def _check_symplectic(c: Context):
    v = check_b_symplectic(c.form(), c.sampling, c.number("grid", int, 16))
    return v.holds, _verdict_line("b-symplectic", v.holds, v.reason or f"witness {ex.to_text(v.witness)}"), \
        v.to_json(), {}


@command("check-contact")
def _check_contact(c: Context):
    v = check_b_contact(c.form(), c.sampling, c.number("grid", int, 16))
    return v.holds, _verdict_line("b-contact", v.holds, v.reason or f"witness {ex.to_text(v.witness)}"), \
        v.to_json(), {}


@command("reeb")
def _reeb(c: Context):
    R = reeb(c.form())
    comps = {name: ex.to_text(R[i]) for i, name in enumerate(R.manifold.coords)}
    return True, f"R = {R}", {"holds": True, "reeb": str(R), "b_frame": comps}, {}


@command("laurent")
def _laurent(c: Context):
    a = c.form()
    lau = laurent(a)
    ok = lau.reassemble().equivalent(a)
    payload = {"holds": ok, "tails": [str(t) for t in lau.tail], "rest": str(lau.rest),
               "order": a.manifold.order}
    tails = ", ".join(str(t) for t in lau.tail)
    return ok, f"laurent: tails [{tails}], rest {lau.rest}", payload, {}


@command("desingularize")
def _desingularize(c: Context):
    a = c.form()
    eps = c.epsilons([0.1])
    if len(eps) != 1:
        raise UsageError("desingularize takes a single --epsilon")
    out = desingularize(a, eps[0], c.sampling, tol=c.number("tol", float, 1e-6))
    if isinstance(out, BForm):
        return True, "desingularize: no singular part, form unchanged", \
            {"holds": True, "form": str(out), "changed": False}, {}
    payload = {"holds": True, "form": str(out), "changed": True, "epsilon": eps[0],
               "parity": out.profile.parity, "closed_residual": out.closed_residual}
    return True, f"desingularized ({out.profile.parity}): {out}", payload, {}


@command("converge")
def _converge(c: Context):
    rep = convergence_report(c.form(), c.epsilons([0.2, 0.1, 0.05]), c.sampling)
    ok = rep.bivector_monotone
    return ok, _verdict_line("convergence", ok, f"{rep.parity} order, {len(rep.rows)} rows"), \
        rep.to_json(), {"converge.csv": rep.write_csv}


@command("curl")
def _curl(c: Context):
    d = c.euler()
    div = divergence_check(d)
    Y = curl(d)
    payload = {"holds": div.holds, "curl": str(Y), "divergence": div.to_json()}
    return div.holds, f"curl X = {Y}" + ("" if div.holds else " (field is not divergence free)"), payload, {}


@command("check-beltrami")
def _check_beltrami(c: Context):
    r = beltrami_check(c.euler(), c.sampling)
    detail = f"f = {ex.to_text(r.f)}" if r.holds else r.reason
    return r.holds, _verdict_line("Beltrami", r.holds, detail), r.to_json(), {}


@command("check-stationary")
def _check_stationary(c: Context):
    v = stationary_check(c.euler(with_function=True))
    return v.holds, _verdict_line("stationary", v.holds, v.reason), v.to_json(), {}


@command("mu2")
def _mu2(c: Context):
    _, B = c.function()
    mu = c.volume()
    mu2 = bernoulli_two_form(B, mu, c.metric())
    ok = wedge(b_d(BForm.function(mu.manifold, B)), mu2).equivalent(mu)
    return ok, f"mu2 = {mu2}", {"holds": ok, "mu2": str(mu2), "B": ex.to_text(B)}, {}


@command("beltrami-to-contact")
def _beltrami_to_contact(c: Context):
    d = c.euler()
    bel = beltrami_check(d, c.sampling)
    if not bel.holds:
        return False, _verdict_line("b-contact from Beltrami", False, bel.reason), bel.to_json(), {}
    r = beltrami_to_contact(d, c.sampling, c.number("grid", int, 64))
    detail = f"alpha = {r.alpha}" if r.holds else (r.contact.reason or "not contact")
    return r.holds, _verdict_line("b-contact from Beltrami", r.holds, detail), r.to_json(), {}


@command("contact-to-beltrami")
def _contact_to_beltrami(c: Context):
    _, h = c.function(required=False)
    r = contact_to_beltrami(c.form(), 1 if h is None else h, c.sampling,
                            samples=c.number("samples", int, 500), seed=0,
                            tol=c.number("tol", float, 1e-8))
    worst = max(r.errors.values())
    return r.holds, _verdict_line("Beltrami from contact", r.holds,
                                  f"max error {worst:.3g}, f = {r.f_measured:.12g}"), r.to_json(), {}


def _period_table(c: Context, named: list[tuple[str, object]], cycles: list[str], params):
    P = np.full((len(named), len(cycles)), np.nan)
    notes = []
    for i, (name, a) in enumerate(named):
        for j, cyc in enumerate(cycles):
            try:
                P[i, j] = periods([a], [cyc], params)[0, 0]
            except PoleError as err:
                notes.append(f"{name} over {cyc}: {err}")

    def write(path):
        with open(path, "w") as fh:
            fh.write(",".join(["form"] + cycles) + "\n")
            for (name, _), row in zip(named, P):
                fh.write(",".join([name] + [_csv_float(v) for v in row]) + "\n")
    return P, notes, write


@command("periods")
def _periods(c: Context):
    named = c.forms()
    cycles = c.cycles()
    if c.option("epsilon") is not None:
        eps = c.epsilons([0.1])[0]
        named = [(n, desingularize(a, eps, c.sampling)) for n, a in named]
    P, notes, write = _period_table(c, named, cycles, c.sampling)
    ok = not np.isnan(P).any()
    payload = {"holds": ok, "forms": [n for n, _ in named], "cycles": cycles,
               "periods": P.tolist(), "poles": notes}
    rows = "; ".join(", ".join("nan" if math.isnan(v) else f"{v:.12g}" for v in r) for r in P)
    return ok, f"periods [{rows}]", payload, {"periods.csv": write}


@command("fibration")
def _fibration(c: Context):
    named = c.forms()
    cycles = c.cycles()
    eps = c.epsilons([0.1])[0]
    reg = regularize_tails([a for _, a in named])
    names = [named[i][0] for i in reg.order]
    smooth = [desingularize(a, eps, c.sampling) for a in reg.forms]
    fm = fibration_map(smooth, cycles, c.sampling)
    payload = fm.to_json()
    payload.update({"forms": names, "regularized": [str(a) for a in reg.forms],
                    "desingularized": [str(a) for a in smooth], "epsilon": eps,
                    "notice": reg.notice, "cycles": cycles})
    _, _, write = _period_table(c, list(zip(names, smooth)), cycles, c.sampling)
    ok = payload["holds"]
    return ok, _verdict_line("fibration", ok, f"rank {fm.rank}, generators "
                             + ", ".join(f"{g:.12g}" for g in fm.generators)), \
        payload, {"periods.csv": write}


@command("double-check")
def _double_check(c: Context):
    r = reflect_double(c.form())
    kind = "symmetric" if r.symmetric else "antisymmetric" if r.antisymmetric else "neither"
    return r.symmetric, _verdict_line("reflection symmetry", r.symmetric, kind), r.to_json(), {}


@command("trace")
def _trace(c: Context):
    seeds = c.seeds()
    if len(seeds) != 1:
        raise UsageError("trace takes one seed")
    tmax = c.number("tmax", float, flowlab.DEFAULT_TMAX)
    tol = c.number("tol", float, flowlab.DEFAULT_TOL)
    tr = flowlab.integrate(c.field(), seeds[0], (-tmax, tmax), tol, c.sampling)
    cls = flowlab.classify(tr)
    ok = cls.kind in ("periodic", "singular_periodic")
    payload = {"holds": ok, "seed": seeds[0], "tmax": tmax, "tol": tol, **cls.to_json()}
    detail = cls.kind + (f", period {cls.period:.12g}" if cls.period else "")
    return ok, f"trace: {detail}", payload, {"trace.csv": tr.write_csv}


@command("poincare")
def _poincare(c: Context):
    sec = c.option("section")
    if sec is None:
        raise UsageError("poincare needs --section NAME=VALUE")
    coord, _, value = str(sec).partition("=")
    coord = coord.strip()
    if coord not in c.man.manifold.coords:
        raise UsageError(f"section coordinate {coord!r} is not a chart coordinate")
    try:
        value = float(ex.evaluate(ex.parse(value), {}))
    except (ex.ExprSyntaxError, ex.DomainError, ex.UnboundSymbolError) as err:
        raise UsageError(f"bad section value: {err}") from None
    res = flowlab.poincare(c.field(), coord, value, c.seeds(),
                           t_max=c.number("tmax", float, 100.0),
                           returns=c.number("returns", int, 20),
                           tol=c.number("tol", float, flowlab.DEFAULT_TOL), params=c.sampling)
    payload = res.to_json()
    ok = payload["holds"]
    coords = list(c.man.manifold.coords)
    return ok, _verdict_line("poincare", ok, f"{sum(len(r.times) for r in res.records)} returns, "
                             f"{res.distinct} distinct"), payload, \
        {"trace.csv": lambda p: res.write_csv(p, coords)}


@command("pullback")
def _pullback(c: Context):
    fn_name = c.args.function or (None if c.option("form") else c.option("function"))
    if fn_name is not None and not c.args.form:
        _, B = c.function()
        a = bernoulli_two_form(B, c.volume(), c.metric())
        label = f"mu2({fn_name})"
    else:
        name, a = c._pick("form", c.man.forms, "form")
        a = a.subs(c.symbolic)
        label = name
    map_name, spec = c._pick("map", c.man.maps, "map")
    phi = spec.to_manifold(c.man.maps)
    r = pullback(phi, a)
    payload = {"holds": r.pole_free, "form": label, "map": map_name, "pullback": str(r.form),
               "ordinary": str(r.ordinary),
               "poles": {"^".join(phi.source.coords[i] for i in K) or "1": p
                         for K, p in sorted(r.poles.items())},
               "residual_poles": {"^".join(phi.source.coords[i] for i in K) or "1": p
                                  for K, p in sorted(r.residual_poles.items())}}
    return r.pole_free, f"{map_name}*{label} = {r.describe()}", payload, {}


# -- entry point ---------------------------------------------------------------

def run(man: Manifest, command_name: str, args: argparse.Namespace,
        echo: Callable[[str], None] = print) -> int:
    if command_name not in COMMANDS:
        raise UsageError(f"unknown command {command_name!r}")
    ctx = Context(man, command_name, args)
    files: dict = {}
    try:
        holds, line, payload, files = COMMANDS[command_name](ctx)
    except VERDICT_ERRORS as err:
        holds, line = False, f"{command_name}: fails ({err})"
        payload = {"holds": False, "error": type(err).__name__, "reason": str(err)}
    except (ValueError, ex.UnboundSymbolError) as err:
        raise UsageError(str(err)) from None
    payload = {"command": command_name, "manifest": args.manifest,
               "params": dict(sorted(ctx.symbolic.items())), **payload}
    payload["holds"] = bool(holds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.json").write_text(dumps(payload))
    for name, writer in files.items():
        writer(out / name)
    echo(line)
    return 0 if holds else 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command not in COMMANDS:
            raise UsageError(f"unknown command {args.command!r}; choose from "
                             + ", ".join(sorted(COMMANDS)))
        man = load(args.manifest)
        return run(man, args.command, args)
    except (UsageError, ManifestError, FileNotFoundError) as err:
        print(f"bcalc: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
