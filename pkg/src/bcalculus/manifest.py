"""Line-oriented manifest files describing a chart and named objects.

Grammar (one item per line, ``#`` starts a comment)::

    [manifold]
    coords   = x, y, z
    defining = "sin(z)"            # optional; omit for an ordinary chart
    order    = 1
    singular = z                   # optional when defining names one coordinate
    periods  = x: 2*pi, y: 2*pi
    bounds   = t: -1 .. 1
    params   = A, B, C

    [params]                        # declares parameters, optionally with
    A                               # default values used for numeric sampling
    B = 1

    [field X]          x = "..."  (one key per coordinate)  or  components = e1, e2, e3
    [form alpha]       dy = "..."  dx^dz = "..."  1 = "..."  degree = k (for an empty form)
    [metric g]         identity = true  |  diagonal = e1, e2, ...  |  x,y = "..."
    [function B]       value = "..."
    [map i]            source = theta, omega   source_defining = "..."   source_order = 1
                       source_periods = ...   target = <map name>   then one key per target coordinate
    [task <command>]   default flag values, e.g. ``field = X`` or ``param = A=0``

Expressions may be quoted with double quotes.  Every error names the file,
line and section.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import sympy

from . import expr as ex
from .bgeom import BForm, BManifold, BMetric, BVectorField, CoordinateMap, compose
from .expr import Expr

BUNDLED = Path(__file__).with_name("manifests")


class ManifestError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None,
                 section: str | None = None):
        self.message, self.path, self.line, self.section = message, path, line, section
        where = path
        if line is not None:
            where += f":{line}"
        if section:
            where += f" [{section}]"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class _Section:
    kind: str
    name: str | None
    line: int
    items: list[tuple[str, str, int]] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.kind if self.name is None else f"{self.kind} {self.name}"


@dataclass
class MapSpec:
    name: str
    map: CoordinateMap
    target: str | None  # name of the map whose source chart this map lands in

    def to_manifold(self, maps: Mapping[str, "MapSpec"]) -> CoordinateMap:
        """Compose through ``target`` links until the manifest chart is reached."""
        out = self.map
        seen = {self.name}
        link = self.target
        while link is not None:
            if link in seen:
                raise ValueError(f"map {self.name} has a cyclic target chain")
            seen.add(link)
            outer = maps[link]
            out = compose(outer.map, out)
            link = outer.target
        return out


@dataclass
class Manifest:
    path: str
    manifold: BManifold
    defaults: dict[str, float]
    fields: dict[str, BVectorField]
    forms: dict[str, BForm]
    metrics: dict[str, BMetric]
    functions: dict[str, Expr]
    maps: dict[str, MapSpec]
    tasks: dict[str, dict[str, list[str]]]


def _strip_comment(line: str) -> str:
    out, quoted = [], False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] == '"':
        return v[1:-1]
    return v


def _split_list(v: str) -> list[str]:
    return [_unquote(p) for p in v.split(",") if p.strip()]


_HEADER = re.compile(r"^\[\s*([A-Za-z_][\w-]*)(?:\s+([^\]\s]+))?\s*\]$")
KINDS = {"manifold", "params", "field", "form", "metric", "function", "map", "task"}
NAMED = {"field", "form", "metric", "function", "map", "task"}


def _sections(text: str, path: str) -> list[_Section]:
    sections: list[_Section] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            kind, name = m.group(1), m.group(2)
            if kind not in KINDS:
                raise ManifestError(f"unknown section kind {kind!r}", path, no)
            if kind in NAMED and not name:
                raise ManifestError(f"section [{kind}] needs a name", path, no)
            if kind not in NAMED and name:
                raise ManifestError(f"section [{kind}] takes no name", path, no)
            sections.append(_Section(kind, name, no))
            continue
        if not sections:
            raise ManifestError("content before the first section", path, no)
        sec = sections[-1]
        if "=" in line:
            key, value = line.split("=", 1)
            sec.items.append((key.strip(), value.strip(), no))
        elif sec.kind == "params":
            sec.items.append((line.strip(), "", no))
        else:
            raise ManifestError(f"expected 'key = value', got {line!r}", path, no, sec.label)
    return sections


class _Loader:
    def __init__(self, path: str):
        self.path = path

    def fail(self, msg: str, sec: _Section, line: int | None = None):
        raise ManifestError(msg, self.path, sec.line if line is None else line, sec.label)

    def expr(self, text: str, sec: _Section, line: int, allowed: set[str]) -> Expr:
        try:
            e = ex.parse(_unquote(text))
        except ex.ExprSyntaxError as err:
            self.fail(f"cannot parse {text!r}: {err}", sec, line)
        unknown = ex.free_names(e) - allowed
        if unknown:
            self.fail(f"unknown symbol(s) {sorted(unknown)} in {text!r}", sec, line)
        return e

    def chart_items(self, sec: _Section, items: dict, prefix: str, params: set[str]) -> BManifold:
        """Build a chart from ``coords``/``defining``/... keys with a key prefix."""
        get = lambda k: items.get(prefix + k)
        coords_item = items.get("coords") if prefix == "" else items.get(prefix.rstrip("_"))
        if coords_item is None:
            self.fail("missing 'coords'", sec)
        coords = _split_list(coords_item[0])
        if not coords:
            self.fail("no coordinates given", sec, coords_item[1])
        for c in coords:
            if not re.fullmatch(r"[A-Za-z_]\w*", c):
                self.fail(f"bad coordinate name {c!r}", sec, coords_item[1])
        defining = None
        if get("defining"):
            v, no = get("defining")
            defining = self.expr(v, sec, no, set(coords) | params)
        order = 1
        if get("order"):
            v, no = get("order")
            try:
                order = int(_unquote(v))
            except ValueError:
                self.fail(f"order must be an integer, got {v!r}", sec, no)
        singular = _unquote(get("singular")[0]) if get("singular") else None
        periods, bounds = {}, {}
        if get("periods"):
            v, no = get("periods")
            for part in _split_list(v):
                if ":" not in part:
                    self.fail(f"period entry {part!r} needs 'coord: value'", sec, no)
                c, val = (s.strip() for s in part.split(":", 1))
                if c not in coords:
                    self.fail(f"unknown coordinate {c!r} in periods", sec, no)
                periods[c] = self.expr(val, sec, no, set())
        if get("bounds"):
            v, no = get("bounds")
            for part in _split_list(v):
                try:
                    c, rng = (s.strip() for s in part.split(":", 1))
                    lo, hi = (float(ex.as_expr(s.strip())) for s in rng.split(".."))
                except (ValueError, TypeError, ex.ExprSyntaxError):
                    self.fail(f"bounds entry {part!r} must read 'coord: lo .. hi'", sec, no)
                if c not in coords:
                    self.fail(f"unknown coordinate {c!r} in bounds", sec, no)
                bounds[c] = (lo, hi)
        try:
            return BManifold(tuple(coords), defining, order, singular, periods,
                             tuple(sorted(params - set(coords))), bounds)
        except ValueError as err:
            self.fail(str(err), sec, (get("defining") or coords_item)[1])

    def load(self, text: str) -> Manifest:
        sections = _sections(text, self.path)
        man = [s for s in sections if s.kind == "manifold"]
        if not man:
            raise ManifestError("missing [manifold]", self.path)
        if len(man) > 1:
            self.fail("duplicate [manifold] section", man[1])
        seen: set[tuple[str, str | None]] = set()
        for s in sections:
            if (s.kind, s.name) in seen and s.kind != "params":
                self.fail("duplicate section", s)
            seen.add((s.kind, s.name))

        params: set[str] = set()
        defaults: dict[str, float] = {}
        items = {k: (v, no) for k, v, no in man[0].items}
        for k, _, no in man[0].items:
            if k not in {"coords", "defining", "order", "singular", "periods", "bounds", "params"}:
                self.fail(f"unknown key {k!r}", man[0], no)
        if "params" in items:
            params.update(_split_list(items["params"][0]))
        for s in sections:
            if s.kind != "params":
                continue
            for k, v, no in s.items:
                if not re.fullmatch(r"[A-Za-z_]\w*", k):
                    self.fail(f"bad parameter name {k!r}", s, no)
                params.add(k)
                if v:
                    try:
                        defaults[k] = float(ex.evaluate(ex.parse(_unquote(v)), {}))
                    except (ex.ExprSyntaxError, ex.DomainError, ex.UnboundSymbolError) as err:
                        self.fail(f"parameter default must be a number: {err}", s, no)
        M = self.chart_items(man[0], items, "", params)
        if params & set(M.coords):
            self.fail("a name cannot be both coordinate and parameter", man[0])
        allowed = set(M.coords) | params

        out = Manifest(self.path, M, defaults, {}, {}, {}, {}, {}, {})
        for s in sections:
            if s.kind == "field":
                out.fields[s.name] = self.field(s, M, allowed)
            elif s.kind == "form":
                out.forms[s.name] = self.form(s, M, allowed)
            elif s.kind == "metric":
                out.metrics[s.name] = self.metric(s, M, allowed)
            elif s.kind == "function":
                keys = {k: (v, no) for k, v, no in s.items}
                if set(keys) != {"value"}:
                    self.fail("function sections hold exactly one key, 'value'", s)
                v, no = keys["value"]
                out.functions[s.name] = self.expr(v, s, no, allowed)
            elif s.kind == "task":
                task: dict[str, list[str]] = {}
                for k, v, _ in s.items:
                    task.setdefault(k, []).append(_unquote(v))
                out.tasks[s.name] = task
        for s in sections:
            if s.kind == "map":
                out.maps[s.name] = self.map(s, M, params, sections)
        for spec in out.maps.values():
            if spec.target is not None and spec.target not in out.maps:
                self.fail(f"target map {spec.target!r} is not defined",
                          next(s for s in sections if s.kind == "map" and s.name == spec.name))
        return out

    def field(self, s: _Section, M: BManifold, allowed: set[str]) -> BVectorField:
        keys = {k: (v, no) for k, v, no in s.items}
        if "components" in keys:
            v, no = keys["components"]
            comps = _split_list(v)
            if len(comps) != M.dim or len(keys) != 1:
                self.fail(f"field {s.name} has {len(comps)} components, chart has {M.dim} "
                          "coordinates", s, no)
            return BVectorField(M, [self.expr(c, s, no, allowed) for c in comps])
        unknown = set(keys) - set(M.coords)
        if unknown:
            self.fail(f"unknown coordinate key(s) {sorted(unknown)}", s, keys[sorted(unknown)[0]][1])
        if len(keys) != M.dim:
            self.fail(f"field {s.name} has {len(keys)} components, chart has {M.dim} "
                      "coordinates", s)
        comps = [self.expr(keys[c][0], s, keys[c][1], allowed) for c in M.coords]
        try:
            return BVectorField(M, comps)
        except ValueError as err:
            self.fail(str(err), s)

    def form(self, s: _Section, M: BManifold, allowed: set[str]) -> BForm:
        coeffs, degree = {}, None
        for k, v, no in s.items:
            if k == "degree":
                degree = int(_unquote(v))
                continue
            words = [] if k in ("1", "") else [w.strip() for w in k.split("^")]
            for w in words:
                c = w[1:] if w not in M.coords and w.startswith("d") else w
                if c not in M.coords:
                    self.fail(f"unknown basis element {w!r}", s, no)
            if degree is not None and len(words) != degree:
                self.fail(f"basis word {k!r} does not have degree {degree}", s, no)
            coeffs[k] = (self.expr(v, s, no, allowed), no, len(words))
        degrees = {d for _, _, d in coeffs.values()}
        if len(degrees) > 1:
            self.fail("basis words of different degree in one form", s)
        if degree is None:
            if not degrees:
                self.fail("empty form needs 'degree = k'", s)
            degree = degrees.pop()
        try:
            return BForm(M, degree, {k: c for k, (c, _, _) in coeffs.items()})
        except ValueError as err:
            self.fail(str(err), s)

    def metric(self, s: _Section, M: BManifold, allowed: set[str]) -> BMetric:
        keys = {k: (v, no) for k, v, no in s.items}
        try:
            if "identity" in keys:
                if _unquote(keys["identity"][0]).lower() not in ("true", "yes", "1") or len(keys) > 1:
                    self.fail("identity metric takes 'identity = true' alone", s, keys["identity"][1])
                return BMetric.identity(M)
            if "diagonal" in keys:
                v, no = keys["diagonal"]
                entries = _split_list(v)
                if len(entries) != M.dim or len(keys) > 1:
                    self.fail(f"diagonal needs {M.dim} entries", s, no)
                return BMetric.diagonal(M, [self.expr(e, s, no, allowed) for e in entries])
            mat = sympy.zeros(M.dim, M.dim)
            for k, (v, no) in keys.items():
                pair = [p.strip() for p in k.split(",")]
                if len(pair) != 2 or any(p not in M.coords for p in pair):
                    self.fail(f"metric keys read 'coord,coord', got {k!r}", s, no)
                i, j = M.index(pair[0]), M.index(pair[1])
                e = self.expr(v, s, no, allowed)
                mat[i, j] = e
                mat[j, i] = e
            return BMetric(M, mat)
        except ValueError as err:
            if isinstance(err, ManifestError):
                raise
            self.fail(str(err), s)

    def map(self, s: _Section, M: BManifold, params: set[str], sections) -> MapSpec:
        items = {k: (v, no) for k, v, no in s.items}
        if "source" not in items:
            self.fail("map needs 'source = coords'", s)
        chart_keys = {k for k in items if k == "source" or k.startswith("source_")}
        src = self._source_chart(s, items, params)
        target_name = _unquote(items["target"][0]) if "target" in items else None
        if target_name is not None:
            tsec = next((t for t in sections if t.kind == "map" and t.name == target_name), None)
            if tsec is None:
                self.fail(f"target map {target_name!r} is not defined", s, items["target"][1])
            target = self._source_chart(tsec, {k: (v, no) for k, v, no in tsec.items}, params)
        else:
            target = M
        comp_keys = set(items) - chart_keys - {"target"}
        unknown = comp_keys - set(target.coords)
        if unknown:
            self.fail(f"unknown target coordinate(s) {sorted(unknown)}", s,
                      items[sorted(unknown)[0]][1])
        if len(comp_keys) != target.dim:
            self.fail(f"map {s.name} has {len(comp_keys)} components, target has {target.dim}", s)
        allowed = set(src.coords) | params
        comps = tuple(self.expr(items[c][0], s, items[c][1], allowed) for c in target.coords)
        try:
            return MapSpec(s.name, CoordinateMap(src, target, comps), target_name)
        except ValueError as err:
            self.fail(str(err), s)

    def _source_chart(self, s: _Section, items: dict, params: set[str]) -> BManifold:
        """Chart from a map's ``source`` and ``source_*`` keys."""
        if "source" not in items:
            self.fail("map needs 'source = coords'", s)
        return self.chart_items(s, items, "source_", params)


def resolve(path: str | Path) -> Path:
    """A file path, or the name of a bundled manifest (with or without suffix)."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (BUNDLED / p.name, BUNDLED / f"{p.name}.manifest"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no manifest {str(path)!r} (bundled: {', '.join(bundled())})")


def bundled() -> list[str]:
    return sorted(p.stem for p in BUNDLED.glob("*.manifest"))


def loads(text: str, path: str = "<string>") -> Manifest:
    return _Loader(path).load(text)


def load(path: str | Path) -> Manifest:
    p = resolve(path)
    return loads(p.read_text(encoding="utf-8"), str(p))
