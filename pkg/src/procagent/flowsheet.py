"""Flowsheet data model: components, unit operations and material streams.

A flowsheet is a directed graph whose nodes are unit operations and whose
edges are streams joining an outlet port of one unit to an inlet port of
another. Cycles are legal; the simulator resolves them with tear streams.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from . import components as db
from .errors import (
    InvalidPort,
    InvalidUnitParams,
    PortOccupied,
    SchemaError,
    UnknownComponent,
    UnknownUnit,
    WrongRequestKind,
)

UNIT_KINDS = (
    "Feed",
    "Product",
    "Mixer",
    "Splitter",
    "Heater",
    "Pump",
    "Valve",
    "Flash",
    "ComponentSplitter",
    "ConversionReactor",
)

ID_PREFIX = {
    "Feed": "feed",
    "Product": "prod",
    "Mixer": "mix",
    "Splitter": "split",
    "Heater": "heat",
    "Pump": "pump",
    "Valve": "valve",
    "Flash": "flash",
    "ComponentSplitter": "csplit",
    "ConversionReactor": "rxn",
}

PROPERTY_VARIANTS = ("IdealRaoult", "Margules")
FRACTION_SUM_TOL = 1e-9

_flowsheet_ids = itertools.count(1)


def id_key(ident: str) -> tuple[str, int, str]:
    """Natural sort key: ``flash2`` sorts before ``flash10``."""
    m = re.match(r"^(.*?)(\d+)$", ident)
    if m:
        return (m.group(1), int(m.group(2)), ident)
    return (ident, -1, ident)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass
class PropertyMethod:
    variant: str = "IdealRaoult"
    margules_params: dict[frozenset, float] = field(default_factory=dict)

    def coefficient(self, a: str, b: str) -> float:
        if self.variant != "Margules":
            return 0.0
        return self.margules_params.get(frozenset((a, b)), 0.0)

    def to_dict(self) -> dict[str, Any]:
        pairs = sorted((sorted(p), v) for p, v in self.margules_params.items())
        return {
            "variant": self.variant,
            "margules_params": [{"pair": p, "A12": v} for p, v in pairs],
        }


@dataclass
class StreamState:
    flows: dict[str, float]  # kmol/h
    T: float  # K
    P: float  # Pa
    vapor_fraction: Optional[float] = None

    @property
    def total(self) -> float:
        return sum(self.flows.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "flows": dict(self.flows),
            "T": self.T,
            "P": self.P,
            "vapor_fraction": self.vapor_fraction,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "StreamState":
        return cls(
            flows={k: float(v) for k, v in doc["flows"].items()},
            T=float(doc["T"]),
            P=float(doc["P"]),
            vapor_fraction=None if doc.get("vapor_fraction") is None else float(doc["vapor_fraction"]),
        )


@dataclass
class UnitOp:
    id: str
    kind: str
    params: dict[str, Any]

    @property
    def arity(self) -> tuple[int, int]:
        return port_arity(self.kind, self.params)


@dataclass
class Stream:
    id: str
    source: tuple[str, int]
    target: tuple[str, int]
    state: Optional[StreamState] = None


@dataclass(frozen=True)
class Violation:
    code: str
    unit: Optional[str] = None
    direction: Optional[str] = None  # "in" / "out" for UnboundPort
    port: Optional[int] = None
    detail: str = ""

    @property
    def location(self) -> str:
        if self.unit is None:
            return ""
        if self.direction is not None:
            return f"{self.unit}.{self.direction}{self.port}"
        return self.unit

    def __str__(self) -> str:
        loc = self.location
        return f"{self.code}({loc})" if loc else self.code


# ---------------------------------------------------------------------------
# Parameter rules
# ---------------------------------------------------------------------------


def port_arity(kind: str, params: dict[str, Any]) -> tuple[int, int]:
    if kind == "Feed":
        return (0, 1)
    if kind == "Product":
        return (1, 0)
    if kind == "Mixer":
        return (int(params.get("inlets", 2)), 1)
    if kind == "Splitter":
        return (1, len(params["fractions"]))
    if kind in ("Flash", "ComponentSplitter"):
        return (1, 2)
    return (1, 1)


def _number(params: dict, key: str, *, positive: bool = False, unit_interval: bool = False) -> float:
    if key not in params:
        raise InvalidUnitParams(key, "missing")
    value = params[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise InvalidUnitParams(key, f"expected a finite number, got {value!r}")
    value = float(value)
    if positive and value <= 0:
        raise InvalidUnitParams(key, f"must be > 0, got {value}")
    if unit_interval and not 0.0 <= value <= 1.0:
        raise InvalidUnitParams(key, f"must lie in [0, 1], got {value}")
    return value


def _number_map(params: dict, key: str, *, unit_interval: bool = False, nonneg: bool = False,
                nonempty: bool = False) -> dict[str, float]:
    if key not in params:
        raise InvalidUnitParams(key, "missing")
    raw = params[key]
    if not isinstance(raw, dict):
        raise InvalidUnitParams(key, "expected a component map")
    if nonempty and not raw:
        raise InvalidUnitParams(key, "must not be empty")
    out = {}
    for comp, value in raw.items():
        sub = f"{key}.{comp}"
        out[str(comp)] = _number({sub: value}, sub, unit_interval=unit_interval)
        if nonneg and out[str(comp)] < 0:
            raise InvalidUnitParams(sub, "must be >= 0")
    return out


def check_unit_params(kind: str, params: dict[str, Any]) -> dict[str, Any]:
    """Validate ``params`` for ``kind`` and return a normalized copy."""
    if kind not in UNIT_KINDS:
        raise InvalidUnitParams("kind", f"unknown unit kind {kind!r}")
    params = dict(params or {})
    out: dict[str, Any] = {}
    if kind == "Feed":
        out["flows"] = _number_map(params, "flows", nonneg=True)
        out["T"] = _number(params, "T", positive=True)
        out["P"] = _number(params, "P", positive=True)
    elif kind == "Mixer":
        if "inlets" in params:
            n = params["inlets"]
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise InvalidUnitParams("inlets", f"must be an integer >= 1, got {n!r}")
            out["inlets"] = n
    elif kind == "Splitter":
        fr = params.get("fractions")
        if fr is None:
            raise InvalidUnitParams("fractions", "missing")
        if not isinstance(fr, (list, tuple)) or len(fr) < 2:
            raise InvalidUnitParams("fractions", "need a list of at least 2 fractions")
        vals = [_number({"fractions": v}, "fractions", unit_interval=True) for v in fr]
        if abs(sum(vals) - 1.0) > FRACTION_SUM_TOL:
            raise InvalidUnitParams("fractions", f"must sum to 1, got {sum(vals)}")
        out["fractions"] = vals
    elif kind == "Heater":
        out["T_out"] = _number(params, "T_out", positive=True)
    elif kind in ("Pump", "Valve"):
        out["P_out"] = _number(params, "P_out", positive=True)
    elif kind == "Flash":
        out["T"] = _number(params, "T", positive=True)
        out["P"] = _number(params, "P", positive=True)
    elif kind == "ComponentSplitter":
        out["split_fractions"] = _number_map(params, "split_fractions", unit_interval=True)
    elif kind == "ConversionReactor":
        stoich = _number_map(params, "stoichiometry", nonempty=True)
        key = params.get("key_component")
        if not isinstance(key, str):
            raise InvalidUnitParams("key_component", "missing")
        if stoich.get(key, 0.0) >= 0:
            raise InvalidUnitParams("key_component", "must be a reactant (negative coefficient)")
        out["stoichiometry"] = stoich
        out["key_component"] = key
        out["conversion"] = _number(params, "conversion", unit_interval=True)
    extra = set(params) - set(out) - ({"inlets"} if kind == "Mixer" else set())
    if extra:
        raise InvalidUnitParams(sorted(extra)[0], f"not a parameter of {kind}")
    return out


# ---------------------------------------------------------------------------
# Flowsheet
# ---------------------------------------------------------------------------


@dataclass
class Flowsheet:
    id: str
    components: list[str] = field(default_factory=list)
    property_method: PropertyMethod = field(default_factory=PropertyMethod)
    units: dict[str, UnitOp] = field(default_factory=dict)
    streams: dict[str, Stream] = field(default_factory=dict)
    _counters: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    # -- id generation ------------------------------------------------------

    def _fresh_id(self, prefix: str, taken: Iterable[str]) -> str:
        taken = set(taken)
        n = self._counters.get(prefix, 0)
        while True:
            n += 1
            candidate = f"{prefix}{n}"
            if candidate not in taken:
                self._counters[prefix] = n
                return candidate

    def _bump_counter(self, ident: str) -> None:
        prefix, n, _ = id_key(ident)
        if n >= 0 and n > self._counters.get(prefix, 0):
            self._counters[prefix] = n

    # -- mutations ----------------------------------------------------------

    def add_component(self, name: str) -> str:
        cid = db.resolve(name)
        if cid not in self.components:
            self.components.append(cid)
        return cid

    def set_property_method(self, variant: str, margules_params: Optional[dict] = None) -> None:
        if variant not in PROPERTY_VARIANTS:
            raise InvalidUnitParams("variant", f"unknown property method {variant!r}")
        params = {}
        for pair, value in (margules_params or {}).items():
            pair = frozenset(pair)
            if len(pair) != 2:
                raise InvalidUnitParams("margules_params", "pairs need two distinct components")
            params[pair] = float(value)
        self.property_method = PropertyMethod(variant, params if variant == "Margules" else {})

    def add_unit(self, kind: str, params: Optional[dict] = None, unit_id: Optional[str] = None) -> str:
        normalized = check_unit_params(kind, params or {})
        if unit_id is None:
            unit_id = self._fresh_id(ID_PREFIX[kind], itertools.chain(self.units, self.streams))
        elif unit_id in self.units:
            raise InvalidUnitParams("id", f"duplicate unit id {unit_id!r}")
        else:
            self._bump_counter(unit_id)
        self.units[unit_id] = UnitOp(unit_id, kind, normalized)
        return unit_id

    def update_params(self, unit_id: str, params: dict[str, Any]) -> None:
        """Replace a unit's parameters, keeping port bindings legal."""
        unit = self.unit(unit_id)
        normalized = check_unit_params(unit.kind, params)
        n_in, n_out = port_arity(unit.kind, normalized)
        for s in self.streams.values():
            if s.source[0] == unit_id and s.source[1] >= n_out:
                raise InvalidPort(f"{unit_id}: outlet {s.source[1]} is bound but would vanish")
            if s.target[0] == unit_id and s.target[1] >= n_in:
                raise InvalidPort(f"{unit_id}: inlet {s.target[1]} is bound but would vanish")
        unit.params = normalized

    def unit(self, unit_id: str) -> UnitOp:
        try:
            return self.units[unit_id]
        except KeyError:
            raise UnknownUnit(unit_id) from None

    def connect(self, source: tuple[str, int], target: tuple[str, int], stream_id: Optional[str] = None) -> str:
        src_unit, src_port = source[0], int(source[1])
        dst_unit, dst_port = target[0], int(target[1])
        n_out = self.unit(src_unit).arity[1]
        n_in = self.unit(dst_unit).arity[0]
        if not 0 <= src_port < n_out:
            raise InvalidPort(f"{src_unit} has no outlet {src_port}")
        if not 0 <= dst_port < n_in:
            raise InvalidPort(f"{dst_unit} has no inlet {dst_port}")
        for s in self.streams.values():
            if s.source == (src_unit, src_port):
                raise PortOccupied(f"{src_unit} outlet {src_port} already feeds {s.id}")
            if s.target == (dst_unit, dst_port):
                raise PortOccupied(f"{dst_unit} inlet {dst_port} already receives {s.id}")
        if stream_id is None:
            stream_id = self._fresh_id("s", itertools.chain(self.units, self.streams))
        elif stream_id in self.streams:
            raise PortOccupied(f"duplicate stream id {stream_id!r}")
        else:
            self._bump_counter(stream_id)
        self.streams[stream_id] = Stream(stream_id, (src_unit, src_port), (dst_unit, dst_port))
        return stream_id

    def disconnect(self, stream_id: str) -> None:
        if stream_id not in self.streams:
            raise UnknownUnit(f"no stream {stream_id!r}")
        del self.streams[stream_id]

    def cascade_delete(self, unit_id: str) -> set[str]:
        """Remove a unit and every stream touching it; return all removed ids."""
        self.unit(unit_id)
        removed = {unit_id}
        for sid in [s.id for s in self.streams.values() if unit_id in (s.source[0], s.target[0])]:
            del self.streams[sid]
            removed.add(sid)
        del self.units[unit_id]
        return removed

    # -- queries ------------------------------------------------------------

    def sorted_units(self) -> list[UnitOp]:
        return [self.units[k] for k in sorted(self.units, key=id_key)]

    def inlet_streams(self, unit_id: str) -> dict[int, Stream]:
        return {s.target[1]: s for s in self.streams.values() if s.target[0] == unit_id}

    def outlet_streams(self, unit_id: str) -> dict[int, Stream]:
        return {s.source[1]: s for s in self.streams.values() if s.source[0] == unit_id}

    def units_of(self, kind: str) -> list[UnitOp]:
        return [u for u in self.sorted_units() if u.kind == kind]

    def copy(self, new_id: Optional[str] = None) -> "Flowsheet":
        dup = copy.deepcopy(self)
        if new_id is not None:
            dup.id = new_id
        return dup

    def clear_states(self) -> None:
        for s in self.streams.values():
            s.state = None

    def fingerprint(self) -> str:
        """Canonical content string ignoring the flowsheet id and solved states."""
        doc = to_dict(self, include_states=False)
        doc.pop("id")
        return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def create_flowsheet(task=None, flowsheet_id: Optional[str] = None) -> Flowsheet:
    """Fresh, independent, empty flowsheet."""
    if task is not None and task.request_kind != "Design":
        raise WrongRequestKind(f"cannot build a flowsheet for a {task.request_kind} request")
    if flowsheet_id is None:
        flowsheet_id = f"fs-{next(_flowsheet_ids)}"
    return Flowsheet(id=flowsheet_id)


def _reachable(start: Iterable[str], adjacency: dict[str, list[str]]) -> set[str]:
    seen = set(start)
    stack = list(seen)
    while stack:
        node = stack.pop()
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _declared_components(unit: UnitOp) -> list[str]:
    if unit.kind == "Feed":
        return list(unit.params["flows"])
    if unit.kind == "ComponentSplitter":
        return list(unit.params["split_fractions"])
    if unit.kind == "ConversionReactor":
        return list(unit.params["stoichiometry"])
    return []


def validate_topology(fs: Flowsheet) -> list[Violation]:
    """All reasons the flowsheet cannot be simulated; empty means simulatable."""
    out: list[Violation] = []
    units = fs.sorted_units()
    feeds = [u.id for u in units if u.kind == "Feed"]
    products = [u.id for u in units if u.kind == "Product"]
    if not feeds:
        out.append(Violation("NoFeed"))
    if not products:
        out.append(Violation("NoProduct"))
    if not fs.components:
        out.append(Violation("EmptyComponents"))

    bound_in = {s.target for s in fs.streams.values()}
    bound_out = {s.source for s in fs.streams.values()}
    for u in units:
        n_in, n_out = u.arity
        for p in range(n_in):
            if (u.id, p) not in bound_in:
                out.append(Violation("UnboundPort", u.id, "in", p))
        for p in range(n_out):
            if (u.id, p) not in bound_out:
                out.append(Violation("UnboundPort", u.id, "out", p))

    fwd: dict[str, list[str]] = {}
    rev: dict[str, list[str]] = {}
    for s in fs.streams.values():
        fwd.setdefault(s.source[0], []).append(s.target[0])
        rev.setdefault(s.target[0], []).append(s.source[0])
    if feeds:
        reach = _reachable(feeds, fwd)
        out.extend(Violation("UnreachableUnit", u.id) for u in units if u.id not in reach)
    if products:
        reach = _reachable(products, rev)
        out.extend(Violation("DisconnectedProduct", u.id) for u in units if u.id not in reach)

    declared = set(fs.components)
    for u in units:
        missing = sorted(set(_declared_components(u)) - declared)
        if missing:
            out.append(Violation("UndeclaredComponent", u.id, detail=",".join(missing)))
    return out


def describe_changes(old: Flowsheet, new: Flowsheet) -> str:
    """Short human-readable summary of what differs between two flowsheets."""
    parts: list[str] = []
    for cid in new.components:
        if cid not in old.components:
            parts.append(f"+component {cid}")
    if new.property_method != old.property_method:
        parts.append(f"property method -> {new.property_method.variant}")
    for uid in sorted(set(old.units) - set(new.units), key=id_key):
        parts.append(f"-unit {uid}")
    for uid in sorted(set(new.units) - set(old.units), key=id_key):
        parts.append(f"+unit {uid} ({new.units[uid].kind})")
    for uid in sorted(set(old.units) & set(new.units), key=id_key):
        a, b = old.units[uid].params, new.units[uid].params
        for key in sorted(set(a) | set(b)):
            if a.get(key) != b.get(key):
                parts.append(f"{uid}.{key}: {_short(a.get(key))} -> {_short(b.get(key))}")
    old_edges = {(s.source, s.target) for s in old.streams.values()}
    new_edges = {(s.source, s.target) for s in new.streams.values()}
    for src, dst in sorted(new_edges - old_edges):
        parts.append(f"+stream {src[0]}.out{src[1]}->{dst[0]}.in{dst[1]}")
    for src, dst in sorted(old_edges - new_edges):
        parts.append(f"-stream {src[0]}.out{src[1]}->{dst[0]}.in{dst[1]}")
    return "; ".join(parts) if parts else "no change"


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, list):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {_short(v)}" for k, v in sorted(value.items())) + "}"
    return str(value)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def to_dict(fs: Flowsheet, include_states: bool = True) -> dict[str, Any]:
    streams = []
    for s in sorted(fs.streams.values(), key=lambda s: id_key(s.id)):
        entry: dict[str, Any] = {"id": s.id, "from": list(s.source), "to": list(s.target)}
        if include_states and s.state is not None:
            entry["state"] = s.state.to_dict()
        streams.append(entry)
    return {
        "id": fs.id,
        "components": list(fs.components),
        "property_method": fs.property_method.to_dict(),
        "units": [{"id": u.id, "kind": u.kind, "params": copy.deepcopy(u.params)} for u in fs.sorted_units()],
        "streams": streams,
    }


def _require(doc: dict, key: str, typ, pointer: str):
    if key not in doc:
        raise SchemaError(f"{pointer}/{key}", "missing required key")
    value = doc[key]
    if not isinstance(value, typ) or isinstance(value, bool):
        raise SchemaError(f"{pointer}/{key}", f"expected {getattr(typ, '__name__', typ)}")
    return value


def _endpoint(value: Any, pointer: str) -> tuple[str, int]:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not isinstance(value[0], str)
        or isinstance(value[1], bool)
        or not isinstance(value[1], int)
    ):
        raise SchemaError(pointer, "expected [unit id, port index]")
    return value[0], value[1]


def from_dict(doc: Any) -> Flowsheet:
    """Build a flowsheet from its JSON document.

    Structural problems raise :class:`SchemaError` with a pointer; documents
    that parse but break a type invariant raise the corresponding error.
    """
    if not isinstance(doc, dict):
        raise SchemaError("", "expected a JSON object")
    fs_id = _require(doc, "id", str, "")
    comps = _require(doc, "components", list, "")
    pm = _require(doc, "property_method", dict, "")
    units = _require(doc, "units", list, "")
    streams = _require(doc, "streams", list, "")

    fs = Flowsheet(id=fs_id)
    for i, cid in enumerate(comps):
        if not isinstance(cid, str):
            raise SchemaError(f"/components/{i}", "expected a component id string")
        if cid not in db.DATABASE:
            raise UnknownComponent(cid, [])
        if cid not in fs.components:
            fs.components.append(cid)

    variant = _require(pm, "variant", str, "/property_method")
    raw_pairs = pm.get("margules_params", [])
    if not isinstance(raw_pairs, list):
        raise SchemaError("/property_method/margules_params", "expected a list")
    pairs = {}
    for i, entry in enumerate(raw_pairs):
        ptr = f"/property_method/margules_params/{i}"
        if not isinstance(entry, dict):
            raise SchemaError(ptr, "expected an object")
        pair = _require(entry, "pair", list, ptr)
        value = entry.get("A12")
        if len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise SchemaError(f"{ptr}/pair", "expected two component ids")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{ptr}/A12", "expected a number")
        pairs[tuple(pair)] = value
    fs.set_property_method(variant, pairs)

    seen_units = set()
    for i, entry in enumerate(units):
        ptr = f"/units/{i}"
        if not isinstance(entry, dict):
            raise SchemaError(ptr, "expected an object")
        uid = _require(entry, "id", str, ptr)
        kind = _require(entry, "kind", str, ptr)
        params = _require(entry, "params", dict, ptr)
        if kind not in UNIT_KINDS:
            raise SchemaError(f"{ptr}/kind", f"unknown unit kind {kind!r}")
        if uid in seen_units:
            raise SchemaError(f"{ptr}/id", f"duplicate unit id {uid!r}")
        seen_units.add(uid)
        fs.add_unit(kind, params, unit_id=uid)

    seen_streams = set()
    for i, entry in enumerate(streams):
        ptr = f"/streams/{i}"
        if not isinstance(entry, dict):
            raise SchemaError(ptr, "expected an object")
        sid = _require(entry, "id", str, ptr)
        if sid in seen_streams:
            raise SchemaError(f"{ptr}/id", f"duplicate stream id {sid!r}")
        seen_streams.add(sid)
        if "from" not in entry:
            raise SchemaError(f"{ptr}/from", "missing required key")
        if "to" not in entry:
            raise SchemaError(f"{ptr}/to", "missing required key")
        src = _endpoint(entry["from"], f"{ptr}/from")
        dst = _endpoint(entry["to"], f"{ptr}/to")
        for end, name in ((src, "from"), (dst, "to")):
            if end[0] not in fs.units:
                raise SchemaError(f"{ptr}/{name}", f"stream {sid!r} references absent unit {end[0]!r}")
        fs.connect(src, dst, stream_id=sid)
        if entry.get("state") is not None:
            try:
                fs.streams[sid].state = StreamState.from_dict(entry["state"])
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise SchemaError(f"{ptr}/state", f"malformed stream state ({exc})") from None
    return fs


def dumps(fs: Flowsheet) -> str:
    return json.dumps(to_dict(fs), indent=2, sort_keys=False) + "\n"


def save_design(fs: Flowsheet, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(fs), encoding="utf-8")
    return path


def load_design(path: str | Path) -> Flowsheet:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from None
    return from_dict(doc)
