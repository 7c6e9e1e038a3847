"""Sequential-modular steady-state simulator.

Units are solved one at a time in calculation order. Recycle loops are cut at
tear streams whose guessed states are iterated by direct substitution, with a
bounded Wegstein step every fourth iteration.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import networkx as nx

from . import components as db
from .errors import InfeasibleConversion, PropertyRangeExceeded
from .flowsheet import Flowsheet, PropertyMethod, StreamState, UnitOp, id_key, validate_topology
from .thermo import flash_tp

log = logging.getLogger(__name__)

BALANCE_TOL = 1e-8
WEGSTEIN_EVERY = 4
WEGSTEIN_BOUNDS = (-5.0, 0.0)
FLOW_FLOOR = 1e-10  # kmol/h; below this a tear flow change is judged absolutely


@dataclass
class UnitResult:
    outlets: list[StreamState]
    duty: Optional[float] = None  # kJ/h
    generation: dict[str, float] = field(default_factory=dict)  # kmol/h


@dataclass
class SimulationResult:
    converged: bool
    iterations: int
    streams: dict[str, StreamState]
    component_balance_residual: Optional[float]
    tear_residual: float
    failure_reason: Optional[str] = None
    failure_detail: str = ""
    failed_unit: Optional[str] = None
    sequence: list[str] = field(default_factory=list)
    tear_streams: list[str] = field(default_factory=list)
    tear_residuals: dict[str, float] = field(default_factory=dict)
    duties: dict[str, float] = field(default_factory=dict)
    generation: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "streams": {k: self.streams[k].to_dict() for k in sorted(self.streams, key=id_key)},
            "component_balance_residual": self.component_balance_residual,
            "tear_residual": self.tear_residual,
            "failure_reason": self.failure_reason,
            "failure_detail": self.failure_detail,
            "failed_unit": self.failed_unit,
            "sequence": list(self.sequence),
            "tear_streams": list(self.tear_streams),
            "tear_residuals": dict(sorted(self.tear_residuals.items(), key=lambda kv: id_key(kv[0]))),
            "duties": dict(sorted(self.duties.items(), key=lambda kv: id_key(kv[0]))),
            "generation": dict(self.generation),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SimulationResult":
        return cls(
            converged=doc["converged"],
            iterations=doc["iterations"],
            streams={k: StreamState.from_dict(v) for k, v in doc["streams"].items()},
            component_balance_residual=doc["component_balance_residual"],
            tear_residual=doc["tear_residual"],
            failure_reason=doc.get("failure_reason"),
            failure_detail=doc.get("failure_detail", ""),
            failed_unit=doc.get("failed_unit"),
            sequence=list(doc.get("sequence", [])),
            tear_streams=list(doc.get("tear_streams", [])),
            tear_residuals=dict(doc.get("tear_residuals", {})),
            duties=dict(doc.get("duties", {})),
            generation=dict(doc.get("generation", {})),
        )


# ---------------------------------------------------------------------------
# Unit models
# ---------------------------------------------------------------------------


def _zero(ids: Sequence[str]) -> dict[str, float]:
    return {c: 0.0 for c in ids}


def simulate_unit(unit: UnitOp, inlets: Sequence[StreamState], ids: Sequence[str],
                  method: Optional[PropertyMethod] = None) -> UnitResult:
    """Outlet states of one unit given its inlet states (ordered by port)."""
    kind, p = unit.kind, unit.params
    if kind == "Feed":
        flows = _zero(ids)
        flows.update(p["flows"])
        return UnitResult([StreamState(flows, p["T"], p["P"])])
    if kind == "Product":
        return UnitResult([])

    if kind == "Mixer":
        flows = _zero(ids)
        for s in inlets:
            for c, v in s.flows.items():
                flows[c] = flows.get(c, 0.0) + v
        totals = [s.total for s in inlets]
        total = sum(totals)
        if total > 0:
            T = sum(t * s.T for t, s in zip(totals, inlets)) / total
        else:
            T = sum(s.T for s in inlets) / len(inlets)
        return UnitResult([StreamState(flows, T, min(s.P for s in inlets))])

    feed = inlets[0]
    if kind == "Splitter":
        fractions = p["fractions"]
        outs = []
        remaining = dict(feed.flows)
        for k, frac in enumerate(fractions):
            if k == len(fractions) - 1:
                flows = {c: max(v, 0.0) for c, v in remaining.items()}
            else:
                flows = {c: frac * v for c, v in feed.flows.items()}
                for c, v in flows.items():
                    remaining[c] -= v
            outs.append(StreamState(flows, feed.T, feed.P, feed.vapor_fraction))
        return UnitResult(outs)
    if kind == "Heater":
        duty = sum(n * db.get(c).cp_liq for c, n in feed.flows.items()) * (p["T_out"] - feed.T)
        return UnitResult([StreamState(dict(feed.flows), p["T_out"], feed.P)], duty=duty)
    if kind in ("Pump", "Valve"):
        return UnitResult([StreamState(dict(feed.flows), feed.T, p["P_out"], feed.vapor_fraction)])
    if kind == "Flash":
        return UnitResult(_flash(feed, ids, p["T"], p["P"], method))
    if kind == "ComponentSplitter":
        sf = p["split_fractions"]
        top = {c: sf.get(c, 0.0) * v for c, v in feed.flows.items()}
        bottom = {c: max(v - top[c], 0.0) for c, v in feed.flows.items()}
        return UnitResult([StreamState(top, feed.T, feed.P), StreamState(bottom, feed.T, feed.P)])
    if kind == "ConversionReactor":
        return _react(unit, feed, ids)
    raise ValueError(f"no model for unit kind {kind!r}")


def _flash(feed: StreamState, ids: Sequence[str], T: float, P: float,
           method: Optional[PropertyMethod]) -> list[StreamState]:
    order = list(ids) + [c for c in feed.flows if c not in ids]
    n = [feed.flows.get(c, 0.0) for c in order]
    total = sum(n)
    if total <= 0:
        return [StreamState(_zero(order), T, P, 1.0), StreamState(_zero(order), T, P, 0.0)]
    z = [v / total for v in n]
    beta, _x, y = flash_tp(order, z, T, P, method)
    vapor = {c: beta * total * yi for c, yi in zip(order, y)}
    liquid = {c: max(ni - vapor[c], 0.0) for c, ni in zip(order, n)}
    return [StreamState(vapor, T, P, 1.0), StreamState(liquid, T, P, 0.0)]


def _react(unit: UnitOp, feed: StreamState, ids: Sequence[str]) -> UnitResult:
    p = unit.params
    stoich = p["stoichiometry"]
    key = p["key_component"]
    n_key = feed.flows.get(key, 0.0)
    extent = p["conversion"] * n_key / abs(stoich[key])
    flows = dict(feed.flows)
    generation = {}
    scale = max(feed.total, 1.0)
    for c, nu in stoich.items():
        new = flows.get(c, 0.0) + nu * extent
        if new < -1e-12 * scale:
            raise InfeasibleConversion(
                f"{unit.id}: conversion {p['conversion']} drives {c} negative ({new:.6g} kmol/h)", unit.id
            )
        flows[c] = max(new, 0.0)
        generation[c] = flows[c] - feed.flows.get(c, 0.0)
    return UnitResult([StreamState(flows, feed.T, feed.P)], generation=generation)


# ---------------------------------------------------------------------------
# Calculation order
# ---------------------------------------------------------------------------


def order_units(fs: Flowsheet) -> tuple[list[str], list[str]]:
    """Calculation sequence and tear streams.

    Each strongly connected component with a cycle is cut at the back edges
    of a depth-first search started from its entry unit; the remaining graph
    is sorted topologically with ties broken by natural id order.
    """
    unit_ids = sorted(fs.units, key=id_key)
    streams = sorted(fs.streams.values(), key=lambda s: (id_key(s.source[0]), s.source[1], id_key(s.id)))
    graph = nx.DiGraph()
    graph.add_nodes_from(unit_ids)
    graph.add_edges_from((s.source[0], s.target[0]) for s in streams)

    tears: list[str] = []
    sccs = sorted(nx.strongly_connected_components(graph), key=lambda c: min(id_key(u) for u in c))
    for scc in sccs:
        internal = [s for s in streams if s.source[0] in scc and s.target[0] in scc]
        if len(scc) == 1 and not internal:
            continue
        entries = sorted({s.target[0] for s in streams if s.target[0] in scc and s.source[0] not in scc}, key=id_key)
        roots = entries + [u for u in sorted(scc, key=id_key) if u not in entries]
        out_edges: dict[str, list] = {}
        for s in internal:
            out_edges.setdefault(s.source[0], []).append(s)
        color: dict[str, int] = {}

        def visit(u: str) -> None:
            color[u] = 1
            for s in out_edges.get(u, []):
                v = s.target[0]
                state = color.get(v, 0)
                if state == 1:
                    tears.append(s.id)
                elif state == 0:
                    visit(v)
            color[u] = 2

        for root in roots:
            if color.get(root, 0) == 0:
                visit(root)

    cut = set(tears)
    indeg = {u: 0 for u in unit_ids}
    succ: dict[str, list[str]] = {u: [] for u in unit_ids}
    for s in streams:
        if s.id not in cut:
            indeg[s.target[0]] += 1
            succ[s.source[0]].append(s.target[0])
    heap = [id_key(u) for u in unit_ids if indeg[u] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)[2]
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, id_key(v))
    return order, sorted(tears, key=id_key)


# ---------------------------------------------------------------------------
# Flowsheet solve
# ---------------------------------------------------------------------------


def _balance(fs: Flowsheet, states: dict[str, StreamState], generation: dict[str, float],
             ids: Sequence[str]) -> float:
    comps = list(ids)
    for c in generation:
        if c not in comps:
            comps.append(c)
    fed = {c: 0.0 for c in comps}
    for u in fs.units_of("Feed"):
        for c, v in u.params["flows"].items():
            fed[c] = fed.get(c, 0.0) + v
    out = {c: 0.0 for c in comps}
    for u in fs.units_of("Product"):
        for s in fs.inlet_streams(u.id).values():
            st = states.get(s.id)
            if st is not None:
                for c, v in st.flows.items():
                    out[c] = out.get(c, 0.0) + v
    floor = 1e-9 * max(sum(fed.values()), 1e-300)
    worst = 0.0
    for c in comps:
        gen = generation.get(c, 0.0)
        scale = max(fed.get(c, 0.0), abs(gen), floor)
        worst = max(worst, abs(fed.get(c, 0.0) - out.get(c, 0.0) + gen) / scale)
    return worst


def _vector(state: StreamState, keys: Sequence[str]) -> list[float]:
    return [state.flows.get(c, 0.0) for c in keys] + [state.T]


def _relative_change(x: list[float], g: list[float]) -> float:
    worst = 0.0
    for xi, gi in zip(x[:-1], g[:-1]):
        worst = max(worst, abs(gi - xi) / max(abs(gi), FLOW_FLOOR))
    return max(worst, abs(g[-1] - x[-1]) / abs(g[-1]))


def _wegstein(x: list[float], g: list[float], x_prev: list[float], g_prev: list[float]) -> list[float]:
    lo, hi = WEGSTEIN_BOUNDS
    out = []
    for xi, gi, xp, gp in zip(x, g, x_prev, g_prev):
        dx = xi - xp
        if abs(dx) <= 1e-14 * max(1.0, abs(xi)):
            q = 0.0
        else:
            s = (gi - gp) / dx
            q = lo if s == 1.0 else s / (s - 1.0)
            q = min(max(q, lo), hi)
        out.append(q * xi + (1.0 - q) * gi)
    return out


def run_simulation(fs: Flowsheet, tol: float = 1e-6, max_iter: int = 200,
                   accelerate: bool = True) -> SimulationResult:
    """Solve the flowsheet; failures are reported in the result, never raised."""
    violations = validate_topology(fs)
    if violations:
        return SimulationResult(
            converged=False,
            iterations=0,
            streams={},
            component_balance_residual=None,
            tear_residual=1.0,
            failure_reason="TopologyInvalid",
            failure_detail=", ".join(str(v) for v in violations),
        )

    ids = list(fs.components)
    method = fs.property_method
    sequence, tears = order_units(fs)
    feeds = fs.units_of("Feed")
    t_init = sum(u.params["T"] for u in feeds) / len(feeds)
    p_init = sum(u.params["P"] for u in feeds) / len(feeds)
    guesses = {sid: StreamState(_zero(ids), t_init, p_init) for sid in tears}
    tear_set = set(tears)
    keys = {sid: list(ids) for sid in tears}
    inlet_map = {u: fs.inlet_streams(u) for u in fs.units}
    outlet_map = {u: fs.outlet_streams(u) for u in fs.units}
    history: dict[str, tuple[list[float], list[float]]] = {}

    states: dict[str, StreamState] = {}
    tear_residuals: dict[str, float] = {}
    tear_residual = 0.0
    balance: Optional[float] = None
    duties: dict[str, float] = {}
    generation: dict[str, float] = {}

    for it in range(1, max_iter + 1):
        states = {sid: guesses[sid] for sid in tears}
        computed: dict[str, StreamState] = {}
        duties = {}
        generation = {}
        current_unit = None
        try:
            for uid in sequence:
                current_unit = uid
                unit = fs.units[uid]
                n_in = unit.arity[0]
                inlets = [states[inlet_map[uid][p].id] for p in range(n_in)]
                res = simulate_unit(unit, inlets, ids, method)
                for port, out in enumerate(res.outlets):
                    sid = outlet_map[uid][port].id
                    if sid in tear_set:
                        computed[sid] = out
                    else:
                        states[sid] = out
                if res.duty is not None:
                    duties[uid] = res.duty
                for c, v in res.generation.items():
                    generation[c] = generation.get(c, 0.0) + v
        except (PropertyRangeExceeded, InfeasibleConversion) as exc:
            reason = "PropertyRangeExceeded" if isinstance(exc, PropertyRangeExceeded) else "InfeasibleConversion"
            log.debug("simulation of %s failed at %s: %s", fs.id, current_unit, exc)
            return SimulationResult(
                converged=False,
                iterations=it,
                streams=dict(states),
                component_balance_residual=None,
                tear_residual=tear_residual if it > 1 else 1.0,
                failure_reason=reason,
                failure_detail=str(exc),
                failed_unit=current_unit,
                sequence=sequence,
                tear_streams=tears,
                tear_residuals=tear_residuals,
                duties=duties,
                generation=generation,
            )

        balance = _balance(fs, states, generation, ids)
        if not tears:
            return SimulationResult(True, it, states, balance, 0.0, sequence=sequence,
                                    duties=duties, generation=generation)

        tear_residuals = {}
        for sid in tears:
            x = _vector(guesses[sid], keys[sid])
            g = _vector(computed[sid], keys[sid])
            tear_residuals[sid] = _relative_change(x, g)
        tear_residual = max(tear_residuals.values())
        if tear_residual < tol and balance <= BALANCE_TOL:
            states.update(computed)
            return SimulationResult(True, it, states, balance, tear_residual, sequence=sequence,
                                    tear_streams=tears, tear_residuals=tear_residuals,
                                    duties=duties, generation=generation)

        for sid in tears:
            x = _vector(guesses[sid], keys[sid])
            g = _vector(computed[sid], keys[sid])
            if accelerate and it % WEGSTEIN_EVERY == 0 and sid in history:
                new = _wegstein(x, g, *history[sid])
            else:
                new = g
            history[sid] = (x, g)
            flows = {c: max(v, 0.0) for c, v in zip(keys[sid], new[:-1])}
            T = new[-1] if new[-1] > 0 else g[-1]
            guesses[sid] = StreamState(flows, T, computed[sid].P, computed[sid].vapor_fraction)

    states.update(computed)
    return SimulationResult(
        converged=False,
        iterations=max_iter,
        streams=states,
        component_balance_residual=balance,
        tear_residual=tear_residual,
        failure_reason="NotConverged",
        failure_detail=f"tear residual {tear_residual:.3g} after {max_iter} iterations",
        sequence=sequence,
        tear_streams=tears,
        tear_residuals=tear_residuals,
        duties=duties,
        generation=generation,
    )
