"""Five-dimension scoring of simulated flowsheets and the weighted total score."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol

from . import components as db
from .flowsheet import Flowsheet, Violation, validate_topology
from .simulator import SimulationResult

DIMENSIONS = ("Ef", "Es", "Ps", "Tf", "Tr")
DEFAULT_WEIGHTS = (0.35, 0.25, 0.15, 0.15, 0.10)
DEFAULT_LAMBDA = 0.3

SEVERE_T = 500.0  # K
SEVERE_P = 20e5  # Pa
# dimension directives fire only below this score
DIRECTIVE_FLOOR = 80.0


def _clamp(v: float) -> float:
    return min(100.0, max(0.0, v))


@dataclass(frozen=True)
class DimensionScores:
    Ef: float
    Es: float
    Ps: float
    Tf: float
    Tr: float

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in DIMENSIONS)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EvalWeights:
    w: tuple[float, float, float, float, float] = DEFAULT_WEIGHTS
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self) -> None:
        if len(self.w) != 5 or any(x < 0 for x in self.w):
            raise ValueError("need five non-negative dimension weights")
        if abs(sum(self.w) - 1.0) > 1e-12:
            raise ValueError(f"dimension weights sum to {sum(self.w)}, not 1")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("penalty factor must lie in (0, 1)")


@dataclass
class EvalResult:
    score: float
    penalized: bool
    dims: DimensionScores
    raw_score: float
    directives: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "penalized": self.penalized,
            "raw_score": self.raw_score,
            "dims": self.dims.to_dict(),
            "directives": list(self.directives),
        }


class DimensionScorer(Protocol):
    def __call__(self, fs: Flowsheet, sim: SimulationResult, task=None) -> DimensionScores: ...


# ---------------------------------------------------------------------------
# Heuristic scorer
# ---------------------------------------------------------------------------


def _mass(flows: dict[str, float]) -> float:
    return sum(v * db.get(c).molar_mass for c, v in flows.items())


def _product_flows(fs: Flowsheet, sim: SimulationResult) -> list[dict[str, float]]:
    out = []
    for u in fs.units_of("Product"):
        for s in fs.inlet_streams(u.id).values():
            st = sim.streams.get(s.id)
            if st is not None:
                out.append(st.flows)
    return out


def _severe_units(fs: Flowsheet) -> list[str]:
    out = []
    for u in fs.sorted_units():
        temps = [u.params[k] for k in ("T", "T_out") if k in u.params]
        press = [u.params[k] for k in ("P", "P_out") if k in u.params]
        if any(t > SEVERE_T for t in temps) or any(p > SEVERE_P for p in press):
            out.append(u.id)
    return out


def heater_duty_mj(sim: SimulationResult) -> float:
    return sum(abs(d) for d in sim.duties.values()) / 1000.0


def score_dimensions(fs: Flowsheet, sim: SimulationResult, task=None,
                     violations: Optional[list[Violation]] = None) -> DimensionScores:
    """Deterministic rule-based scores, each clamped to [0, 100]."""
    if violations is None:
        violations = validate_topology(fs)
    unreachable = sum(v.code == "UnreachableUnit" for v in violations)
    tr = 100.0 - 10.0 * len(violations) - 5.0 * unreachable

    if sim.converged:
        tf = 100.0 - 2.0 * max(0, sim.iterations - 20)
    else:
        tf = 40.0 * max(0.0, 1.0 - sim.tear_residual)

    ef = 100.0 - 3.0 * len(fs.units) - 0.05 * heater_duty_mj(sim)

    fed = sum(_mass(u.params["flows"]) for u in fs.units_of("Feed"))
    produced = sum(_mass(f) for f in _product_flows(fs, sim))
    ratio = produced / fed if fed > 0 else 0.0
    waste = sum(v.code == "UnboundPort" and v.direction == "out" for v in violations)
    es = 100.0 * ratio - 10.0 * waste

    flammable = sum(db.get(c).flammable for c in fs.components)
    ps = 100.0 - 15.0 * flammable - 10.0 * len(_severe_units(fs))

    return DimensionScores(_clamp(ef), _clamp(es), _clamp(ps), _clamp(tf), _clamp(tr))


def constant_scorer(value: float = 50.0) -> Callable[..., DimensionScores]:
    """Scorer stub returning the same value on every dimension."""
    dims = DimensionScores(value, value, value, value, value)

    def scorer(fs, sim, task=None):
        return dims

    return scorer


# ---------------------------------------------------------------------------
# Weighted total
# ---------------------------------------------------------------------------


def combine_scores(dims: DimensionScores, converged: bool, weights: EvalWeights = EvalWeights()) -> EvalResult:
    """Weighted sum of the five dimensions; failed simulations are scaled by lambda."""
    w1, w2, w3, w4, w5 = weights.w
    raw = w1 * dims.Ef + w2 * dims.Es + w3 * dims.Ps + w4 * dims.Tf + w5 * dims.Tr
    raw = min(100.0, max(0.0, raw))
    if converged:
        return EvalResult(raw, False, dims, raw)
    return EvalResult(weights.lam * raw, True, dims, raw)


# ---------------------------------------------------------------------------
# Improvement directives
# ---------------------------------------------------------------------------


def _temperature_unit_downstream(fs: Flowsheet, start: str) -> Optional[str]:
    """First Heater/Flash reached from ``start`` following streams (id order)."""
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for uid in frontier:
            if fs.units[uid].kind in ("Heater", "Flash"):
                return uid
            for port in sorted(fs.outlet_streams(uid)):
                v = fs.outlet_streams(uid)[port].target[0]
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return None


def _violation_directive(fs: Flowsheet, v: Violation) -> list[str]:
    kind = fs.units[v.unit].kind if v.unit in fs.units else ""
    if v.code == "UnboundPort":
        side = "outlet" if v.direction == "out" else "inlet"
        return [f"connect {kind} {v.unit} {side} {v.port}"]
    if v.code == "NoFeed":
        return ["add Feed"]
    if v.code == "NoProduct":
        return ["add Product"]
    if v.code == "EmptyComponents":
        return ["add component"]
    if v.code == "UnreachableUnit":
        return [f"remove {kind} {v.unit}"]
    if v.code == "DisconnectedProduct":
        return [f"route {kind} {v.unit} to Product"]
    if v.code == "UndeclaredComponent":
        return [f"declare component {c}" for c in v.detail.split(",") if c]
    return []


def emit_directives(fs: Flowsheet, sim: SimulationResult, dims: DimensionScores,
                    violations: Optional[list[Violation]] = None) -> list[str]:
    """Structured improvement hints, one per triggered rule, in fixed order."""
    if violations is None:
        violations = validate_topology(fs)
    out: list[str] = []

    if sim.failure_reason == "NotConverged" and sim.tear_residuals:
        worst = max(sorted(sim.tear_residuals), key=lambda sid: sim.tear_residuals[sid])
        stream = fs.streams.get(worst)
        target = _temperature_unit_downstream(fs, stream.target[0]) if stream else None
        if target is not None:
            out.append(f"relax tear {worst} via {fs.units[target].kind} {target}")
        else:
            out.append(f"relax tear {worst}")
    elif sim.failure_reason == "PropertyRangeExceeded" and sim.failed_unit in fs.units:
        uid = sim.failed_unit
        out.append(f"retune {fs.units[uid].kind} {uid} temperature into property range")
    elif sim.failure_reason == "InfeasibleConversion" and sim.failed_unit in fs.units:
        uid = sim.failed_unit
        out.append(f"lower conversion {fs.units[uid].kind} {uid}")

    for v in violations:
        out.extend(_violation_directive(fs, v))

    scores = dims.to_dict()
    lowest = min(DIMENSIONS, key=lambda n: (scores[n], DIMENSIONS.index(n)))
    if scores[lowest] < DIRECTIVE_FLOOR:
        out.append(_dimension_directive(fs, sim, lowest, violations))
    return out


def _dimension_directive(fs: Flowsheet, sim: SimulationResult, dim: str, violations: list[Violation]) -> str:
    if dim == "Ef":
        duty_term = 0.05 * heater_duty_mj(sim)
        if sim.duties and duty_term > 3.0 * len(fs.units):
            uid = max(sorted(sim.duties), key=lambda k: abs(sim.duties[k]))
            return f"reduce duty {fs.units[uid].kind} {uid}"
        return "reduce unit count"
    if dim == "Ps":
        severe = _severe_units(fs)
        if severe and 10.0 * len(severe) >= 15.0 * sum(db.get(c).flammable for c in fs.components):
            return f"moderate conditions {fs.units[severe[0]].kind} {severe[0]}"
        return "add safeguards for flammable inventory"
    if dim == "Es":
        return "increase product recovery"
    if dim == "Tf":
        return "improve convergence robustness"
    return "fix topology"


def evaluate(fs: Flowsheet, sim: SimulationResult, task=None, scorer: Optional[DimensionScorer] = None,
             weights: EvalWeights = EvalWeights()) -> EvalResult:
    """Score, combine and attach directives in one call."""
    violations = validate_topology(fs)
    if scorer is None:
        dims = score_dimensions(fs, sim, task, violations)
    else:
        dims = scorer(fs, sim, task)
    result = combine_scores(dims, sim.converged, weights)
    result.directives = emit_directives(fs, sim, dims, violations)
    return result
