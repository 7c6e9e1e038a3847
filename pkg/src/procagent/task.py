"""Structured design request exchanged between the agents."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .errors import UnderspecifiedTask

REQUEST_KINDS = ("Design", "ThermoAnalysis")
METRICS = ("Purity", "Recovery", "Throughput")
CONSTRAINT_QUANTITIES = ("MaxT", "MaxP", "MinT", "MinP")


@dataclass
class FeedSpec:
    flows: dict[str, float]  # kmol/h per component id
    T: Optional[float] = None  # K
    P: Optional[float] = None  # Pa


@dataclass
class Objective:
    metric: str
    component: Optional[str]
    target: float  # fraction for Purity/Recovery, kmol/h for Throughput


@dataclass
class Constraint:
    quantity: str
    value: float  # K or Pa


@dataclass
class TaskSpec:
    request_kind: str
    components: list[str]
    feeds: list[FeedSpec] = field(default_factory=list)
    objectives: list[Objective] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    target_score: Optional[float] = None
    notes: str = ""
    id: str = "task"
    # run the binary VLE check before design
    thermo_precheck: bool = False
    # "IdealRaoult" / "Margules" when the request (or the VLE pre-step) fixes it
    property_method: Optional[str] = None

    def validate(self) -> "TaskSpec":
        if self.request_kind not in REQUEST_KINDS:
            raise ValueError(f"unknown request kind {self.request_kind!r}")
        if self.request_kind == "Design" and not self.components:
            raise UnderspecifiedTask("design request names no known component")
        if self.request_kind == "ThermoAnalysis" and len(self.components) != 2:
            raise UnderspecifiedTask(
                f"thermodynamic analysis needs exactly 2 components, got {len(self.components)}"
            )
        for feed in self.feeds:
            if any(v < 0 for v in feed.flows.values()):
                raise ValueError("feed flows must be non-negative")
            if feed.T is not None and feed.T <= 0:
                raise ValueError("feed temperature must be positive")
            if feed.P is not None and feed.P <= 0:
                raise ValueError("feed pressure must be positive")
        for obj in self.objectives:
            if obj.metric not in METRICS:
                raise ValueError(f"unknown objective metric {obj.metric!r}")
            if obj.metric in ("Purity", "Recovery") and not 0.0 <= obj.target <= 1.0:
                raise ValueError(f"{obj.metric} target must lie in [0, 1]")
            if obj.metric == "Throughput" and obj.target <= 0:
                raise ValueError("throughput target must be positive")
        for con in self.constraints:
            if con.quantity not in CONSTRAINT_QUANTITIES:
                raise ValueError(f"unknown constraint {con.quantity!r}")
            if con.value <= 0:
                raise ValueError(f"{con.quantity} must be positive")
        if self.target_score is not None and not 0.0 <= self.target_score <= 100.0:
            raise ValueError("target_score must lie in [0, 100]")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "TaskSpec":
        return cls(
            request_kind=doc["request_kind"],
            components=list(doc["components"]),
            feeds=[FeedSpec(dict(f["flows"]), f.get("T"), f.get("P")) for f in doc.get("feeds", [])],
            objectives=[Objective(o["metric"], o.get("component"), o["target"]) for o in doc.get("objectives", [])],
            constraints=[Constraint(c["quantity"], c["value"]) for c in doc.get("constraints", [])],
            target_score=doc.get("target_score"),
            notes=doc.get("notes", ""),
            id=doc.get("id", "task"),
            thermo_precheck=bool(doc.get("thermo_precheck", False)),
            property_method=doc.get("property_method"),
        ).validate()

    def constraint(self, quantity: str) -> Optional[float]:
        for con in self.constraints:
            if con.quantity == quantity:
                return con.value
        return None
