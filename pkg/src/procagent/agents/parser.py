"""Rule-based task understanding: free text to :class:`TaskSpec`."""

from __future__ import annotations

import re
from typing import Optional

from .. import components as db
from ..errors import EmptyTask, UnderspecifiedTask
from ..task import Constraint, FeedSpec, Objective, TaskSpec

_NUM = r"(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"

THERMO_WORDS = re.compile(
    r"azeotrop|\bvle\b|vapou?r[- ]liquid equilibri|phase equilibri|phase diagram|\bt-?x-?y\b",
    re.I,
)
DESIGN_WORDS = re.compile(
    r"\bdesign|\bprocess\b|flowsheet|separat|purif|\bproduc|recover|distill|\bflash|recycle|reactor|plant\b|\bheat",
    re.I,
)
MARGULES_WORDS = re.compile(r"margules|non-?ideal|activity coefficient", re.I)
IDEAL_WORDS = re.compile(r"\bideal\b|raoult", re.I)
SEPARATION_VERB = re.compile(r"\b(?:recover|purif|separat|distil)\w*", re.I)

TEMPERATURE = re.compile(_NUM + r"\s*(°\s*C|deg\s*C|celsius|K)\b", re.I)
PRESSURE = re.compile(_NUM + r"\s*(MPa|kPa|bar|Pa|atm)\b")
FLOW = re.compile(_NUM + r"\s*kmol\s*/\s*h(?:r)?\b", re.I)
PERCENT = re.compile(_NUM + r"\s*(?:mol\s*)?%")
TARGET_SCORE = re.compile(r"target score(?: of)?\s*" + _NUM, re.I)

UPPER = re.compile(r"(below|under|not exceed|exceeding|maximum|max\.?|at most|no more than|up to|limit)\W*(?:\w+\W+){0,3}$", re.I)
LOWER = re.compile(r"(above|at least|minimum|min\.?|no less than)\W*(?:\w+\W+){0,3}$", re.I)

_PA = {"pa": 1.0, "kpa": 1e3, "mpa": 1e6, "bar": 1e5, "atm": 101325.0}


def _synonym_pattern() -> re.Pattern:
    names = sorted(db.SYNONYMS, key=len, reverse=True)
    return re.compile(r"(?<![\w-])(" + "|".join(re.escape(n) for n in names) + r")(?!\w)", re.I)


_COMPONENT = _synonym_pattern()


def _components(text: str) -> list[tuple[int, int, str]]:
    return [(m.start(), m.end(), db.SYNONYMS[m.group(1).lower()]) for m in _COMPONENT.finditer(text)]


def _kelvin(value: float, unit: str) -> float:
    return value if unit.upper() == "K" else value + 273.15


def _clauses(text: str) -> list[tuple[int, str]]:
    out = []
    pos = 0
    for piece in re.split(r"(?<=[.;])\s+|\n+", text):
        start = text.find(piece, pos)
        out.append((start, piece))
        pos = start + len(piece)
    return out


def _nearest_component(mentions, start: int, end: int, lo: int, hi: int) -> Optional[str]:
    """Component mentioned closest to [start, end) within [lo, hi)."""
    best = None
    for s, e, cid in mentions:
        if s < lo or e > hi:
            continue
        dist = s - end if s >= end else start - e
        if dist < 0:
            continue
        if best is None or dist < best[0]:
            best = (dist, cid)
    return best[1] if best else None


def _object_of_verb(mentions, clause: str, lo: int) -> Optional[str]:
    """First component named after a separation verb ("recover methanol")."""
    verb = SEPARATION_VERB.search(clause)
    if verb is None:
        return None
    after = [c for s, e, c in mentions if lo + verb.end() <= s < lo + len(clause)]
    return after[0] if after else None


def parse_task(text: str, task_id: str = "task") -> TaskSpec:
    """Extract a structured request from a free-text description."""
    if text is None or not text.strip():
        raise EmptyTask("task description is empty")

    mentions = _components(text)
    components: list[str] = []
    for _, _, cid in mentions:
        if cid not in components:
            components.append(cid)

    thermo = bool(THERMO_WORDS.search(text))
    design = bool(DESIGN_WORDS.search(text))
    kind = "ThermoAnalysis" if thermo and not design else "Design"
    if kind == "ThermoAnalysis" and not components:
        raise UnderspecifiedTask("no known component named in a thermodynamic analysis request")

    flows: dict[str, float] = {}
    total_flow: Optional[float] = None
    fractions: dict[str, float] = {}
    feed_T: Optional[float] = None
    feed_P: Optional[float] = None
    objectives: list[Objective] = []
    constraints: list[Constraint] = []

    for offset, clause in _clauses(text):
        lo, hi = offset, offset + len(clause)
        low = clause.lower()
        is_objective = "purity" in low or "recover" in low

        for m in FLOW.finditer(clause):
            value = float(m.group(1))
            start, end = lo + m.start(), lo + m.end()
            after = re.match(r"\s+(?:of\s+)?", text[end:hi])
            comp = None
            if after:
                nxt = [c for s, e, c in mentions if s == end + after.end()]
                comp = nxt[0] if nxt else None
            if comp is None:
                before = [c for s, e, c in mentions if lo <= s and e <= start and start - e <= 3]
                comp = before[-1] if before else None
            if re.search(r"throughput|capacity", low):
                objectives.append(Objective("Throughput", comp, value))
            elif comp is not None and "equimolar" not in low:
                flows[comp] = flows.get(comp, 0.0) + value
            elif total_flow is None:
                total_flow = value

        for m in PERCENT.finditer(clause):
            value = float(m.group(1)) / 100.0
            start, end = lo + m.start(), lo + m.end()
            adjacent = re.match(r"\s*(?:of\s+)?", text[end:hi])
            follower = [(e, c) for s, e, c in mentions if s == end + adjacent.end()]
            if follower and not re.match(r"\W*(?:purity|recovery)", text[follower[0][0]:hi], re.I):
                # "40% ethanol": a feed composition even inside an objective clause
                fractions[follower[0][1]] = value
            elif is_objective:
                metric = "Purity" if "purity" in low else "Recovery"
                comp = _object_of_verb(mentions, clause, lo) or _nearest_component(mentions, start, end, lo, hi)
                objectives.append(Objective(metric, comp, value))
            else:
                comp = _nearest_component(mentions, start, end, end, min(hi, end + 12))
                if comp is not None:
                    fractions[comp] = value

        for m in TEMPERATURE.finditer(clause):
            value = _kelvin(float(m.group(1)), m.group(2))
            prefix = clause[: m.start()]
            if UPPER.search(prefix):
                constraints.append(Constraint("MaxT", value))
            elif LOWER.search(prefix):
                constraints.append(Constraint("MinT", value))
            elif feed_T is None:
                feed_T = value

        for m in PRESSURE.finditer(clause):
            value = float(m.group(1)) * _PA[m.group(2).lower()]
            prefix = clause[: m.start()]
            if UPPER.search(prefix):
                constraints.append(Constraint("MaxP", value))
            elif LOWER.search(prefix):
                constraints.append(Constraint("MinP", value))
            elif feed_P is None:
                feed_P = value

    if not flows and total_flow is not None:
        if fractions:
            flows = {c: total_flow * f for c, f in fractions.items()}
        elif len(components) == 1 or re.search(r"equimolar|50/50", text, re.I):
            flows = {c: total_flow / len(components) for c in components}

    feeds = [FeedSpec(flows, feed_T, feed_P)] if flows else []
    target = TARGET_SCORE.search(text)

    if MARGULES_WORDS.search(text):
        method = "Margules"
    elif IDEAL_WORDS.search(text):
        method = "IdealRaoult"
    else:
        method = None

    return TaskSpec(
        request_kind=kind,
        components=components,
        feeds=feeds,
        objectives=objectives,
        constraints=constraints,
        target_score=float(target.group(1)) if target else None,
        notes=text,
        id=task_id,
        thermo_precheck=kind == "Design" and thermo,
        property_method=method,
    ).validate()
