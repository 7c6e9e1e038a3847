"""Deterministic seeded proposer used offline and in tests.

Seeds come from a small template library keyed on the task's objectives;
refinement applies evaluator directives literally and otherwise jitters one
operating parameter.
"""

from __future__ import annotations

import logging
import re
import warnings
from typing import Optional, Sequence

import numpy as np

from .. import components as db
from ..errors import FallbackTemplate, ProcAgentError, PropertyRangeExceeded
from ..flowsheet import Flowsheet, create_flowsheet, id_key
from ..task import TaskSpec
from ..thermo import bubble_temperature, dew_temperature, method_for
from .base import ExperienceLog

logger = logging.getLogger(__name__)

JITTER = 0.10
NUDGE_K = 5.0
DEFAULT_FLOW = 100.0  # kmol/h
DEFAULT_T = 300.0
DEFAULT_P = 101325.0

SEPARATION_WORDS = re.compile(r"separat|purif|distill|\bflash|\bsplit", re.I)
RECYCLE_WORDS = re.compile(r"recycle|reflux", re.I)
REACTION_WORDS = re.compile(r"react|hydrat|conver", re.I)
HEATING_WORDS = re.compile(r"\bheat|warm|preheat", re.I)


def _rng(*seed: int) -> np.random.Generator:
    return np.random.default_rng([abs(int(s)) for s in seed])


def _factor(rng: np.random.Generator) -> float:
    f = 1.0 + rng.uniform(-JITTER, JITTER)
    return f if f != 1.0 else 1.0 + JITTER / 2


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def _feed(task: TaskSpec) -> tuple[dict[str, float], float, float]:
    flows: dict[str, float] = {}
    T = P = None
    if task.feeds:
        f = task.feeds[0]
        flows = {c: v for c, v in f.flows.items() if c in task.components}
        T, P = f.T, f.P
    if not flows or sum(flows.values()) <= 0:
        flows = {c: DEFAULT_FLOW / len(task.components) for c in task.components}
    return flows, T or DEFAULT_T, P or DEFAULT_P


def select_template(task: TaskSpec) -> Optional[str]:
    metrics = {o.metric for o in task.objectives}
    if metrics & {"Purity", "Recovery"} or SEPARATION_WORDS.search(task.notes):
        return "recycle" if RECYCLE_WORDS.search(task.notes) else "flash"
    if REACTION_WORDS.search(task.notes) and {"ethylene", "water"} <= set(task.components):
        return "hydration"
    if "Throughput" in metrics or HEATING_WORDS.search(task.notes):
        return "heater"
    return None


def _two_phase_temperature(ids: list[str], flows: dict[str, float], P: float, method) -> Optional[float]:
    total = sum(flows.values())
    z = [flows.get(c, 0.0) / total for c in ids]
    try:
        tb = bubble_temperature(ids, z, P, method)
        td = dew_temperature(ids, z, P)
    except PropertyRangeExceeded:
        return None
    return 0.5 * (tb + td)


def _base(task: TaskSpec, fid: str) -> Flowsheet:
    fs = create_flowsheet(task, flowsheet_id=fid)
    for c in task.components:
        fs.add_component(c)
    variant = task.property_method or "IdealRaoult"
    pm = method_for(fs.components, variant)
    fs.set_property_method(pm.variant, pm.margules_params)
    return fs


def _light_component(ids: list[str]) -> str:
    def psat(c):
        a, b, cc = db.get(c).antoine
        return a - b / (DEFAULT_T + cc)

    return max(ids, key=psat)


def _build(template: str, task: TaskSpec, fid: str, rng: Optional[np.random.Generator]) -> Flowsheet:
    """Instantiate one template variant; ``rng=None`` gives nominal parameters."""
    j = (lambda: 1.0) if rng is None else (lambda: _factor(rng))
    flows, T0, P0 = _feed(task)
    fs = _base(task, fid)
    feed = fs.add_unit("Feed", {"flows": flows, "T": T0, "P": P0})
    max_t = task.constraint("MaxT")

    if template == "flash":
        t_flash = _two_phase_temperature(fs.components, flows, P0, fs.property_method) or T0
        if max_t is not None:
            t_flash = min(t_flash, max_t)
        t_flash *= j()
        p_flash = P0 * j()
        heater = fs.add_unit("Heater", {"T_out": t_flash})
        flash = fs.add_unit("Flash", {"T": t_flash, "P": p_flash})
        top = fs.add_unit("Product")
        bottom = fs.add_unit("Product")
        fs.connect((feed, 0), (heater, 0))
        fs.connect((heater, 0), (flash, 0))
        fs.connect((flash, 0), (top, 0))
        fs.connect((flash, 1), (bottom, 0))
    elif template == "recycle":
        light = _light_component(fs.components)
        split = {c: min(1.0, (0.9 if c == light else 0.1) * j()) for c in fs.components}
        recycle = min(0.9, 0.5 * j())
        mixer = fs.add_unit("Mixer", {"inlets": 2})
        csplit = fs.add_unit("ComponentSplitter", {"split_fractions": split})
        splitter = fs.add_unit("Splitter", {"fractions": [1.0 - recycle, recycle]})
        top = fs.add_unit("Product")
        bottom = fs.add_unit("Product")
        fs.connect((feed, 0), (mixer, 0))
        fs.connect((mixer, 0), (csplit, 0))
        fs.connect((csplit, 0), (top, 0))
        fs.connect((csplit, 1), (splitter, 0))
        fs.connect((splitter, 0), (bottom, 0))
        fs.connect((splitter, 1), (mixer, 1))
    elif template == "hydration":
        fs.add_component("ethanol")
        heater = fs.add_unit("Heater", {"T_out": 450.0 * j()})
        reactor = fs.add_unit(
            "ConversionReactor",
            {
                "stoichiometry": {"ethylene": -1.0, "water": -1.0, "ethanol": 1.0},
                "key_component": "ethylene",
                "conversion": min(1.0, 0.6 * j()),
            },
        )
        csplit = fs.add_unit(
            "ComponentSplitter",
            {"split_fractions": {"ethylene": min(1.0, 0.95 * j()), "water": 0.05, "ethanol": 0.05}},
        )
        gas = fs.add_unit("Product")
        liquid = fs.add_unit("Product")
        fs.connect((feed, 0), (heater, 0))
        fs.connect((heater, 0), (reactor, 0))
        fs.connect((reactor, 0), (csplit, 0))
        fs.connect((csplit, 0), (gas, 0))
        fs.connect((csplit, 1), (liquid, 0))
    elif template == "heater":
        t_out = T0 + 50.0
        if max_t is not None:
            t_out = min(t_out, max_t)
        heater = fs.add_unit("Heater", {"T_out": t_out * j()})
        product = fs.add_unit("Product")
        fs.connect((feed, 0), (heater, 0))
        fs.connect((heater, 0), (product, 0))
    else:
        product = fs.add_unit("Product")
        fs.connect((feed, 0), (product, 0))
    return fs


def mock_seed_configurations(task: TaskSpec, seed: int, count: int = 3) -> list[Flowsheet]:
    """``count`` variants of the matching template: one nominal, the rest jittered."""
    template = select_template(task)
    if template is None:
        warnings.warn(FallbackTemplate(f"no template matches task {task.id!r}; using Feed->Product"), stacklevel=2)
        template = "fallback"
    rng = _rng(seed, 0)
    out = []
    for k in range(count):
        out.append(_build(template, task, f"{task.id}-seed{k}", None if k == 0 else rng))
    if template == "fallback":
        for fs in out[1:]:
            _jitter(fs, rng)
    return out


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


_TEMP_KEY = {"Flash": "T", "Heater": "T_out"}


def _default_feed(fs: Flowsheet) -> dict:
    existing = fs.units_of("Feed")
    if existing:
        return dict(existing[0].params)
    comps = fs.components or ["water"]
    return {"flows": {c: DEFAULT_FLOW / len(comps) for c in comps}, "T": DEFAULT_T, "P": DEFAULT_P}


def _unbound(fs: Flowsheet, side: str) -> list[tuple[str, int]]:
    bound = {s.source if side == "out" else s.target for s in fs.streams.values()}
    out = []
    for u in fs.sorted_units():
        n = u.arity[1] if side == "out" else u.arity[0]
        out.extend((u.id, p) for p in range(n) if (u.id, p) not in bound)
    return out


def _nudge_direction(uid: str, key: str, log: ExperienceLog) -> float:
    pattern = re.compile(rf"(?:^|; ){re.escape(uid)}\.{re.escape(key)}: ([-+\d.eE]+) -> ([-+\d.eE]+)")
    for entry in reversed(log.entries):
        m = pattern.search(entry.summary)
        if m:
            moved = float(m.group(2)) - float(m.group(1))
            direction = 1.0 if moved > 0 else -1.0
            return direction if entry.delta_score > 0 else -direction
    return -1.0


def _feasible_window(fs: Flowsheet) -> tuple[float, float]:
    lo = max(db.get(c).t_range[0] for c in fs.components)
    hi = min(db.get(c).t_range[1] for c in fs.components)
    return lo, hi


def _apply(fs: Flowsheet, directive: str, log: ExperienceLog) -> bool:
    m = re.fullmatch(r"connect (\w+) (\S+) outlet (\d+)", directive)
    if m:
        uid, port = m.group(2), int(m.group(3))
        if (uid, port) not in _unbound(fs, "out"):
            return False
        product = fs.add_unit("Product")
        fs.connect((uid, port), (product, 0))
        return True
    m = re.fullmatch(r"connect (\w+) (\S+) inlet (\d+)", directive)
    if m:
        uid, port = m.group(2), int(m.group(3))
        if (uid, port) not in _unbound(fs, "in"):
            return False
        feed = fs.add_unit("Feed", _default_feed(fs))
        fs.connect((feed, 0), (uid, port))
        return True
    if directive == "add Feed":
        open_inlets = _unbound(fs, "in")
        feed = fs.add_unit("Feed", _default_feed(fs))
        if open_inlets:
            fs.connect((feed, 0), open_inlets[0])
        else:
            product = fs.add_unit("Product")
            fs.connect((feed, 0), (product, 0))
        return True
    if directive == "add Product":
        open_outlets = _unbound(fs, "out")
        if not open_outlets:
            return False
        product = fs.add_unit("Product")
        fs.connect(open_outlets[0], (product, 0))
        return True
    if directive == "add component":
        names = [c for u in fs.units_of("Feed") for c in u.params["flows"] if c not in fs.components]
        for c in names:
            fs.add_component(c)
        return bool(names)
    m = re.fullmatch(r"declare component (\S+)", directive)
    if m:
        fs.add_component(m.group(1))
        return True
    m = re.fullmatch(r"remove (\w+) (\S+)", directive)
    if m:
        fs.cascade_delete(m.group(2))
        return True
    m = re.fullmatch(r"relax tear \S+ via (\w+) (\S+)", directive)
    if m:
        uid = m.group(2)
        key = _TEMP_KEY.get(fs.unit(uid).kind)
        if key is None:
            return False
        params = dict(fs.units[uid].params)
        params[key] = params[key] + NUDGE_K * _nudge_direction(uid, key, log)
        fs.update_params(uid, params)
        return True
    m = re.fullmatch(r"retune (\w+) (\S+) temperature into property range", directive)
    if m:
        uid = m.group(2)
        key = _TEMP_KEY.get(fs.unit(uid).kind)
        if key is None or not fs.components:
            return False
        lo, hi = _feasible_window(fs)
        if lo >= hi:
            return False
        params = dict(fs.units[uid].params)
        params[key] = min(max(params[key], lo + NUDGE_K), hi - NUDGE_K)
        if params[key] == fs.units[uid].params[key]:
            params[key] = 0.5 * (lo + hi)
        fs.update_params(uid, params)
        return True
    m = re.fullmatch(r"lower conversion (\w+) (\S+)", directive)
    if m:
        uid = m.group(2)
        params = dict(fs.unit(uid).params)
        params["conversion"] = params["conversion"] * 0.8
        fs.update_params(uid, params)
        return True
    m = re.fullmatch(r"reduce duty Heater (\S+)", directive)
    if m:
        uid = m.group(1)
        params = dict(fs.unit(uid).params)
        params["T_out"] = params["T_out"] - NUDGE_K
        fs.update_params(uid, params)
        return True
    m = re.fullmatch(r"moderate conditions (\w+) (\S+)", directive)
    if m:
        uid = m.group(2)
        params = dict(fs.unit(uid).params)
        for key in ("T", "T_out"):
            if key in params:
                params[key] = min(params[key], 495.0)
        for key in ("P", "P_out"):
            if key in params:
                params[key] = min(params[key], 19.5e5)
        if params == fs.units[uid].params:
            return False
        fs.update_params(uid, params)
        return True
    return False


def _jitter_candidates(fs: Flowsheet) -> list[tuple[str, str]]:
    out = []
    for u in fs.sorted_units():
        for key in ("T_out", "T", "P", "P_out", "fractions", "split_fractions", "conversion"):
            if key in u.params and u.kind != "Feed":
                out.append((u.id, key))
    if not out:
        out = [(u.id, "T") for u in fs.units_of("Feed")]
    return out


def _jitter(fs: Flowsheet, rng: np.random.Generator) -> Optional[str]:
    """Scale one randomly chosen operating parameter by up to +-10%."""
    candidates = _jitter_candidates(fs)
    if not candidates:
        return None
    uid, key = candidates[int(rng.integers(len(candidates)))]
    params = dict(fs.units[uid].params)
    factor = _factor(rng)
    if key == "fractions":
        fr = list(params[key])
        k = int(rng.integers(len(fr)))
        new = min(1.0, max(0.0, fr[k] * factor))
        rest = 1.0 - fr[k]
        others = [i for i in range(len(fr)) if i != k]
        for i in others:
            fr[i] = fr[i] * (1.0 - new) / rest if rest > 0 else (1.0 - new) / len(others)
        fr[k] = new
        fr[others[-1]] = 1.0 - sum(fr[i] for i in range(len(fr)) if i != others[-1])
        params[key] = fr
    elif key == "split_fractions":
        sf = dict(params[key])
        if not sf:
            return None
        names = sorted(sf)
        c = names[int(rng.integers(len(names)))]
        sf[c] = min(1.0, max(0.0, sf[c] * factor))
        params[key] = sf
    elif key == "conversion":
        params[key] = min(1.0, params[key] * factor)
    else:
        params[key] = params[key] * factor
    fs.update_params(uid, params)
    return f"{uid}.{key}"


def mock_refine(fs: Flowsheet, directives: Sequence[str], log: ExperienceLog, seed: int) -> Flowsheet:
    """Apply directives in order; fall back to jittering one parameter."""
    new = fs.copy()
    new.clear_states()
    rng = _rng(seed, 1)
    applied = False
    for directive in directives:
        try:
            ok = _apply(new, directive, log)
        except ProcAgentError as exc:
            logger.info("skipping directive %r: %s", directive, exc)
            continue
        if ok:
            applied = True
        else:
            logger.info("skipping directive %r: not applicable", directive)
    if not applied or new.fingerprint() == fs.fingerprint():
        _jitter(new, rng)
    return new


class MockProposer:
    """Offline proposer satisfying the same contract as the LLM backend."""

    name = "mock"

    def seed_configurations(self, task: TaskSpec, seed: int) -> list[Flowsheet]:
        return mock_seed_configurations(task, seed)

    def refine(self, fs: Flowsheet, directives: Sequence[str], log: ExperienceLog, seed: int) -> Flowsheet:
        return mock_refine(fs, directives, log, seed)
