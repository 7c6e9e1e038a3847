"""Tree search over complete process configurations.

Every non-root node holds a whole flowsheet together with its simulation and
evaluation. Selection blends realized score with refinement potential, an
exploration term that decays with search progress and a small bonus for
recent improvement, score spread and depth. When the best score stalls, the
runner-up nodes with the widest potential gap get a second expansion.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import statistics
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .agents.base import ExperienceLog, LogEntry, Proposer
from .errors import DuplicateChildren, NoRevisitCandidate, ProcAgentError, SeedGenerationFailed
from .evaluator import DimensionScorer, EvalResult, EvalWeights, evaluate
from .flowsheet import Flowsheet, describe_changes
from .simulator import SimulationResult, run_simulation
from .task import TaskSpec

logger = logging.getLogger(__name__)

ROOT = 0
TERMINATION_REASONS = ("TargetReached", "IterationLimit", "Stagnation", "Converged")

Simulate = Callable[[Flowsheet], SimulationResult]


@dataclass(frozen=True)
class SearchConfig:
    alpha0: float = 0.3
    alpha_max: float = 0.8
    c0: float = math.sqrt(2.0)
    w_r: float = 0.1
    w_v: float = 0.05
    w_d: float = 0.05
    d_cap: int = 5
    lam: float = 0.3
    children_per_expansion: int = 3
    initial_nodes: int = 3
    target_score: float = 85.0
    max_iterations: int = 15
    stagnation_window: int = 3
    flat_delta: float = 0.5
    theta_v: float = 0.6
    eps_s: float = 1.0
    stability_window: int = 5
    final_weights: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 42
    workers: int = 1
    sim_tol: float = 1e-6
    sim_max_iter: int = 200

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha0 <= self.alpha_max <= 1.0:
            raise ValueError("need 0 <= alpha0 <= alpha_max <= 1")
        if self.c0 < 0:
            raise ValueError("c0 must be non-negative")
        if min(self.w_r, self.w_v, self.w_d) < 0:
            raise ValueError("bonus weights must be non-negative")
        if self.d_cap < 1:
            raise ValueError("d_cap must be at least 1")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.children_per_expansion < 1 or self.initial_nodes < 1:
            raise ValueError("node counts must be positive")
        if self.max_iterations < 0 or self.stagnation_window < 1 or self.stability_window < 1:
            raise ValueError("iteration counts out of range")
        if len(self.final_weights) != 3 or abs(sum(self.final_weights) - 1.0) > 1e-12:
            raise ValueError("final weights must be three numbers summing to 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class SearchNode:
    id: int
    parent: Optional[int]
    depth: int
    flowsheet: Optional[Flowsheet] = None
    children: list[int] = field(default_factory=list)
    v: int = 0
    eval: Optional[EvalResult] = None
    sim: Optional[SimulationResult] = None
    v_imm: float = 0.0
    v_pot: float = 0.0
    revisited: bool = False
    score_history: list[float] = field(default_factory=list)

    @property
    def score(self) -> float:
        return self.eval.score if self.eval is not None else 0.0

    @property
    def evaluated(self) -> bool:
        return self.eval is not None


@dataclass
class SearchState:
    task: TaskSpec
    nodes: dict[int, SearchNode]
    pool: list[int] = field(default_factory=list)
    t: int = 0
    best_trace: list[float] = field(default_factory=list)
    reason: Optional[str] = None
    log: ExperienceLog = field(default_factory=ExperienceLog)
    trace: list[dict] = field(default_factory=list)

    @property
    def root(self) -> SearchNode:
        return self.nodes[ROOT]

    def evaluated_nodes(self) -> list[SearchNode]:
        return [n for n in self.nodes.values() if n.id != ROOT and n.evaluated]

    def best_node(self) -> SearchNode:
        return min(self.evaluated_nodes(), key=lambda n: (-n.score, n.id))

    def record(self, event: str, **fields) -> None:
        self.trace.append({"t": self.t, "event": event, **fields})

    def trace_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


# ---------------------------------------------------------------------------
# Value terms
# ---------------------------------------------------------------------------


def alpha(t: float, cfg: SearchConfig) -> float:
    """Weight on immediate value; ramps linearly from alpha0 to alpha_max."""
    if cfg.max_iterations == 0:
        return cfg.alpha_max
    return cfg.alpha0 + (cfg.alpha_max - cfg.alpha0) * min(1.0, t / cfg.max_iterations)


def exploration(t: float, cfg: SearchConfig) -> float:
    return cfg.c0 / math.sqrt(1.0 + t)


def immediate_value(result: EvalResult) -> float:
    return result.score / 100.0


def potential_value(result: EvalResult) -> float:
    """Half unpenalized score, half best single dimension."""
    return 0.5 * result.raw_score / 100.0 + 0.5 * max(result.dims.as_tuple()) / 100.0


def mix_values(a: float, v_imm: float, v_pot: float) -> float:
    return a * v_imm + (1.0 - a) * v_pot


def combined_value(node: SearchNode, t: float, cfg: SearchConfig) -> float:
    return mix_values(alpha(t, cfg), node.v_imm, node.v_pot)


def psi(node: SearchNode, nodes: dict[int, SearchNode], cfg: SearchConfig) -> float:
    """Bonus for recent improvement, spread among children and depth."""
    h = node.score_history
    improvement = max(0.0, h[-1] - h[-2]) / 100.0 if len(h) >= 2 else 0.0
    child_scores = [nodes[c].score for c in node.children if nodes[c].evaluated]
    spread = statistics.pstdev(child_scores) / 100.0 if len(child_scores) >= 2 else 0.0
    depth = min(node.depth, cfg.d_cap) / cfg.d_cap
    return cfg.w_r * improvement + cfg.w_v * spread + cfg.w_d * depth


def ucb_score(value: float, c: float, parent_visits: int, visits: int, bonus: float) -> float:
    return value + c * math.sqrt(math.log(parent_visits) / visits) + bonus


def ucb_terms(node: SearchNode, state: SearchState, cfg: SearchConfig) -> dict[str, float]:
    parent = state.nodes[node.parent]
    value = combined_value(node, state.t, cfg)
    c = exploration(state.t, cfg)
    bonus = psi(node, state.nodes, cfg)
    return {
        "value": value,
        "explore": c * math.sqrt(math.log(parent.v) / node.v),
        "psi": bonus,
        "ucb": ucb_score(value, c, parent.v, node.v, bonus),
    }


def ucb_enhanced(node: SearchNode, state: SearchState, cfg: SearchConfig) -> float:
    return ucb_terms(node, state, cfg)["ucb"]


# ---------------------------------------------------------------------------
# Tree operations
# ---------------------------------------------------------------------------


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


class _Evaluator:
    def __init__(self, task: TaskSpec, cfg: SearchConfig, simulate: Optional[Simulate],
                 scorer: Optional[DimensionScorer]):
        self.task = task
        self.scorer = scorer
        self.weights = EvalWeights(lam=cfg.lam)
        self.simulate = simulate or functools.partial(run_simulation, tol=cfg.sim_tol, max_iter=cfg.sim_max_iter)
        self.workers = cfg.workers

    def one(self, fs: Flowsheet) -> tuple[SimulationResult, EvalResult]:
        sim = self.simulate(fs)
        return sim, evaluate(fs, sim, self.task, self.scorer, self.weights)

    def many(self, flowsheets: Sequence[Flowsheet]) -> list[tuple[SimulationResult, EvalResult]]:
        if self.workers == 1 or len(flowsheets) == 1:
            return [self.one(fs) for fs in flowsheets]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(self.one, flowsheets))


def _attach(state: SearchState, parent: SearchNode, fs: Flowsheet, sim: SimulationResult,
            result: EvalResult) -> SearchNode:
    nid = max(state.nodes) + 1
    fs = fs.copy(f"{state.task.id}-n{nid}")
    for s in fs.streams.values():
        s.state = sim.streams.get(s.id)
    node = SearchNode(nid, parent.id, parent.depth + 1, fs, v=1, eval=result, sim=sim,
                      v_imm=immediate_value(result), v_pot=potential_value(result),
                      score_history=[result.score])
    state.nodes[nid] = node
    parent.children.append(nid)
    cur: Optional[SearchNode] = parent
    while cur is not None:
        cur.v += 1
        cur.score_history.append(result.score)
        cur = state.nodes[cur.parent] if cur.parent is not None else None
    return node


def init_search(task: TaskSpec, proposer: Proposer, cfg: SearchConfig = SearchConfig(),
                simulate: Optional[Simulate] = None, scorer: Optional[DimensionScorer] = None) -> SearchState:
    """Virtual root plus ``initial_nodes`` evaluated seed configurations."""
    try:
        seeds = list(proposer.seed_configurations(task, cfg.seed))
    except ProcAgentError as exc:
        raise SeedGenerationFailed(f"proposer failed to seed: {exc}") from exc
    if not seeds:
        raise SeedGenerationFailed("proposer returned no seed configurations")
    state = SearchState(task, {ROOT: SearchNode(ROOT, None, 0)})
    seeds = seeds[: cfg.initial_nodes]
    k = 0
    while len(seeds) < cfg.initial_nodes:
        seeds.append(proposer.refine(seeds[k % len(seeds)], [], state.log.snapshot(), _seed(cfg.seed, 0, k)))
        k += 1
    evaluator = _Evaluator(task, cfg, simulate, scorer)
    for fs, (sim, result) in zip(seeds, evaluator.many(seeds)):
        _attach(state, state.root, fs, sim, result)
    state.best_trace.append(state.best_node().score)
    state.record("expand", node=ROOT, children=list(state.root.children),
                 scores=[state.nodes[c].score for c in state.root.children])
    return state


def expandable(state: SearchState) -> list[SearchNode]:
    return [n for n in state.evaluated_nodes() if not n.children]


def select(state: SearchState, cfg: SearchConfig) -> int:
    """Expandable node with the highest enhanced UCB; ties go to the smaller id."""
    candidates = expandable(state)
    if not candidates:
        raise ValueError("no expandable node")
    return min(candidates, key=lambda n: (-ucb_enhanced(n, state, cfg), n.id)).id


def expand(state: SearchState, node_id: int, proposer: Proposer, cfg: SearchConfig = SearchConfig(),
           simulate: Optional[Simulate] = None, scorer: Optional[DimensionScorer] = None) -> list[int]:
    """Refine the node's flowsheet into new children, evaluate them and backpropagate."""
    node = state.nodes[node_id]
    if node.flowsheet is None:
        raise ValueError("the virtual root cannot be refined")
    directives = list(node.eval.directives) if node.eval else []
    history = state.log.snapshot()
    children = [
        proposer.refine(node.flowsheet, directives, history, _seed(cfg.seed, state.t, node_id, k))
        for k in range(cfg.children_per_expansion)
    ]

    seen = {node.flowsheet.fingerprint()}
    duplicates = []
    for k, fs in enumerate(children):
        if fs.fingerprint() in seen:
            duplicates.append(k)
        seen.add(fs.fingerprint())
    if duplicates:
        warnings.warn(DuplicateChildren(f"node {node_id}: children {duplicates} repeat earlier configurations"),
                      stacklevel=2)
        for k in duplicates:
            children[k] = proposer.refine(children[k], [], history, _seed(cfg.seed, state.t, node_id, k, 1))

    results = _Evaluator(state.task, cfg, simulate, scorer).many(children)
    new_ids = []
    for fs, (sim, result) in zip(children, results):
        child = _attach(state, node, fs, sim, result)
        new_ids.append(child.id)
        state.log.append(LogEntry(
            t=state.t,
            parent=node_id,
            summary=describe_changes(node.flowsheet, fs),
            delta_score=result.score - node.score,
            converged=sim.converged,
            directives=tuple(directives),
            node=child.id,
        ))
    state.record("expand", node=node_id, children=new_ids, scores=[state.nodes[c].score for c in new_ids])
    return new_ids


def update_pool(state: SearchState) -> list[int]:
    """Second and third best non-revisited nodes, global best excluded."""
    nodes = state.evaluated_nodes()
    if not nodes:
        state.pool = []
        return state.pool
    best = state.best_node().id
    ranked = sorted((n for n in nodes if not n.revisited and n.id != best), key=lambda n: (-n.score, n.id))
    state.pool = [n.id for n in ranked[:2]]
    return state.pool


def select_revisit(pool: Sequence[int], nodes: dict[int, SearchNode]) -> int:
    """Pool member with the widest gap between potential and realized value."""
    if not pool:
        raise NoRevisitCandidate("candidate pool is empty")
    chosen = min(pool, key=lambda i: (-(nodes[i].v_pot - nodes[i].v_imm), i))
    nodes[chosen].revisited = True
    return chosen


def is_flat(trace: Sequence[float], cfg: SearchConfig) -> bool:
    if len(trace) < cfg.stagnation_window:
        return False
    window = trace[-cfg.stagnation_window:]
    return max(window) - min(window) < cfg.flat_delta


def top_visit_share(state: SearchState) -> float:
    root = state.root
    if root.v == 0 or not root.children:
        return 0.0
    return max(state.nodes[c].v for c in root.children) / root.v


def check_termination(state: SearchState, cfg: SearchConfig) -> Optional[str]:
    if state.best_trace and state.best_trace[-1] >= cfg.target_score:
        return "TargetReached"
    if state.t >= cfg.max_iterations:
        return "IterationLimit"
    if is_flat(state.best_trace, cfg) and not state.pool:
        return "Stagnation"
    if (len(state.best_trace) >= cfg.stability_window
            and top_visit_share(state) >= cfg.theta_v
            and statistics.pstdev(state.best_trace[-cfg.stability_window:]) < cfg.eps_s):
        return "Converged"
    return None


def final_value(score: float, visit_share: float, stability: float,
                weights: tuple[float, float, float] = (0.7, 0.2, 0.1)) -> float:
    return weights[0] * score / 100.0 + weights[1] * visit_share + weights[2] * stability


def stability(history: Sequence[float]) -> float:
    spread = statistics.pstdev(history) if len(history) >= 2 else 0.0
    return 1.0 - min(1.0, spread / 10.0)


def final_select(state: SearchState, cfg: SearchConfig = SearchConfig()) -> int:
    """Blend of quality, visit share and score stability over all evaluated nodes."""
    nodes = state.evaluated_nodes()
    total = sum(n.v for n in nodes)
    return min(
        nodes,
        key=lambda n: (-final_value(n.score, n.v / total, stability(n.score_history), cfg.final_weights), n.id),
    ).id


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class SearchOutcome:
    state: SearchState
    best_id: int
    reason: str

    @property
    def best(self) -> SearchNode:
        return self.state.nodes[self.best_id]

    @property
    def iterations(self) -> int:
        return self.state.t


def run_search(task: TaskSpec, proposer: Proposer, cfg: SearchConfig = SearchConfig(),
               simulate: Optional[Simulate] = None, scorer: Optional[DimensionScorer] = None,
               trace_path: Optional[str | Path] = None) -> SearchOutcome:
    """Full search loop from seeding to final selection."""
    if task.target_score is not None:
        cfg = replace(cfg, target_score=task.target_score)
    state = init_search(task, proposer, cfg, simulate, scorer)
    update_pool(state)
    while True:
        reason = check_termination(state, cfg)
        if reason is not None:
            break
        target = None
        if is_flat(state.best_trace, cfg) and state.pool:
            target = select_revisit(state.pool, state.nodes)
            node = state.nodes[target]
            state.record("revisit", node=target, gap=node.v_pot - node.v_imm, S=node.score)
        else:
            try:
                target = select(state, cfg)
            except ValueError:
                reason = "Stagnation"
                break
            state.record("select", node=target, S=state.nodes[target].score,
                         **ucb_terms(state.nodes[target], state, cfg))
        expand(state, target, proposer, cfg, simulate, scorer)
        state.t += 1
        state.best_trace.append(max(state.best_trace[-1], state.best_node().score))
        update_pool(state)
    state.reason = reason
    best_id = final_select(state, cfg)
    state.record("terminate", node=best_id, reason=reason, S=state.nodes[best_id].score)
    if trace_path is not None:
        Path(trace_path).write_text(state.trace_lines(), encoding="utf-8")
    logger.info("search %s finished: %s after %d iterations, node %d S=%.3f",
                task.id, reason, state.t, best_id, state.nodes[best_id].score)
    return SearchOutcome(state, best_id, reason)
