"""Command-line entry points: design, batch, simulate, vle, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema

from . import __version__
from . import components as db
from .agents.mock import MockProposer
from .agents.parser import parse_task
from .emcts import SearchConfig, run_search
from .errors import ConfigError, ProcAgentError
from .flowsheet import load_design, save_design
from .simulator import run_simulation
from .task import TaskSpec
from .thermo import analyze_binary_vle, method_for

logger = logging.getLogger("procagent")

EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED = 0, 1, 2
SUCCESS_REASONS = ("TargetReached", "Converged")


# ---------------------------------------------------------------------------
# Configuration file
# ---------------------------------------------------------------------------


def _convert(name: str, text: str, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc
    return text


def load_config(path: Optional[str | Path], **overrides: Any) -> SearchConfig:
    """Flat ``key = value`` file over SearchConfig fields; unknown keys are errors."""
    defaults = SearchConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(SearchConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _convert(key, value, known[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SearchConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def report_schema() -> dict:
    text = resources.files("procagent.data").joinpath("report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class RunReport:
    task_id: str
    request_kind: str
    terminated_reason: Optional[str]
    best_score: Optional[float]
    dims: Optional[dict[str, float]]
    converged: bool
    iterations: int
    wall_time_s: float
    llm_time_s: float = 0.0
    tokens: Optional[dict[str, Any]] = None
    best_node: Optional[int] = None
    flowsheet_path: Optional[str] = None
    trace_path: Optional[str] = None
    vle_path: Optional[str] = None
    azeotrope: Optional[dict[str, float]] = None
    exit_code: int = EXIT_OK

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def deterministic_view(self) -> dict[str, Any]:
        """Report minus timing and output paths, for regression comparisons."""
        doc = self.to_dict()
        for key in ("wall_time_s", "llm_time_s", "flowsheet_path", "trace_path", "vle_path"):
            doc.pop(key)
        return doc


@dataclass
class BatchReport:
    suite: str
    seed: int
    tasks: list[RunReport] = field(default_factory=list)

    @property
    def scr(self) -> float:
        return sum(r.converged for r in self.tasks) / len(self.tasks) if self.tasks else 0.0

    @property
    def mean_time_s(self) -> float:
        return sum(r.wall_time_s for r in self.tasks) / len(self.tasks) if self.tasks else 0.0

    @property
    def mean_score(self) -> Optional[float]:
        scores = [r.best_score for r in self.tasks if r.best_score is not None]
        return sum(scores) / len(scores) if scores else None

    def deterministic_view(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "scr": self.scr,
            "mean_score": self.mean_score,
            "tasks": {r.task_id: r.deterministic_view() for r in self.tasks},
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "total": len(self.tasks),
            "converged": sum(r.converged for r in self.tasks),
            "scr": self.scr,
            "mean_time_s": self.mean_time_s,
            "mean_score": self.mean_score,
            "tasks": [r.to_dict() for r in self.tasks],
        }


def validate_report(doc: dict, kind: str) -> None:
    schema = report_schema()
    jsonschema.validate(doc, {**schema, "$ref": f"#/$defs/{kind}"})


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def summarize(report: RunReport) -> str:
    lines = [f"task {report.task_id} ({report.request_kind})"]
    if report.request_kind == "ThermoAnalysis":
        az = report.azeotrope
        lines.append("azeotrope: none" if az is None else f"azeotrope: x1={az['x1']:.6f} T={az['T']:.4f} K")
    else:
        lines.append(f"terminated: {report.terminated_reason} after {report.iterations} iterations")
        lines.append(f"best node {report.best_node}: S={report.best_score:.3f} converged={report.converged}")
        if report.dims:
            lines.append("dimensions: " + " ".join(f"{k}={v:.2f}" for k, v in report.dims.items()))
    lines.append(f"wall time: {report.wall_time_s:.3f} s")
    if report.tokens:
        lines.append(f"tokens: {report.tokens.get('total_tokens', 0)} (LLM time {report.llm_time_s:.3f} s)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Task loading and the design workflow
# ---------------------------------------------------------------------------


def load_task(path: str | Path) -> TaskSpec:
    """Task file: JSON with "text" (free text) or a structured task; anything else is free text."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(raw)
        task_id = doc.get("id", path.stem)
        if "text" in doc:
            return parse_task(doc["text"], task_id)
        doc.setdefault("id", task_id)
        return TaskSpec.from_dict(doc)
    return parse_task(raw, path.stem)


@dataclass
class DesignOptions:
    seed: int = 42
    config: Optional[str] = None
    proposer: str = "mock"
    scorer: str = "heuristic"
    out: str = "."
    sim_url: Optional[str] = None
    llm_url: Optional[str] = None
    llm_model: Optional[str] = None


def _method_for_pair(task: TaskSpec) -> str:
    if task.property_method:
        return task.property_method
    return "Margules" if db.margules_pairs(task.components) else "IdealRaoult"


def run_vle_task(task: TaskSpec, out: Path) -> tuple[dict, Optional[dict]]:
    feed_p = task.feeds[0].P if task.feeds and task.feeds[0].P else 101325.0
    variant = _method_for_pair(task)
    result = analyze_binary_vle(task.components[0], task.components[1], feed_p,
                                method_for(task.components, variant))
    doc = result.to_dict()
    az = None if result.azeotrope is None else {"x1": result.azeotrope[0], "T": result.azeotrope[1]}
    return doc, az


def run_design(task: TaskSpec, opts: DesignOptions) -> RunReport:
    """Route a parsed task through the VLE or search workflow and write its outputs."""
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    if task.request_kind == "ThermoAnalysis":
        doc, az = run_vle_task(task, out)
        vle_path = out / f"{task.id}.vle.json"
        _write_json(vle_path, doc)
        return RunReport(task.id, task.request_kind, None, None, None, True, 0,
                         time.perf_counter() - start, vle_path=str(vle_path), azeotrope=az)

    cfg = load_config(opts.config, seed=opts.seed)
    vle_path = az = None
    if task.thermo_precheck and len(task.components) == 2:
        doc, az = run_vle_task(task, out)
        vle_path = out / f"{task.id}.vle.json"
        _write_json(vle_path, doc)
        task = dataclasses.replace(task, property_method=_method_for_pair(task))

    client = None
    scorer = None
    simulate = None
    if opts.proposer == "llm" or opts.scorer == "llm":
        from .agents.llm import LlmClient, LlmConfig, LlmProposer, LlmScorer

        llm_cfg = LlmConfig()
        if opts.llm_url:
            llm_cfg = dataclasses.replace(llm_cfg, base_url=opts.llm_url)
        if opts.llm_model:
            llm_cfg = dataclasses.replace(llm_cfg, model=opts.llm_model)
        client = LlmClient(llm_cfg)
        if opts.scorer == "llm":
            scorer = LlmScorer(client)
    proposer = LlmProposer(client) if opts.proposer == "llm" else MockProposer()
    if opts.sim_url:
        from .service import HttpSimulator

        simulate = HttpSimulator(opts.sim_url, cfg.sim_tol, cfg.sim_max_iter)

    trace_path = out / f"{task.id}.trace.jsonl"
    outcome = run_search(task, proposer, cfg, simulate, scorer, trace_path)
    best = outcome.best
    fs_path = out / f"{task.id}.flowsheet.json"
    save_design(best.flowsheet, fs_path)
    converged = bool(best.sim.converged)
    code = EXIT_OK if outcome.reason in SUCCESS_REASONS or converged else EXIT_UNCONVERGED
    return RunReport(
        task_id=task.id,
        request_kind=task.request_kind,
        terminated_reason=outcome.reason,
        best_score=best.score,
        dims=best.eval.dims.to_dict(),
        converged=converged,
        iterations=outcome.iterations,
        wall_time_s=time.perf_counter() - start,
        llm_time_s=client.usage.seconds if client else 0.0,
        tokens=client.usage.to_dict() if client else None,
        best_node=best.id,
        flowsheet_path=str(fs_path),
        trace_path=str(trace_path),
        vle_path=str(vle_path) if vle_path else None,
        azeotrope=az,
        exit_code=code,
    )


def _finish_report(report: RunReport, out: Path) -> None:
    doc = report.to_dict()
    validate_report(doc, "RunReport")
    _write_json(out / f"{report.task_id}.report.json", doc)
    (out / f"{report.task_id}.summary.txt").write_text(summarize(report), encoding="utf-8")


def _design_job(path: str, opts: DesignOptions) -> RunReport:
    warnings.simplefilter("ignore")
    task = load_task(path)
    report = run_design(task, opts)
    _finish_report(report, Path(opts.out))
    return report


def run_batch(suite: str | Path, opts: DesignOptions, jobs: int = 1) -> BatchReport:
    files = sorted(p for p in Path(suite).iterdir() if p.suffix in (".json", ".txt"))
    if not files:
        raise ProcAgentError(f"suite {suite} contains no task files")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_design_job, [str(f) for f in files], [opts] * len(files)))
    else:
        reports = [_design_job(str(f), opts) for f in files]
    batch = BatchReport(str(suite), opts.seed, reports)
    doc = batch.to_dict()
    validate_report(doc, "BatchReport")
    out = Path(opts.out)
    _write_json(out / "batch_report.json", doc)
    lines = [f"{r.task_id}: converged={r.converged} S={r.best_score}" for r in reports]
    lines.append(f"SCR: {batch.scr:.4f} ({doc['converged']}/{doc['total']})")
    lines.append(f"mean S: {batch.mean_score}")
    lines.append(f"mean time: {batch.mean_time_s:.3f} s")
    (out / "batch_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return batch


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _options(args: argparse.Namespace) -> DesignOptions:
    return DesignOptions(seed=args.seed, config=args.config, proposer=args.proposer, scorer=args.scorer,
                         out=args.out, sim_url=args.sim_url, llm_url=args.llm_url, llm_model=args.llm_model)


def cmd_design(args: argparse.Namespace) -> int:
    if (args.task is None) == (args.text is None):
        print("error: give exactly one of --task or --text", file=sys.stderr)
        return EXIT_ERROR
    try:
        task = load_task(args.task) if args.task else parse_task(args.text, args.task_id)
    except (OSError, ValueError, KeyError, ProcAgentError) as exc:
        print(f"error: cannot read task: {exc}", file=sys.stderr)
        return EXIT_ERROR
    opts = _options(args)
    report = run_design(task, opts)
    _finish_report(report, Path(opts.out))
    sys.stdout.write(summarize(report))
    return report.exit_code


def cmd_batch(args: argparse.Namespace) -> int:
    batch = run_batch(args.suite, _options(args), args.jobs)
    print(f"SCR: {batch.scr:.4f} over {len(batch.tasks)} tasks; mean S {batch.mean_score}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    fs = load_design(args.flowsheet)
    result = run_simulation(fs, tol=args.tol, max_iter=args.max_iter)
    print(json.dumps({"flowsheet_id": fs.id, **result.to_dict()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_vle(args: argparse.Namespace) -> int:
    names = [c.strip() for c in args.components.split(",") if c.strip()]
    if len(names) != 2:
        print("error: --components needs exactly two names", file=sys.stderr)
        return EXIT_ERROR
    ids = [db.resolve(n) for n in names]
    result = analyze_binary_vle(ids[0], ids[1], args.pressure, method_for(ids, args.method))
    if args.json:
        print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    else:
        print(result.summary())
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(args.host, args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="procagent", description="Process flowsheet design and simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def search_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--config", help="flat key = value search configuration file")
        p.add_argument("--proposer", choices=("mock", "llm"), default="mock")
        p.add_argument("--scorer", choices=("heuristic", "llm"), default="heuristic")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--sim-url", help="use a remote simulation service instead of the in-process simulator")
        p.add_argument("--llm-url", help="chat-completion base URL")
        p.add_argument("--llm-model", help="chat-completion model name")

    p = sub.add_parser("design", help="run a design search for one task")
    p.add_argument("--task", help="task file (.json or free text)")
    p.add_argument("--text", help="task description as a string")
    p.add_argument("--task-id", default="task", help="id used with --text")
    search_flags(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("batch", help="run every task in a suite directory and report SCR")
    p.add_argument("--suite", required=True)
    p.add_argument("--jobs", type=int, default=1)
    search_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("simulate", help="simulate a flowsheet file")
    p.add_argument("--flowsheet", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("vle", help="binary vapor-liquid equilibrium analysis")
    p.add_argument("--components", required=True, help="two names separated by a comma")
    p.add_argument("--pressure", type=float, default=101325.0, help="Pa")
    p.add_argument("--method", choices=("IdealRaoult", "Margules"), default="IdealRaoult")
    p.add_argument("--json", action="store_true", help="print the full result document")
    p.set_defaults(func=cmd_vle)

    p = sub.add_parser("serve", help="run the HTTP simulation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, ProcAgentError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
