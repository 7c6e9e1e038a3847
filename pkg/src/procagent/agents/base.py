"""Contracts shared by the proposer backends."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol, Sequence

from ..flowsheet import Flowsheet
from ..task import TaskSpec


@dataclass(frozen=True)
class LogEntry:
    t: int
    parent: int
    summary: str
    delta_score: float
    converged: bool
    directives: tuple[str, ...] = ()
    node: Optional[int] = None


@dataclass
class ExperienceLog:
    """Append-only record of modifications and their outcomes."""

    entries: list[LogEntry] = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.t < self.entries[-1].t:
            raise ValueError("experience log entries must be appended in iteration order")
        self.entries.append(entry)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def snapshot(self) -> "ExperienceLog":
        return ExperienceLog(list(self.entries))

    def to_list(self) -> list[dict]:
        return [asdict(e) for e in self.entries]

    def render(self, limit: int = 20) -> str:
        lines = []
        for e in self.entries[-limit:]:
            status = "converged" if e.converged else "failed"
            lines.append(f"t={e.t} from node {e.parent}: {e.summary} -> dS={e.delta_score:+.2f} ({status})")
        return "\n".join(lines) if lines else "(no previous modifications)"


class Proposer(Protocol):
    """Topology generation plus parameter configuration behind one interface."""

    def seed_configurations(self, task: TaskSpec, seed: int) -> list[Flowsheet]: ...

    def refine(self, fs: Flowsheet, directives: Sequence[str], log: ExperienceLog, seed: int) -> Flowsheet: ...
