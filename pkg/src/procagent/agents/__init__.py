"""Agent contracts and the two proposer backends."""

from .base import ExperienceLog, LogEntry, Proposer
from .mock import MockProposer, mock_refine, mock_seed_configurations
from .parser import parse_task

__all__ = [
    "ExperienceLog",
    "LogEntry",
    "MockProposer",
    "Proposer",
    "mock_refine",
    "mock_seed_configurations",
    "parse_task",
]
