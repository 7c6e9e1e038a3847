"""Multi-agent chemical process design with a tree search over flowsheets."""

__version__ = "0.1.0"
