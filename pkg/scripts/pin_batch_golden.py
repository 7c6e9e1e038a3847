"""Run the bundled suite with the mock proposer (seed 42) and freeze the result as the batch golden."""

from __future__ import annotations

import json
import sys
import tempfile
from importlib import resources
from pathlib import Path

from procagent.cli import DesignOptions, run_batch

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden" / "batch_mock_seed42.json"


def main() -> int:
    suite = resources.files("procagent") / "data" / "suite"
    with tempfile.TemporaryDirectory() as tmp:
        batch = run_batch(str(suite), DesignOptions(seed=42, out=tmp))
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(batch.deterministic_view(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT} (SCR {batch.scr})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
