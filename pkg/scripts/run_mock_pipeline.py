#!/usr/bin/env python3
"""Runs the full pipeline offline against the committed fixtures.

Usage: python scripts/run_mock_pipeline.py [RUN_DIR]

Builds the fixture corpus, then replays the recorded transcripts through
build-db -> generate -> validate -> evaluate -> cross-validate. Useful as a
smoke test and as a worked example of the command-line surface.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from click.testing import CliRunner

from noveltyscope.cli import main

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "tests" / "data"


def run(keep_dir: Path | None) -> int:
    workdir = keep_dir or Path(tempfile.mkdtemp(prefix="noveltyscope-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = workdir / "config.toml"
    cfg.write_text(
        f'capacity = 8\noffline_dir = "{DATA / "offline_corpus"}"\n'
        f'run_dir = "{workdir / "runs"}"\n',
        encoding="utf-8",
    )
    runner = CliRunner()
    steps = [
        (["--config", str(cfg), "build-db", "t001"], None),
        (["--config", str(cfg), "generate", "t001"], "generate.jsonl"),
        (["--config", str(cfg), "validate", "t001"], "validate.jsonl"),
        (["--config", str(cfg), "evaluate", "t001"], "evaluate.jsonl"),
        (["cross-validate", str(DATA / "matrix.csv"),
          "--strategy", "all_models"], None),
    ]
    for args, transcript in steps:
        if transcript:
            args = ["--mock-transcript",
                    str(DATA / "transcripts" / transcript)] + args
        print(f"$ noveltyscope {' '.join(args)}")
        result = runner.invoke(main, args)
        print(result.output)
        if result.exit_code != 0:
            print(f"step failed with exit code {result.exit_code}",
                  file=sys.stderr)
            return result.exit_code
    print(f"artifacts under {workdir / 'runs' / 't001'}")
    return 0


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    sys.exit(run(target))
