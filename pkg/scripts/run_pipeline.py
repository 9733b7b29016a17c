#!/usr/bin/env python3
"""End-to-end pipeline demo on synthetic data, all-mock, fully offline.

Generates a schedule, indexes a tiny reference corpus, samples contexts,
runs the masked evaluation under both oracle mocks, harvests preference
pairs from the wrong-answer run, trains the scorer, and polishes contexts.

Usage:
    python scripts/run_pipeline.py [--root runs/demo] [--n 100] [--seed 42]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from schedkit.cli import main as cli  # noqa: E402

CORPUS_DOC = """
Concrete pours cure before formwork strips and loading begins. Steel
erection follows survey verification; bolts torque to rating before decking.
Utility rough-in coordinates conduit, duct, and pipe racks by zone so
trades do not stack. Roof-level work sequences behind structural sign-off.
"""

TERMS = [
    ("WBS", "hierarchical decomposition of a project into phases and tasks"),
    ("lag", "waiting period between linked activities, in days"),
    ("FS", "finish-to-start dependency: successor starts after predecessor finishes"),
    ("float", "schedule slack an activity can slip without delaying the finish"),
]


def run(argv) -> None:
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"step {' '.join(argv)} exited {code}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/demo")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    root = Path(args.root)
    root.mkdir(parents=True, exist_ok=True)
    corpus = root / "corpus"
    corpus.mkdir(exist_ok=True)
    (corpus / "manual.txt").write_text(CORPUS_DOC.strip() + "\n", "utf-8")
    terms = root / "terms.tsv"
    terms.write_text("".join(f"{t}\t{d}\n" for t, d in TERMS), "utf-8")

    run(["--out", str(root / "gen"), "generate", "--n", str(args.n), "--seed", str(args.seed)])
    schedule = str(root / "gen" / "schedule.csv")
    run(["--out", str(root / "graph"), "analyze-graph", "--schedule", schedule])
    run(["--out", str(root / "kb"), "build-kb", "--corpus-dir", str(corpus), "--terms-file", str(terms)])
    run(["--out", str(root / "ctx"), "sample-context", "--schedule", schedule])
    run(
        [
            "--out", str(root / "eval_echo"), "run-eval", "--schedule", schedule,
            "--gateway", "mock:echo", "--kb", str(root / "kb"),
        ]
    )
    run(
        [
            "--out", str(root / "eval_wrong"), "run-eval", "--schedule", schedule,
            "--gateway", "mock:wrong", "--kb", str(root / "kb"),
        ]
    )
    run(
        [
            "--out", str(root / "prefs"), "collect-prefs", "--schedule", schedule,
            "--instances", str(root / "eval_wrong" / "instances.jsonl"),
        ]
    )
    run(["--out", str(root / "scorer"), "train-scorer", "--prefs-db", str(root / "prefs" / "prefs.jsonl")])
    run(
        [
            "--out", str(root / "polish"), "polish",
            "--instances", str(root / "eval_wrong" / "instances.jsonl"),
            "--gateway", "mock:stopword",
        ]
    )
    print(f"\nartifacts under {root}/")


if __name__ == "__main__":
    main()
