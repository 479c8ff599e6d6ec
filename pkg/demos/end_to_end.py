"""Simulate a corpus and run the full pipeline through the CLI entry point.

Writes a small synthetic corpus and a report bundle under a temporary
directory, then prints the head of report.md and the drop log.

Run with ``python3 demos/end_to_end.py``.
"""
import json
import tempfile
from pathlib import Path

from biosession.cli import main

root = Path(tempfile.mkdtemp(prefix="biosession-demo-"))
corpus, bundle = root / "corpus", root / "bundle"
main(["simulate", "--n-sessions", "12", "--duration", "400", "--rate", "16",
      "--drop-every", "5", "--seed", "7", "--out", str(corpus)])
code = main(["run", str(corpus), "--seed", "7", "--out", str(bundle)])
print(f"exit code {code}; bundle at {bundle}\n")

for line in (bundle / "preprocess_log.jsonl").read_text().splitlines():
    rec = json.loads(line)
    if rec["dropped"]:
        print(f"dropped {rec['subject_id']} session {rec['session_index']} {rec['kind']}: {rec['reason']}")

print()
print("\n".join((bundle / "report.md").read_text().splitlines()[:30]))
