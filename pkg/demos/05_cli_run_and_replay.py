"""
Recording and replaying a run from the command line
===================================================

The same steps are available as ``ovkv run`` and ``ovkv replay``. Here they are driven
through ``ovkv.cli.main`` so the demo needs no shell.
"""

import json
import pathlib
import tempfile

from ovkv.cli import main

work = pathlib.Path(tempfile.mkdtemp())
metrics, trace = work / "metrics.jsonl", work / "trace.jsonl"

code = main(["run", "--frames", "60", "--budget", "1000", "--min-interval", "20",
             "--out", str(metrics), "--trace-out", str(trace)])
print("run exit code:", code)

summary = json.loads((work / "metrics.summary.json").read_text())
print("evicted tokens:", summary["evicted"], "anchors registered:", summary["anchor_registrations"])

# replay recomputes every step from the recorded inputs and compares the metrics
print("replay exit code:", main(["replay", str(trace)]))

# an infeasible budget is refused before any frame is processed
print("tiny budget exit code:", main(["run", "--frames", "5", "--budget", "100", "--out", str(metrics)]))
