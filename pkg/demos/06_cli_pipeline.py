"""
The staged CLI pipeline
=======================

Everything the other demos do by hand is also available as idempotent CLI
stages writing artifacts into one directory. This script drives the same
code through `prefetchlab.cli.main` and prints the final report.
"""

import json
import pathlib
import tempfile

import yaml

from prefetchlab.cli import main

config = {
    "seed": 9,
    "trace": {"kind": "stride", "length": 2000, "stride": 64},
    "model": {"type": "embedding", "hidden": 32, "embed": 16, "dtype": "float32"},
    "train": {"steps": 200, "batch": 32, "window": 32},
    "vocab": {"min_input_count": 2},
}

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = pathlib.Path(tmp) / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    out = pathlib.Path(tmp) / "out"
    for stage in ("simulate", "vocab", "train", "eval", "report", "export-embeddings"):
        code = main([stage, "--config", str(cfg_path), "--out", str(out)])
        assert code == 0, f"stage {stage} failed"
        print(f"--- {stage}: exit {code}")

    report = json.loads((out / "report.json").read_text())
    print("report metrics:")
    print(json.dumps(report["evaluation"]["metrics"], indent=2))
    print("artifacts:", sorted(p.name for p in out.iterdir()))
