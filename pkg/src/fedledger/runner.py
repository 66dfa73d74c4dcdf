"""Executes a configured run and lays out its artifact directory.

Artifacts land under out_dir/<run-id>/ where the run id hashes the
canonical config plus the package version: identical configs share a
directory, and re-running one reproduces every file byte for byte.
"""

from pathlib import Path

from fedledger.config import run_id
from fedledger.reports import (
    write_charts,
    write_config_json,
    write_metrics_csv,
    write_summary_json,
    write_transcripts,
)
from fedledger.simulation import run_simulation


def execute_run(config):
    rid = run_id(config)
    run_dir = Path(config.out_dir) / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_json(config, run_dir / "config.json")
    records, transcripts = run_simulation(config)
    write_metrics_csv(records, run_dir / "metrics.csv")
    summary = write_summary_json(records, run_dir / "summary.json")
    write_transcripts(transcripts, run_dir / "transcript.jsonl")
    write_charts(records, run_dir)
    return {
        "run_id": rid,
        "run_dir": str(run_dir),
        "n_records": len(records),
        "summary": summary,
    }
