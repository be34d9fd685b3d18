"""Result persistence: summary.json, tables/*.csv and paths/*.csv with provenance headers."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

from smallnoise.jsonio import dumps17
from smallnoise.rng import RNG_ALGORITHM
from smallnoise.harness.config import SPEC_VERSION, ExperimentConfig


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        self.rows.append(list(row))

    def to_csv(self, comments=()) -> str:
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


@dataclass
class Outcome:
    """Everything an experiment produces; written in one go at the end."""

    passed: bool
    summary: dict
    tables: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    status: str = ""

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"


def provenance(config: ExperimentConfig) -> list[str]:
    return [f"config_hash: {config.hash}", f"rng: {RNG_ALGORITHM}", f"spec_version: {SPEC_VERSION}",
            f"experiment: {config.experiment}"]


def render(config: ExperimentConfig, outcome: Outcome) -> dict[str, str]:
    """File name -> contents, without touching the disk."""
    head = provenance(config)
    summary = {"experiment": config.experiment, "config_hash": config.hash, "rng": RNG_ALGORITHM,
               "spec_version": SPEC_VERSION, "status": outcome.status, "pass": outcome.passed,
               "config": config.to_dict(), "results": outcome.summary}
    files = {"summary.json": dumps17(summary, indent=2) + "\n"}
    for name, table in outcome.tables.items():
        files[f"tables/{name}.csv"] = table.to_csv(head)
    for name, path in outcome.paths.items():
        files[f"paths/{name}.csv"] = path.to_csv(tuple(head))
    return files


def write(out_dir: str, config: ExperimentConfig, outcome: Outcome) -> list[str]:
    files = render(config, outcome)
    written = []
    for rel, text in files.items():
        target = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(target), exist_ok=True)
        tmp = target + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
        written.append(target)
    return written
