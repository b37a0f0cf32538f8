"""Newline-delimited JSON metric logs.

First line is a header record carrying the fully resolved config and
artifact version; each subsequent line is one step record. Logs are
append-only and parseable line by line. Serialization is deterministic
(sorted keys, no NaN) so identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
from typing import Iterable

from . import __version__
from .config import RunConfig, from_dict
from .distsim import StepRecord


class LogFormatError(ValueError):
    """Malformed log; message carries the 1-based line number."""


def header_record(config: RunConfig, basis_inconsistent: bool) -> dict:
    return {
        "kind": "header",
        "version": __version__,
        "config": config.to_dict(),
        "basis_inconsistent": basis_inconsistent,
    }


def dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=False)


def write_log(path: str, config: RunConfig, basis_inconsistent: bool, records: Iterable[StepRecord]) -> dict:
    """Stream records to `path`; returns summary {steps, diverged}."""
    steps = 0
    diverged = False
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_line(header_record(config, basis_inconsistent)) + "\n")
        for rec in records:
            fh.write(dump_line(rec.to_json_dict()) + "\n")
            steps += 1
            diverged = diverged or rec.diverged
    return {"steps": steps, "diverged": diverged}


def read_log(path: str) -> tuple[dict, list]:
    """Parse a log file into (header, step dicts). Validates structure."""
    header = None
    steps = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if lineno == 1:
                if not isinstance(obj, dict) or obj.get("kind") != "header":
                    raise LogFormatError("line 1: expected a header record")
                header = obj
            else:
                if not isinstance(obj, dict) or obj.get("kind") != "step":
                    raise LogFormatError(f"line {lineno}: expected a step record")
                steps.append(obj)
    if header is None:
        raise LogFormatError("line 1: log is empty")
    return header, steps


def config_from_header(header: dict) -> RunConfig:
    """Re-validate the config echoed in a log header."""
    return from_dict(header["config"])
