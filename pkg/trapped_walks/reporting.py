"""JSON and CSV result files.

Every file carries the sha256 of the canonical config JSON and the package
version. The JSON report embeds the full config. Nothing time-dependent is
written, so reruns of the same config produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from .models import ExperimentConfig, SuiteResult


def _package_version() -> str:
    try:
        return version("trapped-walks")
    except PackageNotFoundError:
        return "0.1.0"


PACKAGE_VERSION = _package_version()


def provenance_header(config: ExperimentConfig) -> str:
    return f"# config_hash={config.config_hash()}, version={PACKAGE_VERSION}\n"


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    return value


def _cell(value: Any) -> str:
    value = _plain(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def suite_to_dict(result: SuiteResult) -> Dict[str, Any]:
    return _plain(
        {
            "suite": result.suite,
            "version": PACKAGE_VERSION,
            "config_hash": result.config.config_hash(),
            "config": result.config.model_dump(mode="json"),
            "passed": result.passed,
            "checks": [asdict(check) for check in result.checks],
            "records": [
                {**asdict(record), "z_score": record.z_score, "passed": record.passed} for record in result.records
            ],
            "tables": result.tables,
        }
    )


def suite_to_json(result: SuiteResult) -> str:
    return json.dumps(suite_to_dict(result), indent=2, sort_keys=True) + "\n"


def rows_to_csv(config: ExperimentConfig, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    buffer.write(provenance_header(config))
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def checks_to_csv(result: SuiteResult) -> str:
    rows = [
        (check.name, check.expected, check.observed, check.tolerance, "PASS" if check.passed else "FAIL")
        for check in result.checks
    ]
    return rows_to_csv(result.config, ("name", "expected", "observed", "tolerance", "status"), rows)


def table_to_csv(config: ExperimentConfig, table: List[Dict[str, Any]]) -> str:
    columns = list(table[0].keys()) if table else []
    return rows_to_csv(config, columns, [[row.get(column) for column in columns] for row in table])


def write_reports(result: SuiteResult, out_dir: str | Path) -> List[Path]:
    """Write ``<suite>.json``, ``<suite>.csv`` and one ``<suite>_<table>.csv`` per table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    json_path = out / f"{result.suite}.json"
    json_path.write_text(suite_to_json(result), encoding="utf-8")
    written.append(json_path)
    csv_path = out / f"{result.suite}.csv"
    csv_path.write_text(checks_to_csv(result), encoding="utf-8")
    written.append(csv_path)
    for name, table in sorted(result.tables.items()):
        path = out / f"{result.suite}_{name}.csv"
        path.write_text(table_to_csv(result.config, table), encoding="utf-8")
        written.append(path)
    return written


def summary_lines(result: SuiteResult) -> List[str]:
    lines = [check.summary() for check in result.checks]
    status = "PASS" if result.passed else "FAIL"
    lines.append(f"{status} suite={result.suite} checks={len(result.checks)} failed={sum(not c.passed for c in result.checks)}")
    return lines
