"""
Persistence of solver traces, comparison tables and lab reports.

Traces and tables are CSV files (floats written with repr so they parse back
exactly), tables also get an aligned plain-text twin, and lab reports are
JSON lines.
"""

import csv
import json
import os
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

NEWTON_COLUMNS = ["k", "normF", "eta", "pcg_iters", "flag", "update_reason", "denominator"]
EIGEN_COLUMNS = NEWTON_COLUMNS + ["theta"]

_INT_COLUMNS = {"k", "pcg_iters", "kmax", "nlit", "totlin", "warmup_lin", "exit_code"}
_FLOAT_COLUMNS = {"normF", "eta", "denominator", "theta", "wall_time", "final_residual", "eigenvalue"}


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if hasattr(value, "value"):
        return str(value.value)
    if value is None:
        return ""
    return str(value)


def _parse(column: str, text: str) -> Union[int, float, str, None]:
    if text == "":
        return None
    if column in _INT_COLUMNS:
        return int(text)
    if column in _FLOAT_COLUMNS:
        return float(text)
    return text


class TraceStore:
    def __init__(self, *, directory: str) -> None:
        self.directory = directory

    def path_for(self, name: str, suffix: str) -> str:
        """
        Resolve a file name inside the store, creating the directory.

        :param name: Base name, or a path (used as given when it has a directory part).
        :param suffix: Extension including the dot.
        """
        if os.path.dirname(name):
            directory = os.path.dirname(name)
            base = os.path.basename(name)
        else:
            directory, base = self.directory, name
        os.makedirs(directory or ".", exist_ok=True)
        if not base.endswith(suffix):
            base += suffix
        return os.path.join(directory, base)

    def write_rows(self, name: str, columns: Sequence[str], rows: Iterable[Dict]) -> str:
        path = self.path_for(name, ".csv")
        with open(path, "w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format(row.get(column)) for column in columns])
        return path

    def write_newton_trace(self, name: str, trace) -> str:
        """
        Write a Newton trace, one row per outer iteration.

        :param name: File name without extension.
        :param trace: A NewtonTrace.
        :return: The path written.
        """
        rows = (
            {
                "k": record.k,
                "normF": record.residual_norm,
                "eta": record.eta,
                "pcg_iters": record.pcg_iters,
                "flag": record.pcg_flag,
                "update_reason": record.decision.reason,
                "denominator": record.decision.denominator_value,
            }
            for record in trace.records
        )
        return self.write_rows(name, NEWTON_COLUMNS, rows)

    def write_eigen_trace(self, name: str, trace) -> str:
        rows = (
            {
                "k": record.k,
                "normF": record.residual_norm,
                "eta": record.eta,
                "pcg_iters": record.inner_iters,
                "flag": record.flag,
                "update_reason": record.decision.reason,
                "denominator": record.decision.denominator_value,
                "theta": record.theta,
            }
            for record in trace.records
        )
        return self.write_rows(name, EIGEN_COLUMNS, rows)

    def read_rows(self, path: str) -> List[Dict]:
        """
        Read a CSV written by this store, converting known numeric columns.

        :param path: The file.
        :return: One dictionary per row.
        """
        with open(path, newline="", encoding="utf-8") as file:
            reader = csv.DictReader(file)
            return [{column: _parse(column, text) for column, text in row.items()} for row in reader]

    def write_table(self, name: str, columns: Sequence[str], rows: List[Dict]) -> tuple[str, str]:
        """
        Write a comparison table as CSV and as aligned plain text.

        :return: Tuple of (csv path, text path).
        """
        csv_path = self.write_rows(name, columns, rows)
        cells = [list(columns)] + [[_format(row.get(column)) for column in columns] for row in rows]
        widths = [max(len(line[i]) for line in cells) for i in range(len(columns))]
        lines = ["  ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in cells]
        lines.insert(1, "  ".join("-" * width for width in widths))
        text_path = self.path_for(name, ".txt")
        with open(text_path, "w", encoding="utf-8") as file:
            file.write("\n".join(lines) + "\n")
        return csv_path, text_path

    def write_report(self, name: str, records: Iterable[Dict]) -> str:
        """Write lab report records as JSON lines."""
        path = self.path_for(name, ".jsonl")
        with open(path, "w", encoding="utf-8") as file:
            for record in records:
                file.write(json.dumps(record, default=_format) + "\n")
        return path

    def read_report(self, path: str) -> List[Dict]:
        with open(path, encoding="utf-8") as file:
            return [json.loads(line) for line in file if line.strip()]
