"""
Mixin class for CSV metric tables and YAML manifest/report output.
"""

import csv
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np
import yaml

from ._constants import (
    ROUNDS_CSV_COLUMNS,
    SUMMARY_CSV_COLUMNS,
    SUMMARY_DB_DECIMALS,
    TRADEOFF_CSV_COLUMNS,
    TRADEOFF_UE_CSV_COLUMNS,
)
from ._feel import history_rows
from ._models import RoundHistory, TradeoffRow

PathLike = Union[str, Path]


def format_number(value: Any) -> str:
    """Locale-independent text for a CSV cell; floats keep full precision"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def format_db(value: float, decimals: int = SUMMARY_DB_DECIMALS) -> str:
    value = float(value)
    if math.isinf(value) or math.isnan(value):
        return format_number(value)
    return f"{value:.{decimals}f}"


class _ReportDumper(yaml.SafeDumper):
    def write_line_break(self, data=None):
        super().write_line_break(data)
        if len(self.indents) == 1:
            super().write_line_break()

    def increase_indent(self, flow=False, indentless=False):
        return super().increase_indent(flow, False)

    def ignore_aliases(self, data):
        return True


def _yaml_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _yaml_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_yaml_safe(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


class CsvOutputMixin:
    """Methods for writing metric tables and YAML documents.

    Expects ``self.reporter`` to be a Reporter.
    """

    def write_csv(self, path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Header row plus one line per row, cells formatted by format_number"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ValueError(f"Row {row!r} does not match columns {columns!r}")
                writer.writerow([c if isinstance(c, str) else format_number(c) for c in row])
        self.reporter.log_verbose(f"Wrote {path}")
        return path

    def write_rounds_csv(self, path: PathLike, history: RoundHistory) -> Path:
        return self.write_csv(path, ROUNDS_CSV_COLUMNS, history_rows(history))

    def write_summary_csv(self, path: PathLike, rows: List[Dict[str, Any]]) -> Path:
        """One row per (run, framework); dB columns rounded"""
        table = []
        for row in rows:
            table.append(
                [
                    row["run"],
                    row["framework"],
                    format_db(row["g_nmse_db"]),
                    format_db(row["i_nmse_db"]),
                    int(row.get("uplink_bits", 0)),
                    int(row.get("downlink_bits", 0)),
                    int(row.get("local_steps", 0)),
                ]
            )
        return self.write_csv(path, SUMMARY_CSV_COLUMNS, table)

    def write_tradeoff_csv(self, path: PathLike, rows: Sequence[TradeoffRow]) -> List[Path]:
        """The epoch table plus its per-UE companion ``<stem>_per_ue.csv``"""
        path = Path(path)
        main = self.write_csv(
            path,
            TRADEOFF_CSV_COLUMNS,
            [[r.epochs, format_db(r.i_nmse_db), format_db(r.g_nmse_db)] for r in rows],
        )
        companion = self.write_csv(
            path.with_name(f"{path.stem}_per_ue{path.suffix}"),
            TRADEOFF_UE_CSV_COLUMNS,
            [[r.epochs, ue, i_db, g_db] for r in rows for ue, i_db, g_db in r.per_ue],
        )
        return [main, companion]

    def generate_yaml(self, data: Dict[str, Any]) -> str:
        content = yaml.dump(
            _yaml_safe(data),
            Dumper=_ReportDumper,
            default_flow_style=False,
            sort_keys=False,
            indent=2,
            width=120,
            allow_unicode=True,
        )
        return f"---\n{content}...\n"

    def save_yaml(self, path: PathLike, data: Dict[str, Any]) -> Path:
        path = Path(path)
        dir_name = os.path.dirname(path)
        if dir_name:
            os.makedirs(dir_name, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.generate_yaml(data))
        self.reporter.log_verbose(f"Wrote {path}")
        return path
