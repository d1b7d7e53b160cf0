import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence

import numpy as np

from common.errors import DataError, TableLoadError

logger = logging.getLogger(__name__)


def format_value(value: float) -> str:
    """Shortest round-trip repr; masked (NaN) values become an empty field."""
    value = float(value)
    if math.isnan(value):
        return ""
    if math.isinf(value):
        raise DataError(f"cannot serialize infinite value {value}")
    return repr(value)


def write_csv(path: Path, columns: Mapping[str, Sequence[float]]) -> Path:
    """
    Write equal-length columns as a comma-separated table with a header row.

    Args:
        path: Destination file
        columns: Ordered mapping of column name to values

    Returns:
        The written path
    """
    names = list(columns)
    data = [np.asarray(columns[name], dtype=float) for name in names]
    lengths = {len(col) for col in data}
    if len(lengths) != 1:
        raise DataError(f"columns of {path.name} have different lengths: {sorted(lengths)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([format_value(v) for v in row])
    logger.info(f"Wrote {path} ({lengths.pop()} rows)")
    return path


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    try:
        text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
    except ValueError as e:
        raise DataError(f"cannot serialize {path.name}: {e}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(text)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path


class SafeTableLoader:
    """Reader for the csv/json files the lab emits, with strict error handling."""

    def load_csv(self, path: Path, required: Sequence[str] = ()) -> Dict[str, np.ndarray]:
        """
        Read a csv table into float columns.

        Args:
            path: csv file with a header row
            required: Column names that must be present

        Returns:
            Mapping of column name to array (empty fields become NaN)

        Raises:
            TableLoadError: If the file is missing or malformed
        """
        try:
            with open(path, newline="") as f:
                reader = csv.reader(f)
                header = next(reader)
                rows = [row for row in reader]
        except StopIteration:
            raise TableLoadError(f"{path} is empty")
        except OSError as e:
            raise TableLoadError(f"cannot read {path}: {e}")
        except csv.Error as e:
            raise TableLoadError(f"{path} is not valid csv: {e}")

        missing = [name for name in required if name not in header]
        if missing:
            raise TableLoadError(f"{path} lacks columns {missing}")
        try:
            values = np.array(
                [[float(cell) if cell != "" else np.nan for cell in row] for row in rows],
                dtype=float,
            )
        except ValueError as e:
            raise TableLoadError(f"{path} has a non-numeric cell: {e}")
        if values.ndim != 2 or values.shape[1] != len(header):
            raise TableLoadError(f"{path} has rows that do not match its header")
        return {name: values[:, i] for i, name in enumerate(header)}

    def load_json(self, path: Path) -> Dict[str, Any]:
        """
        Read a json summary.

        Raises:
            TableLoadError: If the file is missing or not a json object
        """
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as e:
            raise TableLoadError(f"cannot read {path}: {e}")
        except json.JSONDecodeError as e:
            raise TableLoadError(f"{path} is not valid json: {e}")
        if not isinstance(data, dict):
            raise TableLoadError(f"{path} does not hold a json object")
        return data
