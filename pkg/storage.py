"""
Run Storage Module
Reads CSV datasets and writes transported data, plans, matchings and bound reports
"""

import csv
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidInputError
from ot_core import DiscreteMeasure
from structures import LabeledDataset, UnlabeledDataset

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
WEIGHT_COLUMN = "weight"


def _read_rows(path: str) -> Tuple[List[str], List[List[str]]]:
    try:
        with open(path, newline="") as f:
            rows = [row for row in csv.reader(f) if row]
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e}") from e
    if not rows:
        raise InvalidInputError(f"{path} is empty; a header row is required")
    header = [name.strip() for name in rows[0]]
    body = rows[1:]
    if not body:
        raise InvalidInputError(f"{path} has a header but no data rows")
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}:{line}: expected {len(header)} columns, got {len(row)}")
    return header, body


def _floats(path: str, body: List[List[str]], columns: Sequence[int]) -> np.ndarray:
    try:
        return np.array([[float(row[c]) for c in columns] for row in body], dtype=float)
    except ValueError as e:
        raise InvalidInputError(f"{path}: non-numeric feature value ({e})") from e


def _labels(values: List[str]) -> np.ndarray:
    values = [v.strip() for v in values]
    try:
        return np.array([int(v) for v in values])
    except ValueError:
        return np.array(values)


def _feature_columns(header: List[str]) -> List[int]:
    return [i for i, name in enumerate(header) if name not in (LABEL_COLUMN, WEIGHT_COLUMN)]


def load_labeled_csv(path: str) -> LabeledDataset:
    """d feature columns and a final label column."""
    header, body = _read_rows(path)
    if header[-1] != LABEL_COLUMN:
        raise InvalidInputError(f"{path}: labeled data needs a final '{LABEL_COLUMN}' column")
    points = _floats(path, body, _feature_columns(header))
    return LabeledDataset(points, _labels([row[-1] for row in body]))


def load_unlabeled_csv(path: str) -> UnlabeledDataset:
    """Feature columns only; a label column, if present, is ignored."""
    header, body = _read_rows(path)
    return UnlabeledDataset(_floats(path, body, _feature_columns(header)))


def load_dataset_csv(path: str):
    """Labeled when the file has a label column, unlabeled otherwise."""
    header, _ = _read_rows(path)
    return load_labeled_csv(path) if header[-1] == LABEL_COLUMN else load_unlabeled_csv(path)


def load_measure_csv(path: str) -> DiscreteMeasure:
    """Support points with an optional weight column (uniform otherwise)."""
    header, body = _read_rows(path)
    points = _floats(path, body, _feature_columns(header))
    if WEIGHT_COLUMN not in header:
        return DiscreteMeasure.uniform(points)
    weights = _floats(path, body, [header.index(WEIGHT_COLUMN)]).ravel()
    total = weights.sum()
    if np.any(weights < 0) or total <= 0:
        raise InvalidInputError(f"{path}: weights must be non-negative with a positive sum")
    return DiscreteMeasure(points, weights / total)


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _plain(value: Any) -> Any:
    """numpy scalars and arrays to JSON-native values."""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class RunStorage:
    """Handles output files of one command run"""

    def __init__(self, base_path: str = "hotda_runs"):
        """
        Initialize storage with base directory path

        Args:
            base_path: Directory receiving every output file of the run
        """
        self.base_path = base_path
        self._ensure_directories()

    def _ensure_directories(self):
        os.makedirs(self.base_path, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.base_path, name)

    def save_dataset(self, name: str, points: np.ndarray, labels: Optional[np.ndarray] = None) -> str:
        """Write points (and labels as a final column) with an x0..x{d-1} header."""
        points = np.asarray(points, dtype=float)
        header = [f"x{j}" for j in range(points.shape[1])]
        if labels is not None:
            header.append(LABEL_COLUMN)
        path = self.path(name)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for i, row in enumerate(points):
                cells = [_cell(v) for v in row]
                if labels is not None:
                    cells.append(_cell(labels[i]))
                writer.writerow(cells)
        logger.debug("Saved %d points to %s", points.shape[0], path)
        return path

    def save_plan(self, name: str, coupling: np.ndarray) -> str:
        """Coupling in long form, one (row, col, mass) line per entry."""
        coupling = np.asarray(coupling, dtype=float)
        path = self.path(name)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["row", "col", "mass"])
            for (i, j), mass in np.ndenumerate(coupling):
                writer.writerow([i, j, _cell(mass)])
        return path

    def save_json(self, name: str, payload: Dict[str, Any]) -> str:
        path = self.path(name)
        with open(path, "w") as f:
            json.dump(_plain(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.debug("Saved %s", path)
        return path

    def load_json(self, name: str) -> Dict[str, Any]:
        path = self.path(name)
        try:
            with open(path) as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidInputError(f"cannot read {path}: {e}") from e
