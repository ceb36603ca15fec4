import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from cvforge.errors import InvalidDatasetError, InvalidInputError
from cvforge.utils.io import atomic_write_text, format_real

LABEL_COLUMN = "label"


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    feature_labels: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise InvalidDatasetError(f"Feature matrix must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidDatasetError(
                f"{X.shape[0]} feature rows but {y.shape[0] if y.ndim else 0} labels"
            )
        if y.size and (np.any(y < 0) or np.any(np.mod(y, 1) != 0)):
            raise InvalidDatasetError("Labels must be non-negative integers")
        y = y.astype(int)
        counts = np.bincount(y) if y.size else np.zeros(0, dtype=int)
        if counts.size < 2:
            raise InvalidDatasetError("Dataset needs at least two classes")
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise InvalidDatasetError(f"Class {missing} has no examples")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def class_count(self) -> int:
        return int(self.y.max()) + 1

    @property
    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.class_count)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.X[rows], self.y[rows], self.feature_labels)

    def relabel(self, y: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.X, y, self.feature_labels)


def write_feature_csv(
    path: Path,
    X: np.ndarray,
    feature_labels: Sequence[str],
    y: np.ndarray | None = None,
):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(feature_labels):
        raise InvalidInputError(
            f"{len(feature_labels)} labels for {X.shape[1]} feature columns"
        )
    header = list(feature_labels) + ([LABEL_COLUMN] if y is not None else [])
    lines = [",".join(header)]
    for i, row in enumerate(X):
        cells = [format_real(v) for v in row]
        if y is not None:
            cells.append(str(int(y[i])))
        lines.append(",".join(cells))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_labeled_csv(path: Path) -> LabeledDataset:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"Empty feature file: {path}")
        rows = [row for row in reader if row]
    if LABEL_COLUMN not in header:
        raise InvalidInputError(f"{path} has no `{LABEL_COLUMN}` column")
    label_col = header.index(LABEL_COLUMN)
    feature_cols = [k for k, name in enumerate(header) if k != label_col]
    try:
        X = np.array([[float(row[k]) for k in feature_cols] for row in rows])
        y = np.array([int(row[label_col]) for row in rows])
    except (ValueError, IndexError) as e:
        raise InvalidInputError(f"Malformed row in {path}: {e}")
    return LabeledDataset(X.reshape(len(rows), len(feature_cols)), y, tuple(header[k] for k in feature_cols))


def overlapping_gaussians(
    n_per_class: int, dim: int, separation: float, seed: int
) -> LabeledDataset:
    """Two unit-covariance Gaussians whose means differ by ``separation`` along
    the first axis; the remaining dimensions carry no class information."""
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n_per_class, dim))
    X1 = rng.standard_normal((n_per_class, dim))
    X1[:, 0] += separation
    X = np.vstack([X0, X1])
    y = np.repeat([0, 1], n_per_class)
    return LabeledDataset(X, y)


def bayes_accuracy(separation: float) -> float:
    """Optimal accuracy for two equiprobable unit Gaussians ``separation`` apart."""
    return float(norm.cdf(separation / 2.0))


def gaussian_clusters(
    centers: np.ndarray, n_per_class: int, spread: float, seed: int
) -> LabeledDataset:
    centers = np.asarray(centers, dtype=float)
    rng = np.random.default_rng(seed)
    X = np.vstack(
        [c + spread * rng.standard_normal((n_per_class, centers.shape[1])) for c in centers]
    )
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return LabeledDataset(X, y)


def xor_corners() -> LabeledDataset:
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    return LabeledDataset(X, y)
