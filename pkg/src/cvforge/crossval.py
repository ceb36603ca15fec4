from typing import Any, Callable, Literal, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from sklearn.model_selection import StratifiedKFold

from cvforge.datasets import LabeledDataset
from cvforge.errors import InvalidArgumentError
from cvforge.linear import (
    LinearModel,
    accuracy,
    train_linear_svm,
    train_logreg,
    train_multiclass_ovr,
)
from cvforge.mlp import train_mlp

TrainerName = Literal["svm", "logreg", "multiclass", "mlp"]

TRAINERS: dict[str, Callable[..., Any]] = {
    "svm": train_linear_svm,
    "logreg": train_logreg,
    "multiclass": train_multiclass_ovr,
    "mlp": train_mlp,
}

Setting = dict[str, Any]


class CrossValReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    trainer: TrainerName
    k: int
    seed: int
    grid: list[Setting]
    fold_accuracies: list[list[float]]
    mean_accuracy: list[float]
    std_accuracy: list[float]
    best_index: int
    best_setting: Setting
    model: Any = Field(default=None, exclude=True)


def train(trainer: TrainerName, data: LabeledDataset, setting: Setting, seed: int):
    if trainer not in TRAINERS:
        raise InvalidArgumentError(f"Unknown trainer `{trainer}`")
    kwargs = dict(setting)
    if trainer == "mlp":
        kwargs.setdefault("seed", seed)
    return TRAINERS[trainer](data, **kwargs)


def _best_index(grid: Sequence[Setting], means: Sequence[float]) -> int:
    order = sorted(
        range(len(grid)),
        key=lambda i: (-means[i], grid[i].get("C", 0.0), i),
    )
    return order[0]


def kfold_cross_validate(
    data: LabeledDataset,
    k: int,
    grid: Sequence[Setting],
    trainer: TrainerName = "svm",
    seed: int = 0,
) -> CrossValReport:
    if not 3 <= k <= 10:
        raise InvalidArgumentError(f"k must lie in [3, 10], got {k}")
    if not grid:
        raise InvalidArgumentError("Hyperparameter grid is empty")
    smallest = int(data.class_sizes.min())
    if k > smallest:
        raise InvalidArgumentError(f"k={k} exceeds the smallest class size {smallest}")

    folds = list(StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(data.X, data.y))
    fold_acc: list[list[float]] = []
    for setting in grid:
        scores = []
        for train_rows, test_rows in folds:
            model = train(trainer, data.subset(train_rows), setting, seed)
            scores.append(accuracy(model, data.subset(test_rows)))
        fold_acc.append(scores)
        logger.info(
            "{} {}: accuracy {:.4f} ± {:.4f}", trainer, setting, np.mean(scores), np.std(scores)
        )

    means = [float(np.mean(s)) for s in fold_acc]
    stds = [float(np.std(s)) for s in fold_acc]
    best = _best_index(grid, means)
    final = train(trainer, data, grid[best], seed)
    return CrossValReport(
        trainer=trainer,
        k=k,
        seed=seed,
        grid=[dict(s) for s in grid],
        fold_accuracies=fold_acc,
        mean_accuracy=means,
        std_accuracy=stds,
        best_index=best,
        best_setting=dict(grid[best]),
        model=final,
    )


def holdout_evaluate(
    data: LabeledDataset,
    trainer: TrainerName,
    setting: Setting,
    seed: int,
    test_fraction: float = 0.5,
) -> tuple[Any, float]:
    """Train on a seeded split and score the held-out part."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.X.shape[0])
    n_test = int(round(test_fraction * len(order)))
    test_rows, train_rows = np.sort(order[:n_test]), np.sort(order[n_test:])
    model = train(trainer, data.subset(train_rows), setting, seed)
    return model, accuracy(model, data.subset(test_rows))


def coefficient_sweep(
    data: LabeledDataset,
    C_values: Sequence[float],
    trainer: Literal["svm", "logreg"] = "svm",
    penalty: str = "l1",
    drop_fraction: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Rows of [w..., b] trained at each C, optionally after removing a random
    ``drop_fraction`` of the rows (the same subset for every C)."""
    if not 0.0 <= drop_fraction < 1.0:
        raise InvalidArgumentError(f"drop_fraction must lie in [0, 1), got {drop_fraction}")
    rows = np.arange(data.X.shape[0])
    if drop_fraction:
        rng = np.random.default_rng(seed)
        keep = int(round((1.0 - drop_fraction) * len(rows)))
        rows = np.sort(rng.permutation(rows)[:keep])
    subset = data.subset(rows)
    coefficients = []
    for C in C_values:
        model: LinearModel = train(trainer, subset, {"C": C, "penalty": penalty}, seed)
        coefficients.append(np.append(model.w, model.b))
    return np.array(coefficients)
