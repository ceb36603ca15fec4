"""Linear SVM and logistic-regression trainers.

Objective: penalty(w) + C·Σ loss(ỹ·(wᵀx + b)), with ỹ ∈ {−1, +1} mapped from
labels {0, 1}. The bias is never penalized. L2 uses ½‖w‖₂², L1 uses ‖w‖₁.
Both are solved by monotone proximal gradient descent with Barzilai–Borwein
step proposals and backtracking.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from loguru import logger
from scipy.special import expit

from cvforge.datasets import LabeledDataset
from cvforge.errors import (
    DegenerateModelError,
    InvalidArgumentError,
    InvalidDatasetError,
    InvalidInputError,
)

Penalty = Literal["l1", "l2"]
Loss = Literal["squared_hinge", "logistic"]

_MAX_BACKTRACK = 60


@dataclass(frozen=True)
class TrainReport:
    objective: float
    converged: bool
    iterations: int
    objective_history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class LinearModel:
    w: np.ndarray
    b: float
    penalty: Penalty = "l2"
    C: float = 1.0
    loss: Loss = "squared_hinge"
    report: TrainReport | None = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.w)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w))

    def decision(self, x: np.ndarray) -> np.ndarray | float:
        x = _check_dim(x, self.n_features)
        return x @ self.w + self.b

    def signed_distance(self, x: np.ndarray) -> np.ndarray | float:
        norm = self.norm
        if norm == 0.0:
            raise DegenerateModelError("Weight vector is zero; hyperplane distance undefined")
        return self.decision(x) / norm


@dataclass(frozen=True, eq=False)
class MulticlassLinearModel:
    submodels: tuple[LinearModel, ...]

    def __post_init__(self):
        dims = {m.n_features for m in self.submodels}
        if len(dims) != 1:
            raise InvalidInputError(f"Submodels disagree on feature count: {sorted(dims)}")

    @property
    def n_classes(self) -> int:
        return len(self.submodels)

    @property
    def n_features(self) -> int:
        return self.submodels[0].n_features

    def distances(self, x: np.ndarray) -> np.ndarray:
        """Signed distance to every state's hyperplane (last axis = state)."""
        x = _check_dim(x, self.n_features)
        W = np.stack([m.w for m in self.submodels], axis=1)
        b = np.array([m.b for m in self.submodels])
        norms = np.linalg.norm(W, axis=0)
        if np.any(norms == 0.0):
            state = int(np.flatnonzero(norms == 0.0)[0])
            raise DegenerateModelError(f"State {state} hyperplane has a zero weight vector", state)
        return (x @ W + b) / norms


def _check_dim(x: np.ndarray, n_features: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n_features:
        raise InvalidInputError(f"Model expects {n_features} features, got {x.shape[-1]}")
    return x


def _loss_and_grad(loss: Loss, margins: np.ndarray) -> tuple[float, np.ndarray]:
    """Σ loss(m) and dloss/dm for every margin m."""
    if loss == "squared_hinge":
        slack = np.maximum(0.0, 1.0 - margins)
        return float(np.sum(slack**2)), -2.0 * slack
    return float(np.sum(np.logaddexp(0.0, -margins))), -expit(-margins)


def _curvature(loss: Loss) -> float:
    return 2.0 if loss == "squared_hinge" else 0.25


def _fit_binary(
    X: np.ndarray,
    y: np.ndarray,
    penalty: Penalty,
    C: float,
    loss: Loss,
    tol: float,
    max_iter: int,
) -> LinearModel:
    if C <= 0:
        raise InvalidArgumentError(f"C must be positive, got {C}")
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidArgumentError(f"max_iter must be at least 1, got {max_iter}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("Training features contain non-finite values")

    n, d = X.shape
    sign = np.where(y == 1, 1.0, -1.0)
    Xa = np.hstack([X, np.ones((n, 1))])

    def smooth(theta):
        margins = sign * (Xa @ theta)
        value, dm = _loss_and_grad(loss, margins)
        value *= C
        grad = C * (Xa.T @ (dm * sign))
        if penalty == "l2":
            value += 0.5 * float(theta[:d] @ theta[:d])
            grad[:d] += theta[:d]
        return value, grad

    def nonsmooth(theta):
        return float(np.sum(np.abs(theta[:d]))) if penalty == "l1" else 0.0

    def prox(theta, step):
        if penalty == "l2":
            return theta
        out = theta.copy()
        out[:d] = np.sign(theta[:d]) * np.maximum(np.abs(theta[:d]) - step, 0.0)
        return out

    lipschitz = C * _curvature(loss) * np.linalg.norm(Xa, 2) ** 2 + (1.0 if penalty == "l2" else 0.0)
    step = 1.0 / lipschitz

    theta = np.zeros(d + 1)
    f, grad = smooth(theta)
    objective = f + nonsmooth(theta)
    history = [objective]
    converged = False
    quiet = 0
    prev_theta = prev_grad = None
    iterations = 0

    for iterations in range(1, max_iter + 1):
        if prev_theta is not None:
            s = theta - prev_theta
            r = grad - prev_grad
            sr = float(s @ r)
            step = float(s @ s) / sr if sr > 0 else 2.0 * step
            step = min(max(step, 1e-3 / lipschitz), 1e6 / lipschitz)

        accepted = False
        for _ in range(_MAX_BACKTRACK):
            candidate = prox(theta - step * grad, step)
            delta = candidate - theta
            f_new, grad_new = smooth(candidate)
            model_bound = f + float(grad @ delta) + float(delta @ delta) / (2.0 * step)
            objective_new = f_new + nonsmooth(candidate)
            if f_new <= model_bound and objective_new <= objective:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            logger.warning("{} {} C={}: line search failed at iteration {}", loss, penalty, C, iterations)
            break
        if not np.any(delta):
            converged = True
            break

        decrease = (objective - objective_new) / max(abs(objective), np.finfo(float).tiny)
        prev_theta, prev_grad = theta, grad
        theta, f, grad, objective = candidate, f_new, grad_new, objective_new
        history.append(objective)
        logger.trace("iter {} objective {:.10g} step {:.3g}", iterations, objective, step)

        # two consecutive quiet iterations guard against one short BB step
        quiet = quiet + 1 if decrease < tol else 0
        if quiet >= 2:
            converged = True
            break

    report = TrainReport(objective, converged, iterations, tuple(history))
    logger.debug(
        "{} {} C={} finished: objective={:.8g} converged={} iterations={}",
        loss, penalty, C, objective, converged, iterations,
    )
    return LinearModel(theta[:d].copy(), float(theta[d]), penalty, float(C), loss, report)


def _require_binary(data: LabeledDataset):
    if data.class_count != 2:
        raise InvalidDatasetError(
            f"Binary trainer needs exactly 2 classes, got {data.class_count}"
        )


def train_linear_svm(
    data: LabeledDataset,
    penalty: Penalty = "l1",
    C: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
) -> LinearModel:
    _require_binary(data)
    return _fit_binary(data.X, data.y, penalty, C, "squared_hinge", tol, max_iter)


def train_logreg(
    data: LabeledDataset,
    penalty: Penalty = "l1",
    C: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
) -> LinearModel:
    _require_binary(data)
    return _fit_binary(data.X, data.y, penalty, C, "logistic", tol, max_iter)


def train_multiclass_ovr(
    data: LabeledDataset,
    penalty: Penalty = "l1",
    C: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
) -> MulticlassLinearModel:
    if data.class_count < 3:
        raise InvalidDatasetError(
            f"One-vs-rest needs at least 3 classes, got {data.class_count}; use the binary trainer"
        )
    submodels = []
    for k in range(data.class_count):
        target = (data.y == k).astype(int)
        submodels.append(_fit_binary(data.X, target, penalty, C, "squared_hinge", tol, max_iter))
    return MulticlassLinearModel(tuple(submodels))


def predict_label(model, x: np.ndarray):
    """Class index for one feature vector (int) or a matrix of them (array).

    Binary linear models use the strict indicator wᵀx + b > 0; multiclass and
    network models take the argmax, ties going to the lowest index.
    """
    from cvforge.mlp import MLPModel

    if isinstance(model, LinearModel):
        labels = (np.asarray(model.decision(x)) > 0).astype(int)
    elif isinstance(model, MulticlassLinearModel):
        labels = np.argmax(model.distances(x), axis=-1)
    elif isinstance(model, MLPModel):
        labels = np.argmax(model.forward(x), axis=-1)
    else:
        raise InvalidArgumentError(f"Unsupported model type {type(model).__name__}")
    return int(labels) if np.ndim(labels) == 0 else labels


def accuracy(model, data: LabeledDataset) -> float:
    return float(np.mean(predict_label(model, data.X) == data.y))
