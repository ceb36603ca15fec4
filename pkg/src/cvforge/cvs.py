"""Collective variables built from trained classifiers.

Every CV maps raw coordinates → features → scalar and returns the exact
gradient w.r.t. the coordinates through the feature Jacobian.
"""

from dataclasses import dataclass
from typing import Any, Literal, Sequence

import numpy as np
from scipy.special import expit

from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.features import FeatureSpec, Frame, apply_scaler, wrap_angle
from cvforge.linear import LinearModel, MulticlassLinearModel
from cvforge.mlp import MLPModel

CVKind = Literal[
    "svm_distance",
    "lr_probability",
    "lr_odds",
    "dnn_output",
    "multiclass_distance",
    "raw_coordinate",
]

DEFAULT_DNN_NODE = 1


@dataclass(frozen=True)
class CVValue:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True, eq=False)
class CollectiveVariable:
    kind: CVKind
    spec: FeatureSpec | None = None
    model: Any = None
    normalized: bool = True
    node: int = DEFAULT_DNN_NODE
    state: int = 0
    index: int = 0
    periodic: bool = False
    n_coords: int | None = None

    def __post_init__(self):
        if self.kind == "raw_coordinate":
            if self.n_coords is None and self.spec is None:
                raise InvalidArgumentError("raw_coordinate needs the coordinate count")
            if not 0 <= self.index < self.coordinate_count:
                raise InvalidArgumentError(
                    f"Coordinate index {self.index} out of range [0, {self.coordinate_count})"
                )
            return
        if self.spec is None or self.model is None:
            raise InvalidArgumentError(f"{self.kind} needs both a model and a feature spec")
        if self.periodic:
            raise InvalidArgumentError("Only raw_coordinate CVs can be periodic")
        expected = {
            "svm_distance": LinearModel,
            "lr_probability": LinearModel,
            "lr_odds": LinearModel,
            "dnn_output": MLPModel,
            "multiclass_distance": MulticlassLinearModel,
        }[self.kind]
        if not isinstance(self.model, expected):
            raise InvalidArgumentError(
                f"{self.kind} needs a {expected.__name__}, got {type(self.model).__name__}"
            )
        if self.kind in ("lr_probability", "lr_odds") and self.model.loss != "logistic":
            raise InvalidArgumentError(f"{self.kind} needs a model trained with logistic loss")
        if self.model.n_features != self.spec.width:
            raise InvalidInputError(
                f"Model expects {self.model.n_features} features, spec produces {self.spec.width}"
            )
        if self.kind == "dnn_output" and not 0 <= self.node < self.model.n_outputs:
            raise InvalidArgumentError(
                f"Output node {self.node} out of range [0, {self.model.n_outputs})"
            )
        if self.kind == "multiclass_distance" and not 0 <= self.state < self.model.n_classes:
            raise InvalidArgumentError(
                f"State {self.state} out of range [0, {self.model.n_classes})"
            )

    @property
    def coordinate_count(self) -> int:
        return self.n_coords if self.n_coords is not None else self.spec.n_coords

    @property
    def period(self) -> float | None:
        return 2.0 * np.pi if self.periodic else None

    @property
    def label(self) -> str:
        match self.kind:
            case "raw_coordinate":
                return f"q{self.index}"
            case "dnn_output":
                return f"dnn_{self.node}"
            case "multiclass_distance":
                return f"state_{self.state}"
            case "svm_distance":
                return "svm" if self.normalized else "svm_decision"
            case "lr_probability":
                return "lr"
            case _:
                return "lr_odds"


def svm_distance_cv(model: LinearModel, spec: FeatureSpec, normalized: bool = True):
    return CollectiveVariable("svm_distance", spec, model, normalized=normalized)


def lr_probability_cv(model: LinearModel, spec: FeatureSpec):
    return CollectiveVariable("lr_probability", spec, model)


def lr_odds_ratio_cv(model: LinearModel, spec: FeatureSpec):
    return CollectiveVariable("lr_odds", spec, model)


def dnn_output_cv(model: MLPModel, spec: FeatureSpec, node: int = DEFAULT_DNN_NODE):
    return CollectiveVariable("dnn_output", spec, model, node=node)


def multiclass_cv_set(model: MulticlassLinearModel, spec: FeatureSpec) -> list[CollectiveVariable]:
    return [
        CollectiveVariable("multiclass_distance", spec, model, state=k)
        for k in range(model.n_classes)
    ]


def raw_coordinate_cv(index: int, n_coords: int, periodic: bool = False):
    return CollectiveVariable("raw_coordinate", index=index, periodic=periodic, n_coords=n_coords)


def svm_cv(model: LinearModel, x: np.ndarray, normalized: bool = True) -> float:
    if normalized:
        return float(model.signed_distance(x))
    return float(model.decision(x))


def lr_cv(model: LinearModel, x: np.ndarray) -> float:
    return float(expit(model.decision(x)))


def lr_odds_cv(model: LinearModel, x: np.ndarray) -> float:
    return float(np.exp(model.decision(x)))


def dnn_cv(model: MLPModel, x: np.ndarray, node: int = DEFAULT_DNN_NODE) -> float:
    if not 0 <= node < model.n_outputs:
        raise InvalidArgumentError(f"Output node {node} out of range [0, {model.n_outputs})")
    return float(model.forward(x)[node])


def multiclass_cvs(model: MulticlassLinearModel, x: np.ndarray) -> np.ndarray:
    return model.distances(x)


def _value_and_feature_grad(cv: CollectiveVariable, x: np.ndarray) -> tuple[float, np.ndarray]:
    model = cv.model
    match cv.kind:
        case "svm_distance":
            if cv.normalized:
                return svm_cv(model, x), model.w / model.norm
            return svm_cv(model, x, normalized=False), model.w.copy()
        case "lr_probability":
            p = lr_cv(model, x)
            return p, p * (1.0 - p) * model.w
        case "lr_odds":
            odds = lr_odds_cv(model, x)
            return odds, odds * model.w
        case "dnn_output":
            return model.output_and_input_grad(x, cv.node)
        case "multiclass_distance":
            sub = model.submodels[cv.state]
            distance = float(model.distances(x)[cv.state])
            return distance, sub.w / sub.norm
    raise InvalidArgumentError(f"Unknown CV kind `{cv.kind}`")


def cv_value_from_features(cv: CollectiveVariable, x_raw: np.ndarray) -> float:
    """CV value from an unscaled feature vector."""
    if cv.kind == "raw_coordinate":
        raise InvalidArgumentError("raw_coordinate CVs are not defined on features")
    x = np.asarray(x_raw, dtype=float)
    if cv.spec.scaler is not None:
        x = apply_scaler(cv.spec.scaler, x)
    return _value_and_feature_grad(cv, x)[0]


def cv_gradient(cv: CollectiveVariable, frame: Frame | np.ndarray) -> CVValue:
    q = np.asarray(frame.coords if isinstance(frame, Frame) else frame, dtype=float)
    if cv.kind == "raw_coordinate":
        if q.shape != (cv.coordinate_count,):
            raise InvalidInputError(
                f"Expected {cv.coordinate_count} coordinates, got shape {q.shape}"
            )
        gradient = np.zeros(cv.coordinate_count)
        gradient[cv.index] = 1.0
        value = q[cv.index]
        return CVValue(float(wrap_angle(value) if cv.periodic else value), gradient)
    x, jac = cv.spec.evaluate(q, jacobian=True)
    value, grad_x = _value_and_feature_grad(cv, x)
    return CVValue(float(value), grad_x @ jac)


def cv_values(cvs: Sequence[CollectiveVariable], frames: np.ndarray) -> np.ndarray:
    """CV matrix (frames × CVs) without gradients."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    out = np.empty((frames.shape[0], len(cvs)))
    for k, cv in enumerate(cvs):
        if cv.kind == "raw_coordinate":
            column = frames[:, cv.index]
            out[:, k] = wrap_angle(column) if cv.periodic else column
            continue
        for i, q in enumerate(frames):
            x, _ = cv.spec.evaluate(q, jacobian=False)
            out[i, k] = _value_and_feature_grad(cv, x)[0]
    return out
