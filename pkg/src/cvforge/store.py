"""Portable JSON model bundles.

Every real is written with 17 significant digits and fields always appear in
declaration order, so identical bundles serialize to identical bytes.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from cvforge.cvs import CVKind, CollectiveVariable, DEFAULT_DNN_NODE
from cvforge.errors import CVForgeError, InvalidArgumentError, ModelLoadError
from cvforge.features import (
    ContactDistance,
    FeatureSpec,
    PseudoDihedralCos,
    Raw,
    SinCos,
    StandardScaler,
)
from cvforge.linear import LinearModel, MulticlassLinearModel
from cvforge.mlp import MLPModel
from cvforge.utils.io import atomic_write_text, format_real

SCHEMA_VERSION = 1
NORM_RTOL = 1e-15


class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SinCosDoc(_Doc):
    kind: Literal["sincos"]
    index: int


class RawDoc(_Doc):
    kind: Literal["raw"]
    index: int


class ContactDoc(_Doc):
    kind: Literal["contact_distance"]
    i: int
    j: int


class DihedralDoc(_Doc):
    kind: Literal["pseudo_dihedral_cos"]
    a: int
    b: int
    c: int
    d: int


TransformDoc = Annotated[
    Union[SinCosDoc, RawDoc, ContactDoc, DihedralDoc], Field(discriminator="kind")
]


class ScalerDoc(_Doc):
    mean: list[float]
    std: list[float]


class FeaturesDoc(_Doc):
    n_coords: int
    transforms: list[TransformDoc]
    labels: list[str]
    scaler: ScalerDoc | None = None


class LinearDoc(_Doc):
    kind: Literal["linear"]
    w: list[float]
    b: float
    norm: float
    penalty: Literal["l1", "l2"]
    C: float
    loss: Literal["squared_hinge", "logistic"]


class MulticlassDoc(_Doc):
    kind: Literal["multiclass"]
    submodels: list[LinearDoc]


class LayerDoc(_Doc):
    W: list[list[float]]
    b: list[float]


class MLPDoc(_Doc):
    kind: Literal["mlp"]
    layers: list[LayerDoc]


ModelDoc = Annotated[Union[LinearDoc, MulticlassDoc, MLPDoc], Field(discriminator="kind")]


class CVDoc(_Doc):
    kind: CVKind
    normalized: bool = True
    node: int = DEFAULT_DNN_NODE


class MetadHints(_Doc):
    w0: float
    sigma: list[float]
    gamma: float
    deposit_stride: int
    temperature: float


class BundleDoc(_Doc):
    schema_version: int
    model: ModelDoc
    features: FeaturesDoc
    cv: CVDoc
    metad: MetadHints | None = None


@dataclass(frozen=True, eq=False)
class ModelBundle:
    model: LinearModel | MulticlassLinearModel | MLPModel
    spec: FeatureSpec
    cv_kind: CVKind
    normalized: bool = True
    node: int = DEFAULT_DNN_NODE
    metad: MetadHints | None = None

    def collective_variables(self) -> list[CollectiveVariable]:
        """One CV per exported output (every state for multiclass models)."""
        if self.cv_kind == "multiclass_distance":
            return [
                CollectiveVariable("multiclass_distance", self.spec, self.model, state=k)
                for k in range(self.model.n_classes)
            ]
        return [
            CollectiveVariable(
                self.cv_kind, self.spec, self.model, normalized=self.normalized, node=self.node
            )
        ]


def _linear_doc(m: LinearModel) -> LinearDoc:
    return LinearDoc(
        kind="linear",
        w=m.w.tolist(),
        b=m.b,
        norm=m.norm,
        penalty=m.penalty,
        C=m.C,
        loss=m.loss,
    )


def _model_doc(model) -> ModelDoc:
    if isinstance(model, LinearModel):
        return _linear_doc(model)
    if isinstance(model, MulticlassLinearModel):
        return MulticlassDoc(kind="multiclass", submodels=[_linear_doc(m) for m in model.submodels])
    if isinstance(model, MLPModel):
        return MLPDoc(
            kind="mlp",
            layers=[LayerDoc(W=W.tolist(), b=b.tolist()) for W, b in model.layers],
        )
    raise InvalidArgumentError(f"Cannot store model of type {type(model).__name__}")


def _transform_doc(t) -> TransformDoc:
    match t:
        case SinCos(index=k):
            return SinCosDoc(kind="sincos", index=k)
        case Raw(index=k):
            return RawDoc(kind="raw", index=k)
        case ContactDistance(i=i, j=j):
            return ContactDoc(kind="contact_distance", i=i, j=j)
        case PseudoDihedralCos(a=a, b=b, c=c, d=d):
            return DihedralDoc(kind="pseudo_dihedral_cos", a=a, b=b, c=c, d=d)
    raise InvalidArgumentError(f"Cannot store transform {t!r}")


def bundle_to_doc(bundle: ModelBundle) -> BundleDoc:
    spec = bundle.spec
    scaler = None
    if spec.scaler is not None:
        scaler = ScalerDoc(mean=spec.scaler.mean.tolist(), std=spec.scaler.std.tolist())
    return BundleDoc(
        schema_version=SCHEMA_VERSION,
        model=_model_doc(bundle.model),
        features=FeaturesDoc(
            n_coords=spec.n_coords,
            transforms=[_transform_doc(t) for t in spec.transforms],
            labels=spec.labels,
            scaler=scaler,
        ),
        cv=CVDoc(kind=bundle.cv_kind, normalized=bundle.normalized, node=bundle.node),
        metad=bundle.metad,
    )


def _emit(value: Any, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgumentError(f"Cannot store non-finite value {value}")
        text = format_real(value)
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if isinstance(value, list):
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return "[" + ", ".join(_emit(v, 0) for v in value) + "]"
        inner = [f"{pad}  {_emit(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(inner) + f"\n{pad}]" if inner else "[]"
    if isinstance(value, dict):
        inner = [f"{pad}  {json.dumps(k)}: {_emit(v, indent + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(inner) + f"\n{pad}}}" if inner else "{}"
    raise InvalidArgumentError(f"Cannot store value of type {type(value).__name__}")


def dumps_bundle(bundle: ModelBundle) -> str:
    return _emit(bundle_to_doc(bundle).model_dump(mode="python"), 0) + "\n"


def save_model(bundle: ModelBundle, path: Path):
    atomic_write_text(Path(path), dumps_bundle(bundle))


def _linear_from_doc(doc: LinearDoc, field: str) -> LinearModel:
    w = np.array(doc.w, dtype=float)
    norm = float(np.linalg.norm(w))
    if abs(doc.norm - norm) > NORM_RTOL * max(1.0, norm):
        raise ModelLoadError(f"stored norm {doc.norm!r} disagrees with ‖w‖₂ = {norm!r}", f"{field}.norm")
    return LinearModel(w, doc.b, doc.penalty, doc.C, doc.loss)


def _model_from_doc(doc: ModelDoc):
    match doc:
        case LinearDoc():
            return _linear_from_doc(doc, "model")
        case MulticlassDoc(submodels=subs):
            return MulticlassLinearModel(
                tuple(_linear_from_doc(s, f"model.submodels.{k}") for k, s in enumerate(subs))
            )
        case MLPDoc(layers=layers):
            return MLPModel(
                tuple((np.array(layer.W, dtype=float), np.array(layer.b, dtype=float)) for layer in layers)
            )


def _transform_from_doc(doc):
    match doc:
        case SinCosDoc(index=k):
            return SinCos(k)
        case RawDoc(index=k):
            return Raw(k)
        case ContactDoc(i=i, j=j):
            return ContactDistance(i, j)
        case DihedralDoc(a=a, b=b, c=c, d=d):
            return PseudoDihedralCos(a, b, c, d)


def bundle_from_doc(doc: BundleDoc) -> ModelBundle:
    if doc.schema_version != SCHEMA_VERSION:
        raise ModelLoadError(
            f"unsupported version {doc.schema_version}, expected {SCHEMA_VERSION}", "schema_version"
        )
    field = "features"
    try:
        scaler = None
        if doc.features.scaler is not None:
            field = "features.scaler"
            scaler = StandardScaler(
                np.array(doc.features.scaler.mean, dtype=float),
                np.array(doc.features.scaler.std, dtype=float),
            )
        field = "features"
        spec = FeatureSpec(
            tuple(_transform_from_doc(t) for t in doc.features.transforms), doc.features.n_coords, scaler
        )
        if spec.labels != doc.features.labels:
            raise ModelLoadError("labels do not match the transforms", "features.labels")
        field = "model"
        model = _model_from_doc(doc.model)
        field = "cv"
        bundle = ModelBundle(model, spec, doc.cv.kind, doc.cv.normalized, doc.cv.node, doc.metad)
        bundle.collective_variables()
    except ModelLoadError:
        raise
    except CVForgeError as e:
        raise ModelLoadError(str(e), field) from e
    return bundle


def loads_bundle(text: str) -> ModelBundle:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"malformed JSON: {e}") from e
    try:
        doc = BundleDoc.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(p) for p in first["loc"])
        raise ModelLoadError(first["msg"], path) from e
    return bundle_from_doc(doc)


def load_model(path: Path) -> ModelBundle:
    try:
        text = Path(path).read_text(encoding="ascii")
    except FileNotFoundError:
        raise ModelLoadError(f"{path} not found; run `cvforge train` first") from None
    except UnicodeDecodeError as e:
        raise ModelLoadError(f"non-ASCII content: {e}") from e
    return loads_bundle(text)
