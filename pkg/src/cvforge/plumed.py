"""PLUMED CUSTOM/METAD text for stored bundles."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cvforge.cvs import CollectiveVariable, cv_value_from_features
from cvforge.errors import InvalidInputError, UnsupportedExportError
from cvforge.expression import eval_expression, parse_expression
from cvforge.linear import LinearModel
from cvforge.store import ModelBundle
from cvforge.utils.io import format_real

MAX_LINE_LENGTH = 1_000_000


def _num(x: float) -> str:
    text = format_real(x)
    return f"({text})" if text.startswith("-") else text


def _check_length(expr: str) -> str:
    if len(expr) > MAX_LINE_LENGTH:
        raise UnsupportedExportError(
            f"Expression length {len(expr)} exceeds {MAX_LINE_LENGTH} characters; network too deep or wide"
        )
    return expr


def _inputs(bundle: ModelBundle) -> list[str]:
    scaler = bundle.spec.scaler
    names = [f"v{i + 1}" for i in range(bundle.spec.width)]
    if scaler is None:
        return names
    return [
        f"(({name}-{_num(m)})/{_num(s)})" for name, m, s in zip(names, scaler.mean, scaler.std)
    ]


def _affine(weights: np.ndarray, bias: float, inputs: Sequence[str]) -> str:
    terms = "+".join(f"{_num(w)}*{x}" for w, x in zip(weights, inputs))
    return _check_length(f"({terms})+({format_real(bias)})")


def _linear_expr(model: LinearModel, inputs: Sequence[str], normalized: bool) -> str:
    z = _affine(model.w, model.b, inputs)
    return f"({z})/({format_real(model.norm)})" if normalized else z


def _swish(a: str) -> str:
    return _check_length(f"({a})*(1/(1+exp(-({a}))))")


def cv_expression(cv: CollectiveVariable, inputs: Sequence[str]) -> str:
    match cv.kind:
        case "svm_distance":
            return _linear_expr(cv.model, inputs, cv.normalized)
        case "multiclass_distance":
            return _linear_expr(cv.model.submodels[cv.state], inputs, True)
        case "lr_probability":
            return f"1/(1+exp(-({_affine(cv.model.w, cv.model.b, inputs)})))"
        case "lr_odds":
            return f"exp({_affine(cv.model.w, cv.model.b, inputs)})"
        case "dnn_output":
            h = list(inputs)
            for W, b in cv.model.layers[:-1]:
                h = [_swish(_affine(row, bj, h)) for row, bj in zip(W, b)]
            W, b = cv.model.layers[-1]
            return _check_length(_affine(W[cv.node], b[cv.node], h))
    raise UnsupportedExportError(f"CV kind `{cv.kind}` cannot be exported")


def _check_labels(labels: Sequence[str], width: int):
    if len(labels) != width:
        raise InvalidInputError(f"{len(labels)} feature labels for {width} features")
    for label in labels:
        if not label or not label.isascii() or any(ch in label for ch in " ,=\t\n"):
            raise InvalidInputError(f"Feature label {label!r} is not a valid PLUMED argument")


def metad_template(bundle: ModelBundle, cv_labels: Sequence[str]) -> list[str]:
    hints = bundle.metad
    if hints is None:
        sigma = ",".join("__SIGMA__" for _ in cv_labels)
        params = f"SIGMA={sigma} HEIGHT=__HEIGHT__ BIASFACTOR=__BIASFACTOR__ PACE=__PACE__ TEMP=__TEMP__"
    else:
        sigma = ",".join(format_real(s) for s in hints.sigma)
        params = (
            f"SIGMA={sigma} HEIGHT={format_real(hints.w0)} BIASFACTOR={format_real(hints.gamma)} "
            f"PACE={hints.deposit_stride} TEMP={format_real(hints.temperature)}"
        )
    return [
        "# metad: METAD ...",
        f"#   ARG={','.join(cv_labels)}",
        f"#   {params}",
        "#   FILE=HILLS",
        "# ...",
    ]


def emit_plumed(bundle: ModelBundle, feature_labels: Sequence[str] | None = None) -> str:
    labels = list(feature_labels) if feature_labels is not None else bundle.spec.labels
    _check_labels(labels, bundle.spec.width)
    inputs = _inputs(bundle)
    variables = ",".join(f"v{i + 1}" for i in range(bundle.spec.width))
    lines = []
    cv_labels = []
    for cv in bundle.collective_variables():
        expr = cv_expression(cv, inputs)
        line = f"{cv.label}: CUSTOM ARG={','.join(labels)} VAR={variables} FUNC={expr} PERIODIC=NO"
        _check_length(line)
        lines.append(line)
        cv_labels.append(cv.label)
    lines += metad_template(bundle, cv_labels)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CustomLine:
    label: str
    args: tuple[str, ...]
    variables: tuple[str, ...]
    func: str


def parse_custom_lines(text: str) -> list[CustomLine]:
    out = []
    for line in text.splitlines():
        if not line or line.startswith("#") or " CUSTOM " not in line:
            continue
        label, _, rest = line.partition(": CUSTOM ")
        fields = dict(item.split("=", 1) for item in rest.split(" ") if "=" in item)
        out.append(
            CustomLine(
                label,
                tuple(fields["ARG"].split(",")),
                tuple(fields["VAR"].split(",")),
                fields["FUNC"],
            )
        )
    return out


def round_trip_error(
    bundle: ModelBundle,
    n_samples: int = 1000,
    seed: int = 0,
    feature_labels: Sequence[str] | None = None,
) -> float:
    """Max |emitted FUNC − in-process CV| over random unscaled feature vectors."""
    text = emit_plumed(bundle, feature_labels)
    rng = np.random.default_rng(seed)
    width = bundle.spec.width
    scaler = bundle.spec.scaler
    x_raw = rng.standard_normal((n_samples, width))
    if scaler is not None:
        x_raw = scaler.mean + scaler.std * x_raw
    worst = 0.0
    for line, cv in zip(parse_custom_lines(text), bundle.collective_variables()):
        ast = parse_expression(line.func)
        for x in x_raw:
            env = dict(zip(line.variables, x))
            worst = max(worst, abs(eval_expression(ast, env) - cv_value_from_features(cv, x)))
    return worst
