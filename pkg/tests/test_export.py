import json
import math

import numpy as np
import pytest

from cvforge.cvs import cv_gradient
from cvforge.errors import ExpressionError, InvalidInputError, ModelLoadError, UnsupportedExportError
from cvforge.expression import eval_expression, parse_expression
from cvforge.features import FeatureSpec, SinCos, StandardScaler, chain_feature_spec
from cvforge.linear import LinearModel, MulticlassLinearModel
from cvforge.mlp import MLPModel
from cvforge.plumed import MAX_LINE_LENGTH, emit_plumed, parse_custom_lines, round_trip_error
from cvforge.store import (
    MetadHints,
    ModelBundle,
    dumps_bundle,
    load_model,
    loads_bundle,
    save_model,
)


@pytest.fixture
def scaled_torsions():
    scaler = StandardScaler(np.array([0.1, -0.2, 0.05, 0.3]), np.array([0.7, 0.6, 0.71, 0.65]))
    return FeatureSpec((SinCos(0), SinCos(1)), 2, scaler)


@pytest.fixture
def svm_bundle(scaled_torsions):
    model = LinearModel(np.array([0.8, -0.3, 0.0, 1.1]), 0.25, "l1", 1.0, "squared_hinge")
    hints = MetadHints(w0=1.0, sigma=[0.25], gamma=8.0, deposit_stride=400, temperature=1.0)
    return ModelBundle(model, scaled_torsions, "svm_distance", metad=hints)


@pytest.fixture
def lr_bundle(scaled_torsions):
    model = LinearModel(np.array([0.5, 0.2, -0.7, 0.1]), -0.1, "l2", 10.0, "logistic")
    return ModelBundle(model, scaled_torsions, "lr_probability")


@pytest.fixture
def mlp_bundle(scaled_torsions, rng):
    widths = [4, 3, 3, 2]
    model = MLPModel(
        tuple((rng.normal(size=(o, i)), rng.normal(size=o)) for i, o in zip(widths[:-1], widths[1:]))
    )
    return ModelBundle(model, scaled_torsions, "dnn_output", node=1)


@pytest.fixture
def ovr_bundle(rng):
    spec = chain_feature_spec(5)
    model = MulticlassLinearModel(
        tuple(LinearModel(rng.normal(size=spec.width), float(rng.normal())) for _ in range(3))
    )
    return ModelBundle(model, spec, "multiclass_distance")


class TestExpression:
    """Arithmetic parser used to check exported functions"""

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("1+2*3", 7.0),
            ("(1+2)*3", 9.0),
            ("8/4/2", 1.0),
            ("2-3-4", -5.0),
            ("-2*-3", 6.0),
            ("--1", 1.0),
            ("exp(0)", 1.0),
            ("1/(1+exp(-(0)))", 0.5),
            ("1.5e2+.5", 150.5),
            ("x*(y-1)", 6.0),
        ],
    )
    def test_evaluates(self, text, expected):
        assert eval_expression(text, {"x": 3.0, "y": 3.0}) == pytest.approx(expected)

    def test_parse_once_evaluate_many(self):
        ast = parse_expression("(v1-0.5)/(0.25)")
        assert [eval_expression(ast, {"v1": v}) for v in (0.5, 1.0)] == [0.0, 2.0]

    def test_exp_overflow_is_infinite(self):
        assert eval_expression("exp(1000)", {}) == math.inf
        assert eval_expression("1/(1+exp(1000))", {}) == 0.0

    @pytest.mark.parametrize(
        "text, position",
        [("1+", 2), ("(1+2", 4), ("1 $ 2", 2), ("1 2", 2), ("*3", 0)],
    )
    def test_syntax_errors_report_position(self, text, position):
        with pytest.raises(ExpressionError) as exc:
            parse_expression(text)
        assert exc.value.position == position

    def test_unknown_variable(self):
        with pytest.raises(ExpressionError) as exc:
            eval_expression("1+zz", {"x": 1.0})
        assert exc.value.position == 2

    def test_division_by_zero(self):
        with pytest.raises(ExpressionError) as exc:
            eval_expression("1/(x-1)", {"x": 1.0})
        assert exc.value.position == 1


class TestModelStore:
    """JSON bundles of model, features and CV choice"""

    @pytest.mark.parametrize("name", ["svm_bundle", "lr_bundle", "mlp_bundle", "ovr_bundle"])
    def test_save_load_is_byte_stable(self, tmp_path, request, name):
        bundle = request.getfixturevalue(name)
        path = tmp_path / "model.json"
        save_model(bundle, path)
        reloaded = load_model(path)
        assert dumps_bundle(reloaded) == path.read_text()
        if bundle.spec.n_coords == 2:
            q = np.array([0.3, -1.2])
        else:
            q = np.array([0, 0, 0, 1, 0, 0, 1, 1, 0, 2, 1, 1, 2, 2, 2.5], dtype=float)
        for a, b in zip(bundle.collective_variables(), reloaded.collective_variables()):
            assert a.label == b.label
            assert cv_gradient(a, q).value == cv_gradient(b, q).value

    def test_document_layout(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        assert list(doc) == ["schema_version", "model", "features", "cv", "metad"]
        assert doc["schema_version"] == 1
        assert doc["model"]["kind"] == "linear"
        assert doc["features"]["labels"] == ["sin_q0", "cos_q0", "sin_q1", "cos_q1"]
        assert doc["cv"] == {"kind": "svm_distance", "normalized": True, "node": 1}
        assert doc["metad"]["sigma"] == [0.25]

    def test_reals_keep_full_precision(self, scaled_torsions):
        w = np.array([0.1 + 0.2, 1 / 3, 2.0, -1e-300])
        bundle = ModelBundle(LinearModel(w, 0.0), scaled_torsions, "svm_distance")
        text = dumps_bundle(bundle)
        assert '"b": 0.0' in text
        np.testing.assert_array_equal(loads_bundle(text).model.w, w)

    def test_malformed_json(self):
        with pytest.raises(ModelLoadError):
            loads_bundle("{not json")

    def test_missing_field_is_named(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        del doc["model"]["norm"]
        with pytest.raises(ModelLoadError) as exc:
            loads_bundle(json.dumps(doc))
        assert exc.value.field.startswith("model")
        assert "norm" in exc.value.field

    def test_tampered_norm(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        doc["model"]["w"][0] += 1e-6
        with pytest.raises(ModelLoadError) as exc:
            loads_bundle(json.dumps(doc))
        assert exc.value.field == "model.norm"

    def test_unknown_version(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        doc["schema_version"] = 2
        with pytest.raises(ModelLoadError) as exc:
            loads_bundle(json.dumps(doc))
        assert exc.value.field == "schema_version"

    def test_extra_fields_rejected(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        doc["cv"]["colour"] = "red"
        with pytest.raises(ModelLoadError):
            loads_bundle(json.dumps(doc))

    def test_inconsistent_cv(self, svm_bundle):
        doc = json.loads(dumps_bundle(svm_bundle))
        doc["cv"]["kind"] = "dnn_output"
        with pytest.raises(ModelLoadError) as exc:
            loads_bundle(json.dumps(doc))
        assert exc.value.field == "cv"


class TestPlumedExport:
    """CUSTOM lines reproduce the in-process CV"""

    @pytest.mark.parametrize("name", ["svm_bundle", "lr_bundle", "mlp_bundle", "ovr_bundle"])
    def test_round_trip_accuracy(self, request, name):
        bundle = request.getfixturevalue(name)
        assert round_trip_error(bundle, n_samples=200, seed=1) <= 1e-10

    def test_unnormalized_and_odds(self, scaled_torsions):
        svm = ModelBundle(LinearModel(np.array([1.0, 2.0, 0.5, -1.0]), 0.3), scaled_torsions, "svm_distance", normalized=False)
        odds = ModelBundle(
            LinearModel(np.array([0.2, -0.1, 0.3, 0.4]), 0.1, loss="logistic"), scaled_torsions, "lr_odds"
        )
        assert round_trip_error(svm, n_samples=100) <= 1e-10
        assert round_trip_error(odds, n_samples=100) <= 1e-10

    def test_line_layout(self, svm_bundle):
        text = emit_plumed(svm_bundle)
        lines = parse_custom_lines(text)
        assert len(lines) == 1
        line = lines[0]
        assert line.label == "svm"
        assert line.args == ("sin_q0", "cos_q0", "sin_q1", "cos_q1")
        assert line.variables == ("v1", "v2", "v3", "v4")
        assert text.splitlines()[0].endswith("PERIODIC=NO")
        assert "#   SIGMA=0.25 HEIGHT=1 BIASFACTOR=8 PACE=400 TEMP=1" in text

    def test_placeholders_without_hints(self, lr_bundle):
        text = emit_plumed(lr_bundle)
        assert "__SIGMA__" in text and "__PACE__" in text

    def test_one_line_per_state(self, ovr_bundle):
        lines = parse_custom_lines(emit_plumed(ovr_bundle))
        assert [line.label for line in lines] == ["state_0", "state_1", "state_2"]

    def test_custom_feature_labels(self, svm_bundle):
        text = emit_plumed(svm_bundle, ["s1", "c1", "s2", "c2"])
        assert parse_custom_lines(text)[0].args == ("s1", "c1", "s2", "c2")
        assert round_trip_error(svm_bundle, n_samples=50, feature_labels=["s1", "c1", "s2", "c2"]) <= 1e-10
        with pytest.raises(InvalidInputError):
            emit_plumed(svm_bundle, ["s1", "c1"])
        with pytest.raises(InvalidInputError):
            emit_plumed(svm_bundle, ["s 1", "c1", "s2", "c2"])

    def test_default_network_too_long(self, scaled_torsions, rng):
        widths = [4, 32, 32, 32, 32, 2]
        model = MLPModel(
            tuple((rng.normal(size=(o, i)), rng.normal(size=o)) for i, o in zip(widths[:-1], widths[1:]))
        )
        with pytest.raises(UnsupportedExportError):
            emit_plumed(ModelBundle(model, scaled_torsions, "dnn_output"))
        assert MAX_LINE_LENGTH == 1_000_000
