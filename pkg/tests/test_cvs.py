import numpy as np
import pytest

from cvforge.cvs import (
    CollectiveVariable,
    cv_gradient,
    cv_value_from_features,
    cv_values,
    dnn_cv,
    dnn_output_cv,
    lr_cv,
    lr_odds_cv,
    lr_odds_ratio_cv,
    lr_probability_cv,
    multiclass_cv_set,
    multiclass_cvs,
    raw_coordinate_cv,
    svm_cv,
    svm_distance_cv,
)
from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.features import Frame, featurize, fit_scaler
from cvforge.linear import LinearModel, MulticlassLinearModel
from cvforge.mlp import MLPModel
from tests.helpers import finite_difference


@pytest.fixture
def scaled_spec(torsion_spec, rng):
    frames = rng.uniform(-np.pi, np.pi, size=(200, 2))
    return torsion_spec.with_scaler(fit_scaler(featurize(torsion_spec, frames)))


@pytest.fixture
def svm_model():
    return LinearModel(np.array([0.8, -0.3, 0.0, 1.1]), 0.25)


@pytest.fixture
def lr_model():
    return LinearModel(np.array([0.5, 0.2, -0.7, 0.1]), -0.1, loss="logistic")


@pytest.fixture
def net(rng):
    widths = [4, 3, 3, 2]
    return MLPModel(
        tuple((rng.normal(size=(o, i)) * 0.7, rng.normal(size=o)) for i, o in zip(widths[:-1], widths[1:]))
    )


@pytest.fixture
def ovr_model(rng):
    return MulticlassLinearModel(
        tuple(LinearModel(rng.normal(size=4), float(rng.normal())) for _ in range(3))
    )


@pytest.fixture
def all_cvs(scaled_spec, svm_model, lr_model, net, ovr_model):
    return [
        svm_distance_cv(svm_model, scaled_spec),
        svm_distance_cv(svm_model, scaled_spec, normalized=False),
        lr_probability_cv(lr_model, scaled_spec),
        lr_odds_ratio_cv(lr_model, scaled_spec),
        dnn_output_cv(net, scaled_spec, node=0),
        dnn_output_cv(net, scaled_spec),
        *multiclass_cv_set(ovr_model, scaled_spec),
    ]


class TestValues:
    """CV values on feature vectors"""

    def test_svm_distance(self, svm_model):
        x = np.array([1.0, 2.0, -1.0, 0.5])
        decision = x @ svm_model.w + svm_model.b
        assert svm_cv(svm_model, x, normalized=False) == pytest.approx(decision)
        assert svm_cv(svm_model, x) == pytest.approx(decision / np.linalg.norm(svm_model.w))

    def test_lr_forms(self, lr_model):
        x = np.array([0.3, -0.2, 0.4, 1.0])
        z = x @ lr_model.w + lr_model.b
        assert lr_cv(lr_model, x) == pytest.approx(1.0 / (1.0 + np.exp(-z)))
        assert lr_odds_cv(lr_model, x) == pytest.approx(np.exp(z))

    def test_lr_saturates_without_overflow(self, lr_model):
        x = np.full(4, 1e4) * np.sign(lr_model.w)
        assert lr_cv(lr_model, x) == 1.0
        assert lr_cv(lr_model, -x) == 0.0

    def test_dnn_node(self, net):
        x = np.array([0.1, 0.2, 0.3, 0.4])
        assert dnn_cv(net, x, 0) == pytest.approx(net.forward(x)[0])
        with pytest.raises(InvalidArgumentError):
            dnn_cv(net, x, 2)

    def test_multiclass_vector(self, ovr_model):
        x = np.array([0.1, 0.2, 0.3, 0.4])
        d = multiclass_cvs(ovr_model, x)
        assert d.shape == (3,)
        assert d[1] == pytest.approx(ovr_model.submodels[1].signed_distance(x))

    def test_raw_features_apply_scaler(self, scaled_spec, svm_model):
        cv = svm_distance_cv(svm_model, scaled_spec)
        q = np.array([0.7, -1.9])
        raw = np.array([np.sin(0.7), np.cos(0.7), np.sin(-1.9), np.cos(-1.9)])
        assert cv_value_from_features(cv, raw) == pytest.approx(cv_gradient(cv, q).value)


class TestGradients:
    """Coordinate gradients match finite differences for every CV kind"""

    @pytest.mark.parametrize("q", [[0.4, -2.1], [-2.5, 2.6], [3.1, 0.0]])
    def test_chain_rule(self, all_cvs, q):
        q = np.array(q)
        for cv in all_cvs:
            result = cv_gradient(cv, q)
            fd = finite_difference(lambda z: cv_gradient(cv, z).value, q)
            np.testing.assert_allclose(result.gradient, fd, rtol=1e-5, atol=1e-6, err_msg=cv.label)

    def test_batch_values_agree(self, all_cvs, rng):
        frames = rng.uniform(-np.pi, np.pi, size=(7, 2))
        table = cv_values(all_cvs, frames)
        assert table.shape == (7, len(all_cvs))
        for i, q in enumerate(frames):
            for k, cv in enumerate(all_cvs):
                assert table[i, k] == pytest.approx(cv_gradient(cv, Frame(q)).value)

    def test_raw_coordinate(self):
        cv = raw_coordinate_cv(1, 2, periodic=True)
        result = cv_gradient(cv, np.array([0.0, 4.0]))
        assert result.value == pytest.approx(4.0 - 2 * np.pi)
        np.testing.assert_array_equal(result.gradient, [0.0, 1.0])
        assert cv.period == pytest.approx(2 * np.pi)
        assert raw_coordinate_cv(0, 1).period is None


class TestValidation:
    """Construction rejects inconsistent CVs"""

    def test_lr_needs_logistic_model(self, svm_model, scaled_spec):
        with pytest.raises(InvalidArgumentError):
            lr_probability_cv(svm_model, scaled_spec)

    def test_model_type_per_kind(self, net, scaled_spec):
        with pytest.raises(InvalidArgumentError):
            CollectiveVariable("svm_distance", scaled_spec, net)

    def test_width_mismatch(self, raw_spec, svm_model):
        with pytest.raises(InvalidInputError):
            svm_distance_cv(svm_model, raw_spec)

    def test_node_out_of_range(self, net, scaled_spec):
        with pytest.raises(InvalidArgumentError):
            dnn_output_cv(net, scaled_spec, node=5)

    def test_raw_index_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            raw_coordinate_cv(2, 2)

    def test_labels(self, all_cvs):
        assert [cv.label for cv in all_cvs] == [
            "svm", "svm_decision", "lr", "lr_odds", "dnn_0", "dnn_1", "state_0", "state_1", "state_2",
        ]
