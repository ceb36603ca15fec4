import numpy as np
import pytest

from cvforge.crossval import (
    coefficient_sweep,
    holdout_evaluate,
    kfold_cross_validate,
    train,
)
from cvforge.datasets import bayes_accuracy
from cvforge.errors import InvalidArgumentError
from cvforge.linear import LinearModel, MulticlassLinearModel
from cvforge.mlp import MLPModel


def _grid(*Cs):
    return [{"C": C, "penalty": "l1"} for C in Cs]


class TestKFold:
    """Stratified k-fold selection over a hyperparameter grid"""

    def test_report_shape(self, noisy_pair):
        report = kfold_cross_validate(noisy_pair, 3, _grid(0.01, 1.0), seed=4)
        assert len(report.fold_accuracies) == 2
        assert all(len(scores) == 3 for scores in report.fold_accuracies)
        assert report.mean_accuracy[report.best_index] == max(report.mean_accuracy)
        assert report.mean_accuracy[report.best_index] == pytest.approx(bayes_accuracy(2.0), abs=0.03)
        assert isinstance(report.model, LinearModel)

    def test_ties_prefer_smaller_C(self, two_blobs):
        report = kfold_cross_validate(two_blobs, 3, _grid(10.0, 1.0), seed=0)
        assert report.mean_accuracy == [1.0, 1.0]
        assert report.best_index == 1
        assert report.best_setting["C"] == 1.0

    def test_same_seed_same_report(self, noisy_pair):
        a = kfold_cross_validate(noisy_pair, 4, _grid(0.1), seed=11)
        b = kfold_cross_validate(noisy_pair, 4, _grid(0.1), seed=11)
        assert a.model_dump() == b.model_dump()
        np.testing.assert_array_equal(a.model.w, b.model.w)

    def test_dump_excludes_model(self, two_blobs):
        report = kfold_cross_validate(two_blobs, 3, _grid(1.0))
        assert "model" not in report.model_dump()

    @pytest.mark.parametrize("k", [2, 11])
    def test_k_out_of_range(self, two_blobs, k):
        with pytest.raises(InvalidArgumentError):
            kfold_cross_validate(two_blobs, k, _grid(1.0))

    def test_k_larger_than_class(self, two_blobs):
        small = two_blobs.subset(np.r_[0:4, 200:210])
        with pytest.raises(InvalidArgumentError):
            kfold_cross_validate(small, 5, _grid(1.0))

    def test_empty_grid(self, two_blobs):
        with pytest.raises(InvalidArgumentError):
            kfold_cross_validate(two_blobs, 3, [])

    def test_multiclass_and_network_trainers(self, three_blobs):
        report = kfold_cross_validate(three_blobs, 3, _grid(1.0), trainer="multiclass")
        assert isinstance(report.model, MulticlassLinearModel)
        grid = [{"learning_rate": 0.05, "layer_widths": [2, 8, 3], "epochs": 20}]
        report = kfold_cross_validate(three_blobs, 3, grid, trainer="mlp", seed=2)
        assert isinstance(report.model, MLPModel)
        assert report.mean_accuracy[0] > 0.9


class TestTrainingHelpers:
    """Single-split training and coefficient sweeps"""

    def test_unknown_trainer(self, two_blobs):
        with pytest.raises(InvalidArgumentError):
            train("forest", two_blobs, {}, 0)

    def test_holdout(self, noisy_pair):
        model, acc = holdout_evaluate(noisy_pair, "logreg", {"C": 1.0}, seed=5)
        assert model.loss == "logistic"
        assert acc == pytest.approx(bayes_accuracy(2.0), abs=0.04)

    def test_sweep_rows(self, noisy_pair):
        rows = coefficient_sweep(noisy_pair, [0.01, 0.1, 1.0])
        assert rows.shape == (3, 6)
        assert abs(rows[0, 0]) <= abs(rows[2, 0])

    def test_sweep_drop_is_stable(self, noisy_pair):
        full = coefficient_sweep(noisy_pair, [1.0])
        dropped = coefficient_sweep(noisy_pair, [1.0], drop_fraction=0.2, seed=1)
        assert not np.array_equal(full, dropped)
        assert dropped[0, 0] == pytest.approx(full[0, 0], rel=0.2)

    def test_sweep_rejects_drop_fraction(self, noisy_pair):
        with pytest.raises(InvalidArgumentError):
            coefficient_sweep(noisy_pair, [1.0], drop_fraction=1.0)
