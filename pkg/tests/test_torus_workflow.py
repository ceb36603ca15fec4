import io
import json
from statistics import median

import numpy as np
import pytest
from rich.console import Console

from cvforge.bias import read_hills
from cvforge.commands import Workflow, cross_validate, simulation_cvs, train_model
from cvforge.config import WorkflowConfig, load_config
from cvforge.crossval import coefficient_sweep
from cvforge.linear import train_linear_svm
from cvforge.metad import Trajectory, read_trajectory_csv, run_metadynamics, run_unbiased
from cvforge.mlp import train_mlp
from cvforge.transitions import Basin, count_transitions
from cvforge.utils.db import RunRegistry

SEED = 2024
BETA, ALPHA_L = 0, 2
TORUS = [2 * np.pi, 2 * np.pi]


def _round_trips(traj: Trajectory, cfg: WorkflowConfig) -> int:
    """β ↔ α_L round trips; passing through α_R does not count as a core."""
    centers = cfg.system.build().basin_centers()
    basins = [Basin(centers[k], cfg.metad.core_radius) for k in (BETA, ALPHA_L)]
    return count_transitions(traj, basins, TORUS).round_trips


def _biased_round_trips(cfg: WorkflowConfig, cvs, sigma) -> int:
    potential = cfg.system.build()
    wt = cfg.metad.build(sigma, [cv.period for cv in cvs])
    lp = cfg.langevin.build(cfg.child_seed(2, 0))
    q0 = potential.basin_centers()[cfg.metad.start_basin]
    traj, _ = run_metadynamics(potential, cvs, lp, wt, cfg.metad.steps, cfg.metad.save_stride, q0)
    return _round_trips(traj, cfg)


def _report(tmp_path_factory, name: str, *overrides: str) -> tuple[WorkflowConfig, dict]:
    out = tmp_path_factory.mktemp(name)
    cfg = load_config(overrides=list(overrides), seed=SEED, out_dir=out)
    with RunRegistry(out) as registry:
        Workflow(cfg, Console(file=io.StringIO()), registry).report()
    return cfg, json.loads((out / "report" / "report.json").read_text())


@pytest.fixture(scope="module")
def separable():
    """1000 unbiased frames per well from β and α_L, as scaled sin/cos features."""
    *_, dataset, report = cross_validate(load_config(seed=SEED))
    return dataset, report


@pytest.fixture(scope="module")
def svm_run(tmp_path_factory):
    return _report(tmp_path_factory, "svm")


@pytest.fixture(scope="module")
def multiclass_run(tmp_path_factory):
    return _report(tmp_path_factory, "ovr", "classifier.trainer=multiclass", "reweight.estimator=lastbias")


class TestSeparableWells:
    """Classifiers on frames from two well-separated torsion wells"""

    def test_linear_models_are_perfect_at_every_C(self, separable):
        _, svm_report = separable
        assert len(svm_report.mean_accuracy) == 5
        assert all(a == 1.0 for a in svm_report.mean_accuracy)
        *_, logreg_report = cross_validate(load_config(overrides=["classifier.trainer=logreg"], seed=SEED))
        assert all(a == 1.0 for a in logreg_report.mean_accuracy)

    def test_l1_coefficients_sparse_and_stable(self, separable):
        dataset, _ = separable
        w = coefficient_sweep(dataset, [0.1, 1.0, 10.0], "svm", "l1")[:, :-1]
        assert np.any(w[1] == 0.0)
        for other in (w[0], w[2]):
            assert np.linalg.norm(other - w[1]) <= 0.2 * np.linalg.norm(w[1])
        assert np.all(train_linear_svm(dataset, penalty="l1", C=1e-6).w == 0.0)

    def test_default_network_learns_in_one_epoch(self, separable):
        dataset, _ = separable
        good = 0
        for seed in range(5):
            report = train_mlp(dataset, learning_rate=0.1, batch_size=32, epochs=1, seed=seed).report
            good += report.accuracy == 1.0 and report.loss < 0.1
        assert good >= 4


@pytest.mark.slow
class TestSvmMetadynamics:
    """Well-tempered runs along the SVM distance on the torus"""

    def test_round_trips_where_plain_dynamics_stays(self, svm_run):
        cfg, _ = svm_run
        traj = read_trajectory_csv(cfg.out_dir / "simulate" / "trajectory.csv")
        assert _round_trips(traj, cfg) >= 5

        potential = cfg.system.build()
        lp = cfg.langevin.build(cfg.child_seed(2, 0))
        q0 = potential.basin_centers()[cfg.metad.start_basin]
        plain = run_unbiased(potential, lp, cfg.metad.steps, cfg.metad.save_stride, q0)
        assert _round_trips(plain, cfg) <= 1

    def test_late_hills_are_small(self, svm_run):
        cfg, _ = svm_run
        bias, gamma = read_hills(cfg.out_dir / "simulate" / "HILLS")
        assert gamma == cfg.metad.gamma
        tail = bias.heights[-(len(bias) // 10) :]
        assert tail.mean() < 0.2 * cfg.metad.w0

    def test_reweighted_surface_matches_reference(self, svm_run):
        _, summary = svm_run
        assert summary["fes"]["estimator"] == "tiwary"
        assert summary["fes"]["fes_rms"] <= 1.0

    def test_export_reproduces_the_cv(self, svm_run):
        _, summary = svm_run
        assert summary["round_trip_error"] <= 1e-9


@pytest.mark.slow
class TestMulticlassMetadynamics:
    """Three one-vs-rest distances biased together"""

    def test_every_core_is_revisited(self, multiclass_run):
        _, summary = multiclass_run
        assert all(v >= 3 for v in summary["transitions"]["visits"])
        assert len(summary["transitions"]["visits"]) == 3

    def test_final_bias_reweighting(self, multiclass_run):
        _, summary = multiclass_run
        assert summary["fes"]["estimator"] == "lastbias"
        assert summary["fes"]["fes_rms"] <= 1.0


@pytest.mark.slow
class TestCvQuality:
    """Round trips along φ, the SVM distance and ψ under one budget"""

    def test_ordering_over_seeds(self):
        phi, svm, psi = [], [], []
        for seed in range(5):
            cfg = load_config(seed=seed)
            outcome = train_model(cfg)
            svm.append(_biased_round_trips(cfg, outcome.bundle.collective_variables(), outcome.bundle.metad.sigma))
            for index, counts in ((0, phi), (1, psi)):
                raw = load_config(overrides=["cv.kind=raw", f"cv.index={index}"], seed=seed)
                cvs, sigma = simulation_cvs(raw, raw.system.build())
                counts.append(_biased_round_trips(raw, cvs, sigma))
        assert median(phi) >= median(svm) >= 3 * median(psi)
