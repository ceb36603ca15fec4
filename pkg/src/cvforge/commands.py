import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Callable, Iterator, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from rich.console import Console, Group, RenderableType
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from cvforge.bias import WellTemperedParams, read_hills, write_hills
from cvforge.config import WorkflowConfig
from cvforge.crossval import CrossValReport, coefficient_sweep, kfold_cross_validate
from cvforge.cvs import CollectiveVariable, cv_values, raw_coordinate_cv
from cvforge.datasets import LabeledDataset, write_feature_csv
from cvforge.errors import ConfigError, InvalidInputError, UnsupportedExportError
from cvforge.features import apply_scaler, featurize, fit_scaler, wrap_angle
from cvforge.linear import LinearModel
from cvforge.metad import (
    Trajectory,
    read_trajectory_csv,
    run_metadynamics,
    run_unbiased,
    write_trajectory_csv,
)
from cvforge.plumed import emit_plumed, parse_custom_lines, round_trip_error
from cvforge.potentials import ToyPotential
from cvforge.reweight import (
    build_fes,
    default_grid,
    fes_error,
    lastbias_weights,
    reference_fes,
    tiwary_weights,
    uniform_edges,
    write_fes_csv,
)
from cvforge.store import MetadHints, ModelBundle, load_model, save_model
from cvforge.transitions import Basin, count_transitions
from cvforge.utils.db import RunRegistry, StageRecord
from cvforge.utils.io import atomic_write_text, staged_output
from cvforge.walkers import multiwalker_run

CommandHandler = Callable[..., RenderableType]
CommandCategory = Literal["Model", "Sampling", "Analysis"]

SIGMA_FRACTION = 0.2
CV_KIND_FOR_TRAINER = {
    "svm": "svm_distance",
    "logreg": "lr_probability",
    "multiclass": "multiclass_distance",
    "mlp": "dnn_output",
}


@dataclass
class CommandInfo:
    handler: CommandHandler
    description: str
    category: CommandCategory


_command_registry: dict[str, CommandInfo] = {}


def command(name: str, description: str, category: CommandCategory):
    def decorator(func: CommandHandler):
        _command_registry[name] = CommandInfo(handler=func, description=description, category=category)
        return func

    return decorator


def registered_commands() -> dict[str, CommandInfo]:
    return dict(_command_registry)


def tool_version() -> str:
    try:
        return version("cvforge")
    except PackageNotFoundError:
        return "0.0.0+local"


class RunManifest(BaseModel):
    tool_version: str
    config_hash: str
    outputs: dict[str, list[str]] = Field(default_factory=dict)
    metrics: dict[str, Any] = Field(default_factory=dict)


def write_json(path: Path, payload: Any):
    atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass
class TrainingData:
    frames: np.ndarray
    labels: np.ndarray
    basins: list[int]


@dataclass
class TrainOutcome:
    bundle: ModelBundle
    report: CrossValReport
    data: TrainingData
    raw_features: np.ndarray
    coefficients: np.ndarray | None
    coefficient_labels: list[str]


def default_basins(cfg: WorkflowConfig, potential: ToyPotential) -> list[int]:
    if cfg.data.basins is not None:
        return cfg.data.basins
    n = len(potential.basin_centers())
    if cfg.classifier.trainer == "multiclass":
        return list(range(n))
    # β and α_L analogs on the torus
    return [0, 2] if cfg.system.kind == "rama_torus_2d" and n >= 3 else list(range(min(n, 2)))


def generate_training_frames(cfg: WorkflowConfig, potential: ToyPotential) -> TrainingData:
    """Unbiased runs started at each selected basin; label = position in the list."""
    centers = potential.basin_centers()
    basins = default_basins(cfg, potential)
    bad = [b for b in basins if not 0 <= b < len(centers)]
    if bad or len(basins) < 2:
        raise ConfigError([("data.basins", f"need ≥ 2 basin indices in [0, {len(centers)}), got {basins}")])
    frames, labels = [], []
    for label, basin in enumerate(basins):
        lp = cfg.langevin.build(cfg.child_seed(1, basin))
        steps = cfg.data.frames_per_basin * cfg.data.save_stride
        traj = run_unbiased(potential, lp, steps, cfg.data.save_stride, centers[basin])
        frames.append(traj.frames[1:])
        labels.append(np.full(len(traj) - 1, label))
    return TrainingData(np.concatenate(frames), np.concatenate(labels), basins)


def _dataset(cfg: WorkflowConfig, potential: ToyPotential, data: TrainingData):
    spec = cfg.features.build(potential.n_coords)
    raw = featurize(spec, data.frames)
    if cfg.features.scale:
        spec = spec.with_scaler(fit_scaler(raw, spec.labels))
        X = apply_scaler(spec.scaler, raw)
    else:
        X = raw
    return spec, raw, LabeledDataset(X, data.labels, tuple(spec.labels))


def cross_validate(cfg: WorkflowConfig):
    potential = cfg.system.build()
    data = generate_training_frames(cfg, potential)
    spec, raw, dataset = _dataset(cfg, potential, data)
    report = kfold_cross_validate(
        dataset, cfg.classifier.k_folds, cfg.classifier.grid(), cfg.classifier.trainer, cfg.seed
    )
    return potential, data, spec, raw, dataset, report


def train_model(cfg: WorkflowConfig) -> TrainOutcome:
    potential, data, spec, raw, dataset, report = cross_validate(cfg)
    kind = CV_KIND_FOR_TRAINER[cfg.classifier.trainer]
    if kind == "lr_probability" and cfg.cv.lr_form == "odds":
        kind = "lr_odds"
    bundle = ModelBundle(report.model, spec, kind, cfg.cv.normalized, cfg.cv.node)
    cvs = bundle.collective_variables()
    values = cv_values(cvs, data.frames)
    sigma = [SIGMA_FRACTION * float(np.std(values[:, k])) for k in range(len(cvs))]
    hints = MetadHints(
        w0=cfg.metad.w0,
        sigma=sigma,
        gamma=cfg.metad.gamma,
        deposit_stride=cfg.metad.deposit_stride,
        temperature=cfg.langevin.temperature,
    )
    bundle = ModelBundle(report.model, spec, kind, cfg.cv.normalized, cfg.cv.node, hints)

    coefficients = None
    labels = spec.labels + ["b"]
    if isinstance(report.model, LinearModel):
        # every C on the full data, then again with rows dropped
        C = np.array(cfg.classifier.C_grid)[:, None]
        full = coefficient_sweep(
            dataset, cfg.classifier.C_grid, cfg.classifier.trainer, cfg.classifier.penalty
        )
        dropped = coefficient_sweep(
            dataset,
            cfg.classifier.C_grid,
            cfg.classifier.trainer,
            cfg.classifier.penalty,
            cfg.classifier.sweep_drop_fraction,
            cfg.seed,
        )
        coefficients = np.vstack([np.hstack([C, np.zeros_like(C), full]), np.hstack([C, np.ones_like(C), dropped])])
        labels = ["C", "dropped"] + labels
    elif cfg.classifier.trainer == "multiclass":
        coefficients = np.array([np.append(m.w, m.b) for m in report.model.submodels])
    return TrainOutcome(bundle, report, data, raw, coefficients, labels)


def _coordinate_labels(n: int) -> list[str]:
    return [f"q_{k + 1}" for k in range(n)]


def simulation_cvs(cfg: WorkflowConfig, potential: ToyPotential) -> tuple[list[CollectiveVariable], list[float]]:
    if cfg.cv.kind == "raw":
        if cfg.cv.index >= potential.n_coords:
            raise ConfigError([("cv.index", f"must be < {potential.n_coords}")])
        cv = raw_coordinate_cv(cfg.cv.index, potential.n_coords, potential.periodic[cfg.cv.index])
        if cfg.metad.sigma is not None:
            return [cv], cfg.metad.sigma
        frames = generate_training_frames(cfg, potential).frames
        return [cv], [SIGMA_FRACTION * float(np.std(cv_values([cv], frames)))]
    model_path = cfg.out_dir / "train" / "model.json"
    if not model_path.exists():
        raise InvalidInputError(f"{model_path} not found; run `cvforge train` first")
    bundle = load_model(model_path)
    cvs = bundle.collective_variables()
    if cfg.metad.sigma is not None:
        sigma = cfg.metad.sigma
    elif bundle.metad is not None:
        sigma = bundle.metad.sigma
    else:
        raise ConfigError([("metad.sigma", "required when the model carries no hill hints")])
    return cvs, list(sigma)


def _basins(cfg: WorkflowConfig, potential: ToyPotential) -> list[Basin]:
    centers = potential.basin_centers()
    return [Basin(tuple(c), cfg.metad.core_radius, str(k)) for k, c in enumerate(centers)]


@dataclass
class SimulationOutcome:
    trajectories: list[Trajectory]
    bias: Any
    cvs: list[CollectiveVariable]
    transitions: dict[str, Any]


def run_simulation(cfg: WorkflowConfig, hills_dir: Path | None = None) -> SimulationOutcome:
    potential = cfg.system.build()
    cvs, sigma = simulation_cvs(cfg, potential)
    periods = [cv.period for cv in cvs]
    wt = cfg.metad.build(sigma, periods)
    centers = potential.basin_centers()
    if cfg.metad.start_basin >= len(centers):
        raise ConfigError([("metad.start_basin", f"must be < {len(centers)}")])
    q0 = centers[cfg.metad.start_basin]
    grid_range = (-np.pi, np.pi) if cfg.metad.grid_cache and len(cvs) == 1 else None
    if grid_range is not None and periods[0] is None:
        grid_range = None
    m = cfg.metad
    if m.n_walkers == 1:
        lp = cfg.langevin.build(cfg.child_seed(2, 0))
        traj, bias = run_metadynamics(potential, cvs, lp, wt, m.steps, m.save_stride, q0, grid_range)
        trajectories = [traj]
    else:
        lps = [cfg.langevin.build(cfg.child_seed(2, k)) for k in range(m.n_walkers)]
        trajectories, bias = multiwalker_run(
            potential,
            cvs,
            lps,
            wt,
            m.steps,
            m.n_walkers,
            m.read_stride,
            q0,
            save_stride=m.save_stride,
            mode=m.mode,
            hills_dir=hills_dir if m.hills_files else None,
            grid_range=grid_range,
        )
    basins = _basins(cfg, potential)
    periods_q = [2.0 * np.pi if p else None for p in potential.periodic]
    counts = [count_transitions(t, basins, periods_q) for t in trajectories]
    matrix = sum(c.matrix for c in counts)
    transitions = {
        "matrix": matrix.tolist(),
        "round_trips": int(sum(c.round_trips for c in counts)),
        "visits": sum(c.visits for c in counts).tolist(),
        "first_round_trip_step": [c.first_round_trip_step for c in counts],
    }
    return SimulationOutcome(trajectories, bias, cvs, transitions)


def _concat(trajectories: list[Trajectory]) -> Trajectory:
    return Trajectory(
        np.concatenate([t.steps for t in trajectories]),
        np.concatenate([t.frames for t in trajectories]),
        np.concatenate([t.cv_series for t in trajectories]),
        np.concatenate([t.bias_at_frame for t in trajectories]),
    )


def run_reweight(cfg: WorkflowConfig, sim_dir: Path) -> tuple[Any, dict[str, Any]]:
    manifest_path = sim_dir / "manifest.json"
    if not manifest_path.exists():
        raise InvalidInputError(f"{manifest_path} not found; run `cvforge simulate` first")
    manifest = RunManifest.model_validate_json(manifest_path.read_text(encoding="ascii"))
    periods = manifest.metrics.get("cv_periods")
    files = sorted(sim_dir.glob("trajectory*.csv"))
    if not files:
        raise InvalidInputError(f"No trajectory files in {sim_dir}")
    traj = _concat([read_trajectory_csv(f) for f in files])
    if len(traj) == 0:
        raise InvalidInputError("Trajectory has no frames")
    bias, gamma = read_hills(sim_dir / "HILLS", periods)
    T = cfg.langevin.temperature
    r = cfg.reweight
    if r.estimator == "tiwary":
        wt = WellTemperedParams(
            cfg.metad.w0, tuple(bias.widths[0]), gamma, cfg.metad.deposit_stride, tuple(periods or ())
        )
        grid = None
        if r.grid_points is not None:
            grid = default_grid(traj.cv_series, wt.sigma, periods, r.grid_points)
        weights = tiwary_weights(traj, bias, wt, T, grid, r.burn_in)
    else:
        weights = lastbias_weights(traj, bias, T, r.burn_in)

    potential = cfg.system.build()
    edges = []
    for k, periodic in enumerate(potential.periodic):
        if periodic:
            edges.append(uniform_edges(-np.pi, np.pi, r.bins))
        else:
            column = traj.frames[:, k]
            pad = 1e-9 * max(1.0, np.ptp(column))
            edges.append(uniform_edges(column.min() - pad, column.max() + pad, r.bins))
    frames = np.where(np.asarray(potential.periodic), wrap_angle(traj.frames), traj.frames)
    fes = build_fes(frames, weights, edges, T)
    reference = reference_fes(potential, list(range(potential.n_coords)), fes.centers, T)
    err = fes_error(fes, reference, r.cutoff)
    report = {
        "estimator": r.estimator,
        "frames": int(len(traj)),
        "frames_used": int(np.count_nonzero(weights)),
        "fes_rms": err.rms,
        "fes_max": err.max,
        "fes_bins": err.n_bins,
        "cutoff": r.cutoff,
    }
    return fes, report


class Workflow:
    """Pipeline stages, each committing its outputs under ``out_dir/<stage>``."""

    def __init__(self, config: WorkflowConfig, console: Console, registry: RunRegistry):
        self._config = config
        self._console = console
        self._registry = registry

    @property
    def out_dir(self) -> Path:
        return self._config.out_dir

    @contextmanager
    def _stage(self, name: str) -> Iterator[Path]:
        start = time.perf_counter()
        target = self.out_dir / name
        with staged_output(target) as scratch:
            yield scratch
        elapsed = time.perf_counter() - start
        outputs = sorted(str(p.relative_to(self.out_dir)) for p in target.rglob("*") if p.is_file())
        self._registry.record(
            StageRecord(
                stage=name,
                config_hash=self._config.config_hash(),
                outputs=outputs,
                wall_clock_s=elapsed,
            )
        )
        logger.info("stage {} committed {} files in {:.1f}s", name, len(outputs), elapsed)

    @command("train", "Sample basins, train and cross-validate a classifier", "Model")
    def train(self) -> RenderableType:
        cfg = self._config
        outcome = train_model(cfg)
        n_coords = outcome.data.frames.shape[1]
        with self._stage("train") as out:
            write_feature_csv(
                out / "frames.csv", outcome.data.frames, _coordinate_labels(n_coords), outcome.data.labels
            )
            write_feature_csv(
                out / "features.csv", outcome.raw_features, outcome.bundle.spec.labels, outcome.data.labels
            )
            save_model(outcome.bundle, out / "model.json")
            write_json(out / "crossval.json", outcome.report.model_dump(mode="json"))
            if outcome.coefficients is not None:
                write_feature_csv(out / "coefficients.csv", outcome.coefficients, outcome.coefficient_labels)
        return _crossval_table(outcome.report)

    @command("cv", "Cross-validate the hyperparameter grid", "Model")
    def cv(self) -> RenderableType:
        *_, report = cross_validate(self._config)
        with self._stage("cv") as out:
            write_json(out / "crossval.json", report.model_dump(mode="json"))
        return _crossval_table(report)

    @command("simulate", "Run well-tempered metadynamics along the CV", "Sampling")
    def simulate(self) -> RenderableType:
        cfg = self._config
        with self._stage("simulate") as out:
            outcome = run_simulation(cfg, out / "hills")
            if len(outcome.trajectories) == 1:
                write_trajectory_csv(out / "trajectory.csv", outcome.trajectories[0])
            else:
                for k, traj in enumerate(outcome.trajectories):
                    write_trajectory_csv(out / f"trajectory.{k}.csv", traj)
            write_hills(out / "HILLS", outcome.bias, cfg.metad.gamma)
            manifest = RunManifest(
                tool_version=tool_version(),
                config_hash=cfg.config_hash(),
                outputs={"simulate": sorted(p.name for p in out.iterdir() if p.is_file()) + ["manifest.json"]},
                metrics={
                    "transitions": outcome.transitions,
                    "hills": len(outcome.bias),
                    "cv_labels": [cv.label for cv in outcome.cvs],
                    "cv_periods": [cv.period for cv in outcome.cvs],
                },
            )
            write_json(out / "manifest.json", manifest.model_dump(mode="json"))
        return _transitions_panel(outcome.transitions)

    @command("reweight", "Reweight the biased run into a free-energy surface", "Analysis")
    def reweight(self) -> RenderableType:
        fes, report = run_reweight(self._config, self.out_dir / "simulate")
        with self._stage("reweight") as out:
            write_fes_csv(out / "fes.csv", fes, _coordinate_labels(len(fes.edges)))
            write_json(out / "report.json", report)
        return _fes_panel(report)

    @command("export", "Write the PLUMED CUSTOM/METAD block for the model", "Model")
    def export(self) -> RenderableType:
        cfg = self._config.export
        model_path = cfg.model if cfg.model is not None else self.out_dir / "train" / "model.json"
        bundle = load_model(model_path)
        text = emit_plumed(bundle, cfg.labels)
        error = round_trip_error(bundle, seed=self._config.seed, feature_labels=cfg.labels)
        summary = {
            "model": str(model_path),
            "custom_lines": len(parse_custom_lines(text)),
            "round_trip_error": error,
        }
        with self._stage("export") as out:
            atomic_write_text(out / "plumed.dat", text)
            write_json(out / "export.json", summary)
        return Panel.fit(
            Text(f"{summary['custom_lines']} CUSTOM line(s)\nround-trip max error: {error:.3g}"),
            title="export",
        )

    @command("report", "Run train → simulate → reweight → export and collect metrics", "Analysis")
    def report(self) -> RenderableType:
        train_view = self.train()
        sim_view = self.simulate()
        fes_view = self.reweight()
        try:
            export_view = self.export()
            exported = json.loads((self.out_dir / "export" / "export.json").read_text())
        except UnsupportedExportError as e:
            logger.warning("report continues without export: {}", e)
            export_view = Panel.fit(Text(str(e)), title="export skipped", border_style="yellow")
            exported = {"round_trip_error": None}
        crossval = json.loads((self.out_dir / "train" / "crossval.json").read_text())
        manifest = json.loads((self.out_dir / "simulate" / "manifest.json").read_text())
        fes = json.loads((self.out_dir / "reweight" / "report.json").read_text())
        summary = {
            "config_hash": self._config.config_hash(),
            "tool_version": tool_version(),
            "accuracy": crossval["mean_accuracy"][crossval["best_index"]],
            "best_setting": crossval["best_setting"],
            "transitions": manifest["metrics"]["transitions"],
            "fes": fes,
            "round_trip_error": exported["round_trip_error"],
        }
        with self._stage("report") as out:
            write_json(out / "report.json", summary)
        return Group(train_view, sim_view, fes_view, export_view)

    def execute(self, name: str) -> RenderableType:
        if name not in _command_registry:
            raise InvalidInputError(f"Unknown command `{name}`")
        return _command_registry[name].handler(self)


def _crossval_table(report: CrossValReport) -> Table:
    table = Table(title=f"{report.trainer}: {report.k}-fold cross-validation")
    table.add_column("setting")
    table.add_column("accuracy", justify="right")
    table.add_column("± std", justify="right")
    for k, setting in enumerate(report.grid):
        shown = {key: v for key, v in setting.items() if v is not None and key not in ("tol", "max_iter")}
        style = "green" if k == report.best_index else None
        table.add_row(
            ", ".join(f"{key}={v}" for key, v in shown.items()),
            f"{report.mean_accuracy[k]:.4f}",
            f"{report.std_accuracy[k]:.4f}",
            style=style,
        )
    return table


def _transitions_panel(transitions: dict[str, Any]) -> Panel:
    lines = [
        f"round trips: {transitions['round_trips']}",
        f"basin visits: {transitions['visits']}",
        f"transition matrix: {transitions['matrix']}",
    ]
    return Panel.fit(Text("\n".join(lines)), title="simulate")


def _fes_panel(report: dict[str, Any]) -> Panel:
    text = (
        f"estimator: {report['estimator']}\n"
        f"FES error vs reference (F < {report['cutoff']:g} T): "
        f"rms {report['fes_rms']:.3f} T, max {report['fes_max']:.3f} T over {report['fes_bins']} bins"
    )
    return Panel.fit(Text(text), title="reweight")
