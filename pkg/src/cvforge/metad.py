"""Single-walker well-tempered metadynamics and plain Langevin runs."""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from cvforge.bias import BiasPotential, WellTemperedParams, deposit_hill
from cvforge.cvs import CollectiveVariable, cv_gradient
from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.langevin import LangevinParams, LangevinState, baoab_step, initial_state
from cvforge.potentials import ToyPotential
from cvforge.utils.io import atomic_write_text, format_real

MAX_CV_DIMS = 3


@dataclass(frozen=True, eq=False)
class Trajectory:
    steps: np.ndarray
    frames: np.ndarray
    cv_series: np.ndarray
    bias_at_frame: np.ndarray

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_cvs(self) -> int:
        return self.cv_series.shape[1]


class Walker:
    """One Langevin trajectory, optionally biased along ``cvs``.

    ``bias`` is the walker's view of the hill list; hills it deposits are also
    kept in ``new_hills`` until the owner merges them elsewhere.
    """

    def __init__(
        self,
        potential: ToyPotential,
        cvs: Sequence[CollectiveVariable],
        lp: LangevinParams,
        wt: WellTemperedParams | None,
        q0,
        bias: BiasPotential | None = None,
        walker_id: int = 0,
    ):
        q0 = np.asarray(q0, dtype=float)
        if q0.shape != (potential.n_coords,):
            raise InvalidInputError(
                f"Initial coordinates have shape {q0.shape}, potential needs ({potential.n_coords},)"
            )
        if len(cvs) > MAX_CV_DIMS:
            raise InvalidArgumentError(
                f"At most {MAX_CV_DIMS} CVs can be biased together, got {len(cvs)}"
            )
        if cvs and wt is None:
            raise InvalidArgumentError("Biased walkers need well-tempered parameters")
        if cvs and wt.dims != len(cvs):
            raise InvalidArgumentError(f"{wt.dims} hill widths for {len(cvs)} CVs")
        for cv in cvs:
            if cv.coordinate_count != potential.n_coords:
                raise InvalidInputError(
                    f"CV `{cv.label}` reads {cv.coordinate_count} coordinates, "
                    f"potential has {potential.n_coords}"
                )
        self.potential = potential
        self.cvs = tuple(cvs)
        self.lp = lp
        self.wt = wt
        self.walker_id = walker_id
        if cvs and bias is None:
            bias = BiasPotential(len(cvs), wt.periods or [cv.period for cv in cvs])
        self.bias = bias
        self.new_hills = BiasPotential(len(cvs), bias.periods) if cvs else None
        self.step = 0
        self._periodic = np.asarray(potential.periodic)
        self._rng = np.random.default_rng(lp.seed)
        self._s = np.zeros(len(cvs))
        self._v_bias = 0.0
        self.state = initial_state(q0, self._force, lp, self._rng)
        self._steps: list[int] = []
        self._frames: list[np.ndarray] = []
        self._cvs: list[np.ndarray] = []
        self._bias: list[float] = []
        self._record()

    def _force(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        energy, grad = self.potential.energy_and_gradient(q)
        force = -grad
        if not self.cvs:
            return energy, force
        values = [cv_gradient(cv, q) for cv in self.cvs]
        self._s = np.array([v.value for v in values])
        self._v_bias, dV = self.bias.evaluate(self._s)
        for d, v in enumerate(values):
            force = force - dV[d] * v.gradient
        return energy + self._v_bias, force

    def _record(self):
        self._steps.append(self.step)
        self._frames.append(self.state.q.copy())
        self._cvs.append(self._s.copy())
        self._bias.append(self._v_bias)

    def advance(self, n_steps: int, save_stride: int):
        for _ in range(n_steps):
            self.step += 1
            self.state = baoab_step(
                self.state, self._force, self.lp, self._rng, self.step, self._periodic
            )
            if self.cvs and self.step % self.wt.deposit_stride == 0:
                hill = deposit_hill(self.bias, self._s, self.wt, self.lp.temperature, self.step)
                self.new_hills.append(hill.center, hill.height, hill.widths, hill.step)
                energy, force = self._force(self.state.q)
                self.state = replace(self.state, energy=energy, force=force)
            if self.step % save_stride == 0:
                self._record()

    def bias_at(self, q) -> float:
        """V of this walker's bias at the CV point of arbitrary coordinates."""
        if not self.cvs:
            return 0.0
        s = np.array([cv_gradient(cv, q).value for cv in self.cvs])
        return self.bias.evaluate(s)[0]

    def set_phase(self, q, v):
        q = np.array(q, dtype=float)
        energy, force = self._force(q)
        self.state = LangevinState(q, np.array(v, dtype=float), force, energy)

    def adopt(self, bias: BiasPotential):
        """Replace the view with a fresh snapshot of the shared hill list."""
        self.bias = bias
        self.new_hills = BiasPotential(bias.dims, bias.periods)
        energy, force = self._force(self.state.q)
        self.state = replace(self.state, energy=energy, force=force)

    def trajectory(self) -> Trajectory:
        return Trajectory(
            np.array(self._steps, dtype=np.int64),
            np.array(self._frames),
            np.array(self._cvs).reshape(len(self._steps), len(self.cvs)),
            np.array(self._bias),
        )


def _check_run(steps: int, save_stride: int):
    if steps < 0:
        raise InvalidArgumentError(f"steps must be non-negative, got {steps}")
    if save_stride < 1:
        raise InvalidArgumentError(f"save_stride must be ≥ 1, got {save_stride}")


def run_metadynamics(
    p: ToyPotential,
    cvs: Sequence[CollectiveVariable],
    lp: LangevinParams,
    wt: WellTemperedParams,
    steps: int,
    save_stride: int,
    q0,
    grid_range: tuple[float, float] | None = None,
) -> tuple[Trajectory, BiasPotential]:
    if not 1 <= len(cvs) <= MAX_CV_DIMS:
        raise InvalidArgumentError(
            f"Metadynamics biases 1 to {MAX_CV_DIMS} CVs, got {len(cvs)}"
        )
    _check_run(steps, save_stride)
    walker = Walker(p, cvs, lp, wt, q0)
    if grid_range is not None:
        walker.bias.enable_grid(grid_range[0], grid_range[1], wt.sigma[0])
    logger.info(
        "metadynamics: {} steps along {} (w0={}, gamma={}, stride={})",
        steps, [cv.label for cv in cvs], wt.w0, wt.gamma, wt.deposit_stride,
    )
    walker.advance(steps, save_stride)
    bias = walker.bias
    last = float(bias.heights[-1]) if len(bias) else 0.0
    logger.info("metadynamics done: {} hills, last height {:.4g}", len(bias), last)
    return walker.trajectory(), bias


def run_unbiased(p: ToyPotential, lp: LangevinParams, steps: int, save_stride: int, q0) -> Trajectory:
    _check_run(steps, save_stride)
    walker = Walker(p, (), lp, None, q0)
    walker.advance(steps, save_stride)
    traj = walker.trajectory()
    logger.debug("unbiased run: {} steps, {} frames", steps, len(traj))
    return traj


def trajectory_header(n_coords: int, n_cvs: int) -> list[str]:
    return (
        ["step"]
        + [f"q_{k + 1}" for k in range(n_coords)]
        + [f"cv_{k + 1}" for k in range(n_cvs)]
        + ["bias_energy"]
    )


def write_trajectory_csv(path: Path, traj: Trajectory):
    lines = [",".join(trajectory_header(traj.frames.shape[1], traj.n_cvs))]
    for k in range(len(traj)):
        cells = [str(int(traj.steps[k]))]
        cells += [format_real(v) for v in traj.frames[k]]
        cells += [format_real(v) for v in traj.cv_series[k]]
        cells.append(format_real(traj.bias_at_frame[k]))
        lines.append(",".join(cells))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_trajectory_csv(path: Path) -> Trajectory:
    with open(path, newline="", encoding="ascii") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty trajectory file") from None
        rows = [row for row in reader if row]
    if not header or header[0] != "step" or header[-1] != "bias_energy":
        raise InvalidInputError(f"{path}: not a trajectory file (header {header})")
    n_coords = sum(1 for h in header if h.startswith("q_"))
    n_cvs = sum(1 for h in header if h.startswith("cv_"))
    try:
        data = np.array([[float(c) for c in row[1:]] for row in rows]).reshape(len(rows), -1)
        steps = np.array([int(row[0]) for row in rows], dtype=np.int64)
    except ValueError as e:
        raise InvalidInputError(f"{path}: {e}") from e
    if data.shape[1] != n_coords + n_cvs + 1:
        raise InvalidInputError(f"{path}: rows do not match the header")
    return Trajectory(
        steps,
        data[:, :n_coords],
        data[:, n_coords : n_coords + n_cvs],
        data[:, -1],
    )
