"""Frame weights from biased runs and free-energy surfaces."""

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from cvforge.bias import BiasPotential, WellTemperedParams
from cvforge.errors import (
    GridCoverageError,
    InvalidArgumentError,
    InvalidInputError,
    ResolutionError,
)
from cvforge.metad import Trajectory
from cvforge.potentials import ToyPotential
from cvforge.utils.io import atomic_write_text, format_real

GRID_POINTS = {1: 400, 2: 100, 3: 30}
GRID_MARGIN_SIGMAS = 3.0
RICHARDSON_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class CVGrid:
    """Tensor grid over CV space; periodic axes omit the duplicate endpoint."""

    axes: tuple[np.ndarray, ...]
    periods: tuple[float | None, ...]

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def check_covers(self, cv_series: np.ndarray, sigma: Sequence[float]):
        for d, (axis, period) in enumerate(zip(self.axes, self.periods)):
            if period:
                continue
            margin = GRID_MARGIN_SIGMAS * sigma[d] * (1.0 - 1e-9)
            lo, hi = cv_series[:, d].min() - margin, cv_series[:, d].max() + margin
            if lo < axis[0] or hi > axis[-1]:
                raise GridCoverageError(
                    f"CV {d + 1}: visited range ± {GRID_MARGIN_SIGMAS:g}σ is [{lo:.6g}, {hi:.6g}], "
                    f"grid spans [{axis[0]:.6g}, {axis[-1]:.6g}]"
                )


def default_grid(
    cv_series: np.ndarray,
    sigma: Sequence[float],
    periods: Sequence[float | None] | None = None,
    points: int | None = None,
) -> CVGrid:
    """Visited range ± 3σ per dimension; one full period for periodic CVs."""
    cv_series = np.atleast_2d(cv_series)
    dims = cv_series.shape[1]
    periods = tuple(periods) if periods is not None else (None,) * dims
    n = points or GRID_POINTS[dims]
    axes = []
    for d in range(dims):
        if periods[d]:
            half = 0.5 * periods[d]
            axes.append(np.linspace(-half, half, n, endpoint=False))
        else:
            margin = GRID_MARGIN_SIGMAS * sigma[d]
            axes.append(np.linspace(cv_series[:, d].min() - margin, cv_series[:, d].max() + margin, n))
    return CVGrid(tuple(axes), periods)


@dataclass(frozen=True, eq=False)
class ReweightState:
    epoch_steps: np.ndarray
    c_series: np.ndarray
    beta: float
    grid: CVGrid

    def offset_at(self, steps: np.ndarray) -> np.ndarray:
        """c at the latest epoch not after each step; 0 before the first."""
        idx = np.searchsorted(self.epoch_steps, steps, side="right") - 1
        return np.where(idx >= 0, self.c_series[np.maximum(idx, 0)], 0.0)


def _normalize(log_w: np.ndarray, keep: np.ndarray) -> np.ndarray:
    w = np.zeros_like(log_w)
    shifted = log_w[keep] - np.max(log_w[keep])
    w[keep] = np.exp(shifted)
    return w / np.sum(w)


def _keep_mask(n: int, burn_in: float) -> np.ndarray:
    if not 0.0 <= burn_in < 1.0:
        raise InvalidArgumentError(f"burn_in must lie in [0, 1), got {burn_in}")
    if n == 0:
        raise InvalidInputError("Trajectory has no frames")
    keep = np.zeros(n, dtype=bool)
    keep[int(np.floor(burn_in * n)) :] = True
    return keep


def tiwary_offsets(
    bias: BiasPotential,
    wt: WellTemperedParams,
    temperature: float,
    grid: CVGrid,
) -> ReweightState:
    """c(t) at every hill-deposit epoch, accumulating V on the grid."""
    beta = 1.0 / temperature
    steps = bias.steps
    if np.any(np.diff(steps) < 0):
        raise InvalidInputError("Hill steps must be non-decreasing")
    if np.isinf(wt.gamma):
        a, b = 1.0, 0.0
    else:
        a, b = wt.gamma / (wt.gamma - 1.0), 1.0 / (wt.gamma - 1.0)
    points = grid.points
    V = np.zeros(points.shape[0])
    epochs, offsets = [], []
    boundaries = np.flatnonzero(np.diff(steps)) + 1
    starts = np.concatenate([[0], boundaries]) if len(steps) else np.zeros(0, dtype=int)
    stops = np.concatenate([boundaries, [len(steps)]]) if len(steps) else np.zeros(0, dtype=int)
    for start, stop in zip(starts, stops):
        V += bias.evaluate_many(points, int(start), int(stop))
        c = (logsumexp(beta * a * V) - logsumexp(beta * b * V)) / beta
        epochs.append(int(steps[start]))
        offsets.append(float(c))
    return ReweightState(np.array(epochs, dtype=np.int64), np.array(offsets), beta, grid)


def tiwary_weights(
    traj: Trajectory,
    bias: BiasPotential,
    wt: WellTemperedParams,
    temperature: float,
    grid: CVGrid | None = None,
    burn_in: float = 0.0,
) -> np.ndarray:
    keep = _keep_mask(len(traj), burn_in)
    if traj.n_cvs != bias.dims:
        raise InvalidInputError(f"Trajectory has {traj.n_cvs} CVs, bias has {bias.dims}")
    if grid is None:
        grid = default_grid(traj.cv_series, wt.sigma, bias.periods)
    grid.check_covers(traj.cv_series, wt.sigma)
    state = tiwary_offsets(bias, wt, temperature, grid)
    log_w = state.beta * (traj.bias_at_frame - state.offset_at(traj.steps))
    logger.debug("tiwary weights: {} epochs, final c = {:.4g}", len(state.c_series),
                 state.c_series[-1] if len(state.c_series) else 0.0)
    return _normalize(log_w, keep)


def lastbias_weights(
    traj: Trajectory,
    bias: BiasPotential,
    temperature: float,
    burn_in: float = 0.0,
) -> np.ndarray:
    keep = _keep_mask(len(traj), burn_in)
    if traj.n_cvs != bias.dims:
        raise InvalidInputError(f"Trajectory has {traj.n_cvs} CVs, bias has {bias.dims}")
    V_final = bias.evaluate_many(traj.cv_series)
    return _normalize(V_final / temperature, keep)


@dataclass(frozen=True, eq=False)
class WeightedHistogram:
    edges: tuple[np.ndarray, ...]
    sums: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> float:
        return float(self.sums.sum())


@dataclass(frozen=True, eq=False)
class FreeEnergySurface:
    histogram: WeightedHistogram
    values: np.ndarray
    temperature: float

    @property
    def edges(self) -> tuple[np.ndarray, ...]:
        return self.histogram.edges

    @property
    def centers(self) -> tuple[np.ndarray, ...]:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)


def uniform_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if n_bins < 1 or not hi > lo:
        raise InvalidArgumentError(f"Cannot bin [{lo}, {hi}] into {n_bins} bins")
    return np.linspace(lo, hi, n_bins + 1)


def build_fes(
    samples: Trajectory | np.ndarray,
    weights: np.ndarray,
    edges: Sequence[np.ndarray],
    temperature: float,
) -> FreeEnergySurface:
    points = samples.cv_series if isinstance(samples, Trajectory) else np.asarray(samples, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (points.shape[0],):
        raise InvalidInputError(f"{weights.shape[0]} weights for {points.shape[0]} samples")
    if np.any(weights < 0):
        raise InvalidInputError("Weights must be non-negative")
    edges = tuple(np.asarray(e, dtype=float) for e in edges)
    if len(edges) != points.shape[1]:
        raise InvalidInputError(f"{len(edges)} bin axes for {points.shape[1]}-dimensional samples")
    used = weights > 0
    for d, e in enumerate(edges):
        column = points[used, d]
        if column.size and (column.min() < e[0] or column.max() > e[-1]):
            raise InvalidInputError(
                f"Bins on axis {d + 1} span [{e[0]:.6g}, {e[-1]:.6g}] but samples reach "
                f"[{column.min():.6g}, {column.max():.6g}]"
            )
    sums, _ = np.histogramdd(points, bins=edges, weights=weights)
    counts, _ = np.histogramdd(points[used], bins=edges)
    if not np.any(sums > 0):
        raise InvalidInputError("Histogram is empty")
    values = np.full(sums.shape, np.nan)
    occupied = sums > 0
    values[occupied] = -temperature * np.log(sums[occupied])
    values -= np.nanmin(values)
    return FreeEnergySurface(WeightedHistogram(edges, sums, counts.astype(int)), values, temperature)


def _quadrature(n: int, period: float | None, extent: float) -> tuple[np.ndarray, np.ndarray]:
    if period:
        nodes = np.linspace(-0.5 * period, 0.5 * period, n, endpoint=False)
        return nodes, np.full(n, period / n)
    nodes = np.linspace(-extent, extent, n + 1)
    w = np.full(n + 1, 2.0 * extent / n)
    w[[0, -1]] *= 0.5
    return nodes, w


def _marginal(
    p: ToyPotential,
    along: Sequence[int],
    points: np.ndarray,
    temperature: float,
    n_quad: int,
    extent: float,
) -> np.ndarray:
    ortho = [k for k in range(p.n_coords) if k not in along]
    rules = [_quadrature(n_quad, 2.0 * np.pi if p.periodic[k] else None, extent) for k in ortho]
    if rules:
        mesh = np.meshgrid(*(r[0] for r in rules), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*(r[1] for r in rules), indexing="ij")
        log_w = np.sum([np.log(m.ravel()) for m in wmesh], axis=0)
    else:
        nodes = np.zeros((1, 0))
        log_w = np.zeros(1)
    out = np.empty(points.shape[0])
    q = np.empty(p.n_coords)
    energies = np.empty(nodes.shape[0])
    for i, z in enumerate(points):
        q[list(along)] = z
        for j, node in enumerate(nodes):
            q[ortho] = node
            energies[j] = p.energy_and_gradient(q)[0]
        out[i] = -temperature * logsumexp(log_w - energies / temperature)
    return out


def reference_fes(
    p: ToyPotential,
    along: Sequence[int],
    axes: Sequence[np.ndarray],
    temperature: float,
    n_quad: int = 64,
    extent: float = 8.0,
) -> np.ndarray:
    """Marginal F along ``along`` on the tensor grid ``axes``, minimum at 0.

    Orthogonal periodic coordinates use the rectangle rule over one period,
    others the trapezoid rule on [−extent, extent]; the result must agree
    with a doubled quadrature within 1e−3 T.
    """
    along = list(along)
    if not along or len(set(along)) != len(along) or any(not 0 <= k < p.n_coords for k in along):
        raise InvalidArgumentError(f"Invalid coordinate subset {along} for {p.n_coords} coordinates")
    if len(axes) != len(along):
        raise InvalidArgumentError(f"{len(axes)} grid axes for {len(along)} coordinates")
    mesh = np.meshgrid(*(np.asarray(a, dtype=float) for a in axes), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    coarse = _marginal(p, along, points, temperature, n_quad, extent)
    coarse -= coarse.min()
    if len(along) < p.n_coords:
        fine = _marginal(p, along, points, temperature, 2 * n_quad, extent)
        fine -= fine.min()
        gap = float(np.max(np.abs(fine - coarse)))
        if gap > RICHARDSON_TOL * temperature:
            raise ResolutionError(
                f"Quadrature with {n_quad} and {2 * n_quad} points differs by {gap:.3g} T"
            )
        coarse = fine
    return coarse.reshape(mesh[0].shape)


@dataclass(frozen=True)
class FESError:
    rms: float
    max: float
    n_bins: int


def fes_error(fes: FreeEnergySurface, reference: np.ndarray, cutoff: float = 5.0) -> FESError:
    """Deviation over bins defined in both surfaces with reference F < cutoff·T.

    Both surfaces are shifted so their minimum over the common bins is 0.
    """
    reference = np.asarray(reference, dtype=float)
    if reference.shape != fes.values.shape:
        raise InvalidInputError(f"Reference shape {reference.shape} != FES shape {fes.values.shape}")
    common = fes.defined & ~np.isnan(reference)
    if not common.any():
        raise InvalidInputError("Surfaces share no defined bins")
    est = fes.values - fes.values[common].min()
    ref = reference - reference[common].min()
    mask = common & (ref < cutoff * fes.temperature)
    diff = est[mask] - ref[mask]
    return FESError(float(np.sqrt(np.mean(diff**2))), float(np.max(np.abs(diff))), int(mask.sum()))


def free_energy_difference(
    weights: np.ndarray, in_a: np.ndarray, in_b: np.ndarray, temperature: float
) -> float:
    """F_a − F_b = −T·ln(P_a / P_b) from sample or grid weights."""
    weights = np.asarray(weights, dtype=float)
    p_a, p_b = weights[in_a].sum(), weights[in_b].sum()
    if p_a <= 0 or p_b <= 0:
        raise InvalidInputError("Both regions need positive weight")
    return float(-temperature * np.log(p_a / p_b))


def write_fes_csv(path: Path, fes: FreeEnergySurface, labels: Sequence[str] | None = None):
    centers = fes.centers
    labels = list(labels) if labels else [f"cv_{d + 1}" for d in range(len(centers))]
    lines = [",".join(labels + ["free_energy", "count"])]
    for idx in np.ndindex(fes.values.shape):
        cells = [format_real(centers[d][i]) for d, i in enumerate(idx)]
        value = fes.values[idx]
        cells.append("" if np.isnan(value) else format_real(value))
        cells.append(str(int(fes.histogram.counts[idx])))
        lines.append(",".join(cells))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
