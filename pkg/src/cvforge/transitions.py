from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.metad import Trajectory


@dataclass(frozen=True)
class Basin:
    center: tuple[float, ...]
    radius: float
    name: str = ""


@dataclass(frozen=True, eq=False)
class TransitionCounts:
    matrix: np.ndarray
    visits: np.ndarray
    round_trips: int
    first_round_trip_step: int | None

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


def _distance(points: np.ndarray, center: np.ndarray, periods: np.ndarray) -> np.ndarray:
    diff = points - center
    periodic = ~np.isnan(periods)
    if periodic.any():
        period = np.where(periodic, periods, 1.0)
        diff = np.where(periodic, diff - period * np.round(diff / period), diff)
    return np.linalg.norm(diff, axis=-1)


def _round_trips(matrix: np.ndarray) -> int:
    return int(np.triu(np.minimum(matrix, matrix.T), k=1).sum())


def count_transitions(
    traj: Trajectory | np.ndarray,
    basins: Sequence[Basin],
    periods: Sequence[float | None] | None = None,
) -> TransitionCounts:
    """Count basin-to-basin transitions with core hysteresis.

    A transition A→B is counted when the series enters B's core and the last
    core it occupied was A's; leaving a core without reaching another counts
    nothing.
    """
    if isinstance(traj, Trajectory):
        points, steps = traj.frames, traj.steps
    else:
        points = np.asarray(traj, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        steps = np.arange(points.shape[0])
    if len(basins) < 2:
        raise InvalidArgumentError(f"Need at least two basins, got {len(basins)}")
    dims = points.shape[1]
    period_arr = np.array(
        [p if p else np.nan for p in (periods if periods is not None else (None,) * dims)]
    )
    if period_arr.shape != (dims,):
        raise InvalidInputError(f"{len(period_arr)} periods for {dims}-dimensional points")
    centers = np.array([b.center for b in basins], dtype=float)
    if centers.shape != (len(basins), dims):
        raise InvalidInputError(f"Basin centers must be {dims}-dimensional")
    radii = np.array([b.radius for b in basins], dtype=float)
    if np.any(radii <= 0):
        raise InvalidArgumentError("Core radii must be positive")
    for a in range(len(basins)):
        gaps = _distance(centers[a + 1 :], centers[a], period_arr)
        for offset, gap in enumerate(gaps):
            b = a + 1 + offset
            if gap < radii[a] + radii[b]:
                raise InvalidArgumentError(f"Basin cores {a} and {b} overlap")

    inside = np.stack([_distance(points, c, period_arr) <= r for c, r in zip(centers, radii)], axis=1)
    core = np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)

    n = len(basins)
    matrix = np.zeros((n, n), dtype=int)
    visits = np.zeros(n, dtype=int)
    last = -1
    previous = -1
    first_round_trip = None
    for k, c in enumerate(core):
        if c >= 0 and c != previous:
            visits[c] += 1
        if c >= 0:
            if last >= 0 and c != last:
                matrix[last, c] += 1
                if first_round_trip is None and _round_trips(matrix):
                    first_round_trip = int(steps[k])
            last = c
        previous = c
    return TransitionCounts(matrix, visits, _round_trips(matrix), first_round_trip)
