"""Well-tempered Gaussian hill bias and the HILLS text format."""

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.utils.io import atomic_write_text, format_real

GRID_POINTS_PER_SIGMA = 50
_CHUNK = 4096
# points × hills × dims doubles per temporary array
_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class WellTemperedParams:
    w0: float = 1.0
    sigma: tuple[float, ...] = (0.2,)
    gamma: float = 8.0
    deposit_stride: int = 400
    periods: tuple[float | None, ...] = ()

    def __post_init__(self):
        if self.w0 <= 0:
            raise InvalidArgumentError(f"w0 must be positive, got {self.w0}")
        if not self.sigma or any(s <= 0 for s in self.sigma):
            raise InvalidArgumentError(f"All sigma must be positive, got {self.sigma}")
        if not self.gamma > 1:
            raise InvalidArgumentError(f"Bias factor must exceed 1, got {self.gamma}")
        if self.deposit_stride < 1:
            raise InvalidArgumentError(f"deposit_stride must be ≥ 1, got {self.deposit_stride}")
        if self.periods and len(self.periods) != len(self.sigma):
            raise InvalidArgumentError(
                f"{len(self.sigma)} sigma values but {len(self.periods)} periods"
            )

    @property
    def dims(self) -> int:
        return len(self.sigma)


@dataclass(frozen=True)
class Hill:
    center: tuple[float, ...]
    height: float
    widths: tuple[float, ...]
    step: int = 0


def wt_hill_height(V_here: float, params: WellTemperedParams, temperature: float) -> float:
    if np.isinf(params.gamma):
        return params.w0
    return float(params.w0 * np.exp(-V_here / ((params.gamma - 1.0) * temperature)))


@dataclass(eq=False)
class _GridCache:
    lo: float
    spacing: float
    period: float | None
    values: np.ndarray
    slopes: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(len(self.values))

    def covers(self, s: float) -> bool:
        return self.period is not None or self.lo <= s <= self.points[-1]

    def interpolate(self, s: float) -> tuple[float, float]:
        """Cubic Hermite interpolation of V and dV/ds."""
        u = (s - self.lo) / self.spacing
        if self.period is not None:
            u = np.mod(u, len(self.values) - 1)
        i = min(int(np.floor(u)), len(self.values) - 2)
        t = u - i
        h = self.spacing
        v0, v1 = self.values[i], self.values[i + 1]
        m0, m1 = self.slopes[i] * h, self.slopes[i + 1] * h
        t2, t3 = t * t, t * t * t
        value = (
            (2 * t3 - 3 * t2 + 1) * v0
            + (t3 - 2 * t2 + t) * m0
            + (-2 * t3 + 3 * t2) * v1
            + (t3 - t2) * m1
        )
        slope = (
            (6 * t2 - 6 * t) * v0
            + (3 * t2 - 4 * t + 1) * m0
            + (-6 * t2 + 6 * t) * v1
            + (3 * t2 - 2 * t) * m1
        ) / h
        return float(value), float(slope)


class BiasPotential:
    """Append-only sum of Gaussian hills over a 1–3 dimensional CV space."""

    def __init__(self, dims: int, periods: Sequence[float | None] | None = None):
        if not 1 <= dims <= 3:
            raise InvalidArgumentError(f"Bias supports 1 to 3 CV dimensions, got {dims}")
        periods = tuple(periods) if periods is not None else (None,) * dims
        if len(periods) != dims:
            raise InvalidArgumentError(f"{len(periods)} periods for {dims} dimensions")
        self.dims = dims
        self.periods = periods
        self._period_arr = np.array([p if p else np.nan for p in periods])
        self._periodic = ~np.isnan(self._period_arr)
        self._centers = np.empty((16, dims))
        self._widths = np.empty((16, dims))
        self._heights = np.empty(16)
        self._steps = np.empty(16, dtype=np.int64)
        self._n = 0
        self._grid: _GridCache | None = None

    def __len__(self) -> int:
        return self._n

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self._n]

    @property
    def widths(self) -> np.ndarray:
        return self._widths[: self._n]

    @property
    def heights(self) -> np.ndarray:
        return self._heights[: self._n]

    @property
    def steps(self) -> np.ndarray:
        return self._steps[: self._n]

    @property
    def hills(self) -> list[Hill]:
        return [
            Hill(tuple(c), float(h), tuple(w), int(k))
            for c, h, w, k in zip(self.centers, self.heights, self.widths, self.steps)
        ]

    def _point(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if s.shape != (self.dims,):
            raise InvalidInputError(f"Expected a {self.dims}-dimensional CV point, got shape {s.shape}")
        return s

    def _min_image(self, diff: np.ndarray) -> np.ndarray:
        if not self._periodic.any():
            return diff
        period = np.where(self._periodic, self._period_arr, 1.0)
        wrapped = diff - period * np.round(diff / period)
        return np.where(self._periodic, wrapped, diff)

    def _kernel(self, points: np.ndarray, start: int, stop: int) -> np.ndarray:
        """Σ hills[start:stop] evaluated at points (m × dims)."""
        out = np.zeros(points.shape[0])
        if stop <= start:
            return out
        rows = max(1, _BLOCK_ELEMENTS // (min(_CHUNK, stop - start) * self.dims))
        for p0 in range(0, points.shape[0], rows):
            block = points[p0 : p0 + rows]
            for lo in range(start, stop, _CHUNK):
                hi = min(lo + _CHUNK, stop)
                diff = self._min_image(block[:, None, :] - self._centers[None, lo:hi])
                z = diff / self._widths[None, lo:hi]
                out[p0 : p0 + len(block)] += np.exp(-0.5 * np.sum(z * z, axis=2)) @ self._heights[lo:hi]
        return out

    def append(self, center, height: float, widths, step: int = 0) -> Hill:
        center = self._point(center)
        widths = np.broadcast_to(np.asarray(widths, dtype=float), (self.dims,))
        if height <= 0 or not np.isfinite(height):
            raise InvalidArgumentError(f"Hill height must be positive and finite, got {height}")
        if np.any(widths <= 0):
            raise InvalidArgumentError(f"Hill widths must be positive, got {widths}")
        if self._periodic.any():
            center = np.where(self._periodic, self._min_image(center), center)
        if self._n == len(self._heights):
            cap = 2 * self._n
            self._centers = np.resize(self._centers, (cap, self.dims))
            self._widths = np.resize(self._widths, (cap, self.dims))
            self._heights = np.resize(self._heights, cap)
            self._steps = np.resize(self._steps, cap)
        k = self._n
        self._centers[k] = center
        self._widths[k] = widths
        self._heights[k] = height
        self._steps[k] = step
        self._n += 1
        if self._grid is not None:
            self._add_to_grid(k)
        return Hill(tuple(center), float(height), tuple(widths), int(step))

    def extend(self, other: "BiasPotential", start: int = 0, stop: int | None = None):
        stop = len(other) if stop is None else stop
        for k in range(start, stop):
            self.append(other._centers[k], other._heights[k], other._widths[k], int(other._steps[k]))

    def evaluate(self, s) -> tuple[float, np.ndarray]:
        """V(s) and dV/ds by exact summation (or the grid cache when enabled)."""
        s = self._point(s)
        if self._grid is not None and self._grid.covers(s[0]):
            value, slope = self._grid.interpolate(s[0])
            return value, np.array([slope])
        n = self._n
        if n == 0:
            return 0.0, np.zeros(self.dims)
        diff = self._min_image(s - self._centers[:n])
        inv_w2 = 1.0 / self._widths[:n] ** 2
        g = self._heights[:n] * np.exp(-0.5 * np.sum(diff * diff * inv_w2, axis=1))
        return float(g.sum()), -(g @ (diff * inv_w2))

    def evaluate_many(self, points, start: int = 0, stop: int | None = None) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dims)
        stop = self._n if stop is None else min(stop, self._n)
        return self._kernel(points, start, stop)

    def enable_grid(self, lo: float, hi: float, sigma: float):
        """Cache V and dV/ds on a uniform 1-D grid with spacing sigma/50,
        updated as hills arrive. Periodic CVs cover one period from ``lo``.
        """
        if self.dims != 1:
            raise InvalidArgumentError("The grid cache supports 1-D CVs only")
        period = self.periods[0]
        if period:
            hi = lo + period
        if not hi > lo:
            raise InvalidArgumentError(f"Grid range [{lo}, {hi}] is empty")
        n = int(np.ceil((hi - lo) * GRID_POINTS_PER_SIGMA / sigma)) + 1
        spacing = (hi - lo) / (n - 1)
        self._grid = _GridCache(lo, spacing, period, np.zeros(n), np.zeros(n))
        for k in range(self._n):
            self._add_to_grid(k)
        logger.debug("bias grid cache: {} points, spacing {:.3g}", n, spacing)

    def _add_to_grid(self, k: int):
        grid = self._grid
        diff = self._min_image(grid.points[:, None] - self._centers[k])[:, 0]
        w2 = self._widths[k, 0] ** 2
        g = self._heights[k] * np.exp(-0.5 * diff * diff / w2)
        grid.values += g
        grid.slopes -= g * diff / w2

    def copy(self) -> "BiasPotential":
        clone = BiasPotential(self.dims, self.periods)
        clone._centers = self._centers.copy()
        clone._widths = self._widths.copy()
        clone._heights = self._heights.copy()
        clone._steps = self._steps.copy()
        clone._n = self._n
        if self._grid is not None:
            g = self._grid
            clone._grid = _GridCache(g.lo, g.spacing, g.period, g.values.copy(), g.slopes.copy())
        return clone


def deposit_hill(
    bias: BiasPotential,
    s,
    params: WellTemperedParams,
    temperature: float,
    step: int = 0,
) -> Hill:
    if np.atleast_1d(s).shape != (bias.dims,) or len(params.sigma) != bias.dims:
        raise InvalidInputError(
            f"CV point {np.atleast_1d(s).shape} / sigma {len(params.sigma)} do not match "
            f"bias dimension {bias.dims}"
        )
    V_here, _ = bias.evaluate(s)
    height = wt_hill_height(V_here, params, temperature)
    return bias.append(s, height, params.sigma, step)


def bias_eval(bias: BiasPotential, s) -> tuple[float, np.ndarray]:
    return bias.evaluate(s)


def hills_lines(bias: BiasPotential, gamma: float, start: int = 0) -> list[str]:
    lines = []
    for k in range(start, len(bias)):
        cells = [str(int(bias.steps[k]))]
        cells += [format_real(c) for c in bias.centers[k]]
        cells += [format_real(w) for w in bias.widths[k]]
        cells += [format_real(bias.heights[k]), format_real(gamma)]
        lines.append(" ".join(cells))
    return lines


def hills_header(dims: int) -> str:
    names = [f"center_{d + 1}" for d in range(dims)] + [f"sigma_{d + 1}" for d in range(dims)]
    return "#! FIELDS step " + " ".join(names) + " height biasfactor"


def write_hills(path: Path, bias: BiasPotential, gamma: float):
    lines = [hills_header(bias.dims)] + hills_lines(bias, gamma)
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def parse_hills(text: str, periods: Sequence[float | None] | None = None) -> tuple[BiasPotential, float]:
    bias: BiasPotential | None = None
    gamma = np.inf
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split()
        if (len(cells) - 3) % 2 or len(cells) < 5:
            raise InvalidInputError(f"HILLS line {lineno}: unexpected field count {len(cells)}")
        dims = (len(cells) - 3) // 2
        if bias is None:
            bias = BiasPotential(dims, periods)
        elif dims != bias.dims:
            raise InvalidInputError(f"HILLS line {lineno}: {dims} dimensions, expected {bias.dims}")
        try:
            values = [float(c) for c in cells[1:]]
            step = int(cells[0])
        except ValueError as e:
            raise InvalidInputError(f"HILLS line {lineno}: {e}") from e
        bias.append(values[:dims], values[2 * dims], values[dims : 2 * dims], step)
        gamma = values[2 * dims + 1]
    if bias is None:
        raise InvalidInputError("HILLS file contains no hills")
    return bias, gamma


def read_hills(path: Path, periods: Sequence[float | None] | None = None) -> tuple[BiasPotential, float]:
    return parse_hills(Path(path).read_text(encoding="ascii"), periods)
