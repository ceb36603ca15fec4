"""Analytic toy landscapes in reduced units (kB = 1)."""

from dataclasses import dataclass
from typing import Literal

import numpy as np

from cvforge.errors import InvalidArgumentError, InvalidInputError

# β, α_R and α_L analogs
RAMA_CENTERS = ((-2.5, 2.6), (-1.4, -1.0), (1.0, 1.2))
RAMA_DEPTHS = (7.0, 6.0, 4.0)
RAMA_WIDTH = 0.6
RAMA_RIDGE = 10.0
RAMA_VALLEY = -1.95


def _check_q(q, n_coords: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (n_coords,):
        raise InvalidInputError(f"Expected {n_coords} coordinates, got shape {q.shape}")
    return q


@dataclass(frozen=True)
class DoubleWell1D:
    """U(x) = a(x² − 1)²: minima at ±1, barrier a at 0."""

    a: float = 6.0
    kind: Literal["double_well_1d"] = "double_well_1d"

    def __post_init__(self):
        if self.a <= 0:
            raise InvalidArgumentError(f"Barrier height must be positive, got {self.a}")

    n_coords = 1
    periodic = (False,)

    def energy_and_gradient(self, q) -> tuple[float, np.ndarray]:
        (x,) = _check_q(q, 1)
        u = x * x - 1.0
        return float(self.a * u * u), np.array([4.0 * self.a * x * u])

    def basin_centers(self) -> list[tuple[float, ...]]:
        return [(-1.0,), (1.0,)]


@dataclass(frozen=True)
class Harmonic:
    k: float = 1.0
    dim: int = 1
    kind: Literal["harmonic"] = "harmonic"

    def __post_init__(self):
        if self.k <= 0 or self.dim < 1:
            raise InvalidArgumentError(f"Need k > 0 and dim ≥ 1, got k={self.k}, dim={self.dim}")

    @property
    def n_coords(self) -> int:
        return self.dim

    @property
    def periodic(self) -> tuple[bool, ...]:
        return (False,) * self.dim

    def energy_and_gradient(self, q) -> tuple[float, np.ndarray]:
        q = _check_q(q, self.dim)
        return float(0.5 * self.k * q @ q), self.k * q

    def basin_centers(self) -> list[tuple[float, ...]]:
        return [(0.0,) * self.dim]


@dataclass(frozen=True)
class RamaTorus2D:
    """Inverted periodic Gaussian wells on the (φ, ψ) torus plus a φ ridge.

    U = −Σ_k depth_k·exp[(cos(φ−φ_k) + cos(ψ−ψ_k) − 2)/width_k²]
        + ridge·(1 − cos 2(φ − valley))/2
    """

    centers: tuple[tuple[float, float], ...] = RAMA_CENTERS
    depths: tuple[float, ...] = RAMA_DEPTHS
    widths: tuple[float, ...] = (RAMA_WIDTH,) * 3
    ridge: float = RAMA_RIDGE
    valley: float = RAMA_VALLEY
    kind: Literal["rama_torus_2d"] = "rama_torus_2d"

    n_coords = 2
    periodic = (True, True)

    def __post_init__(self):
        if not self.centers:
            raise InvalidArgumentError("Torus landscape needs at least one well")
        if not len(self.centers) == len(self.depths) == len(self.widths):
            raise InvalidArgumentError(
                f"{len(self.centers)} centers, {len(self.depths)} depths, {len(self.widths)} widths"
            )
        if any(w <= 0 for w in self.widths):
            raise InvalidArgumentError("Well widths must be positive")
        if self.ridge < 0:
            raise InvalidArgumentError(f"Ridge height must be non-negative, got {self.ridge}")

    def energy_and_gradient(self, q) -> tuple[float, np.ndarray]:
        phi, psi = _check_q(q, 2)
        centers = np.asarray(self.centers, dtype=float)
        depths = np.asarray(self.depths, dtype=float)
        inv_w2 = 1.0 / np.asarray(self.widths, dtype=float) ** 2
        d_phi = phi - centers[:, 0]
        d_psi = psi - centers[:, 1]
        terms = depths * np.exp((np.cos(d_phi) + np.cos(d_psi) - 2.0) * inv_w2)
        shifted = 2.0 * (phi - self.valley)
        energy = -terms.sum() + 0.5 * self.ridge * (1.0 - np.cos(shifted))
        grad = np.array(
            [
                np.sum(terms * inv_w2 * np.sin(d_phi)) + self.ridge * np.sin(shifted),
                np.sum(terms * inv_w2 * np.sin(d_psi)),
            ]
        )
        return float(energy), grad

    def basin_centers(self) -> list[tuple[float, ...]]:
        return [tuple(c) for c in self.centers]


ToyPotential = DoubleWell1D | Harmonic | RamaTorus2D


def potential_eval(p: ToyPotential, q) -> tuple[float, np.ndarray]:
    return p.energy_and_gradient(q)
