from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from cvforge.errors import InvalidArgumentError, SimulationDivergedError
from cvforge.features import wrap_angle
from cvforge.potentials import ToyPotential

DIVERGENCE_BOUND = 1e6

ForceFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LangevinParams:
    dt: float = 0.005
    friction: float = 1.0
    temperature: float = 1.0
    mass: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.friction <= 0 or self.mass <= 0:
            raise InvalidArgumentError(
                f"dt, friction and mass must be positive (dt={self.dt}, "
                f"friction={self.friction}, mass={self.mass})"
            )
        if self.temperature < 0:
            raise InvalidArgumentError(f"Temperature must be non-negative, got {self.temperature}")

    @property
    def ou_decay(self) -> float:
        return float(np.exp(-self.friction * self.dt))

    @property
    def ou_noise(self) -> float:
        c1 = self.ou_decay
        return float(np.sqrt((1.0 - c1 * c1) * self.temperature / self.mass))


@dataclass(frozen=True, eq=False)
class LangevinState:
    q: np.ndarray
    v: np.ndarray
    force: np.ndarray
    energy: float

    def with_phase(self, q: np.ndarray, v: np.ndarray) -> "LangevinState":
        return replace(self, q=q, v=v)


def check_finite(step: int, q: np.ndarray, energy: float, force: np.ndarray):
    if not np.isfinite(energy):
        raise SimulationDivergedError(step, q, "non-finite energy")
    if not np.all(np.isfinite(force)):
        raise SimulationDivergedError(step, q, "non-finite force")
    if np.any(np.abs(q) > DIVERGENCE_BOUND):
        raise SimulationDivergedError(step, q, f"|q| exceeded {DIVERGENCE_BOUND:g}")


def initial_state(
    q0, force_fn: ForceFn, params: LangevinParams, rng: np.random.Generator
) -> LangevinState:
    """State at q0 with Maxwell–Boltzmann velocities."""
    q = np.array(q0, dtype=float)
    v = np.sqrt(params.temperature / params.mass) * rng.standard_normal(q.shape)
    energy, force = force_fn(q)
    check_finite(0, q, energy, force)
    return LangevinState(q, v, force, energy)


def baoab_step(
    state: LangevinState,
    force_fn: ForceFn,
    params: LangevinParams,
    rng: np.random.Generator,
    step: int,
    periodic: np.ndarray | None = None,
) -> LangevinState:
    """One BAOAB step; ``force_fn`` returns (energy, total force) at q."""
    half = 0.5 * params.dt
    v = state.v + half * state.force / params.mass
    q = state.q + half * v
    v = params.ou_decay * v + params.ou_noise * rng.standard_normal(q.shape)
    q = q + half * v
    if periodic is not None and periodic.any():
        q = np.where(periodic, wrap_angle(q), q)
    energy, force = force_fn(q)
    check_finite(step, q, energy, force)
    v = v + half * force / params.mass
    return LangevinState(q, v, force, energy)


def potential_force(p: ToyPotential, extra_force: np.ndarray | None = None) -> ForceFn:
    def force_fn(q):
        energy, grad = p.energy_and_gradient(q)
        force = -grad if extra_force is None else extra_force - grad
        return energy, force

    return force_fn


def langevin_step(
    p: ToyPotential,
    state: LangevinState,
    params: LangevinParams,
    rng: np.random.Generator,
    extra_force: np.ndarray | None = None,
    step: int = 1,
) -> LangevinState:
    return baoab_step(
        state, potential_force(p, extra_force), params, rng, step, np.asarray(p.periodic)
    )
