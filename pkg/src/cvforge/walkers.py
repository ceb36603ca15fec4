"""Multiple walkers sharing one bias, and bias-exchange replicas."""

import asyncio
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from loguru import logger

from cvforge.bias import BiasPotential, WellTemperedParams, hills_header, hills_lines, parse_hills
from cvforge.cvs import CollectiveVariable
from cvforge.errors import InvalidArgumentError
from cvforge.langevin import LangevinParams
from cvforge.metad import MAX_CV_DIMS, Trajectory, Walker
from cvforge.potentials import ToyPotential

WalkerMode = Literal["sequential", "parallel"]


def _start_points(q0, n: int) -> list[np.ndarray]:
    q0 = np.asarray(q0, dtype=float)
    if q0.ndim == 1:
        return [q0.copy() for _ in range(n)]
    if q0.shape[0] != n:
        raise InvalidArgumentError(f"{q0.shape[0]} starting points for {n} walkers")
    return [row.copy() for row in q0]


def _check_params(lps: Sequence[LangevinParams], n: int):
    if n < 1:
        raise InvalidArgumentError(f"Need at least one walker, got {n}")
    if len(lps) != n:
        raise InvalidArgumentError(f"{len(lps)} Langevin parameter sets for {n} walkers")
    if len({lp.seed for lp in lps}) != n:
        raise InvalidArgumentError("Walker seeds must be distinct")


async def _advance_all(walkers: Sequence[Walker], n_steps: int, save_stride: int, mode: WalkerMode):
    if mode == "parallel":
        await asyncio.gather(
            *(asyncio.to_thread(w.advance, n_steps, save_stride) for w in walkers)
        )
    else:
        for w in walkers:
            w.advance(n_steps, save_stride)


def _merge(shared: BiasPotential, walkers: Sequence[Walker]):
    """Append every walker's new hills to ``shared`` in (step, walker) order."""
    order = sorted(
        (int(w.new_hills.steps[k]), w.walker_id, k)
        for w in walkers
        for k in range(len(w.new_hills))
    )
    by_id = {w.walker_id: w for w in walkers}
    for _, wid, k in order:
        src = by_id[wid].new_hills
        shared.append(src.centers[k], src.heights[k], src.widths[k], int(src.steps[k]))


def _rebuild_from_files(paths: Sequence[Path], periods, template: BiasPotential) -> BiasPotential:
    shared = template.copy()
    entries = []
    for wid, path in enumerate(paths):
        text = path.read_text(encoding="ascii")
        if not any(line.strip() and not line.startswith("#") for line in text.splitlines()):
            continue
        hills, _ = parse_hills(text, periods)
        entries += [(int(hills.steps[k]), wid, k, hills) for k in range(len(hills))]
    for _, _, k, hills in sorted(entries, key=lambda e: e[:3]):
        shared.append(hills.centers[k], hills.heights[k], hills.widths[k], int(hills.steps[k]))
    return shared


async def multiwalker_run_async(
    p: ToyPotential,
    cvs: Sequence[CollectiveVariable],
    lps: Sequence[LangevinParams],
    wt: WellTemperedParams,
    steps: int,
    n_walkers: int,
    read_stride: int,
    q0,
    save_stride: int = 1,
    mode: WalkerMode = "sequential",
    hills_dir: Path | None = None,
    grid_range: tuple[float, float] | None = None,
) -> tuple[list[Trajectory], BiasPotential]:
    if not 1 <= len(cvs) <= MAX_CV_DIMS:
        raise InvalidArgumentError(f"Metadynamics biases 1 to {MAX_CV_DIMS} CVs, got {len(cvs)}")
    _check_params(lps, n_walkers)
    if read_stride < 1 or save_stride < 1:
        raise InvalidArgumentError("read_stride and save_stride must be ≥ 1")

    periods = wt.periods or [cv.period for cv in cvs]
    # empty template keeps the grid settings for rebuilt biases
    template = BiasPotential(len(cvs), periods)
    if grid_range is not None:
        template.enable_grid(grid_range[0], grid_range[1], wt.sigma[0])
    shared = template.copy()
    walkers = [
        Walker(p, cvs, lp, wt, q, shared.copy(), walker_id=k)
        for k, (lp, q) in enumerate(zip(lps, _start_points(q0, n_walkers)))
    ]
    paths: list[Path] = []
    if hills_dir is not None:
        hills_dir = Path(hills_dir)
        hills_dir.mkdir(parents=True, exist_ok=True)
        paths = [hills_dir / f"HILLS.{k}" for k in range(n_walkers)]
        for path in paths:
            path.write_text(hills_header(len(cvs)) + "\n", encoding="ascii")

    logger.info(
        "{} walkers ({} mode): {} steps, refresh every {} steps", n_walkers, mode, steps, read_stride
    )
    done = 0
    while done < steps:
        block = min(read_stride, steps - done)
        await _advance_all(walkers, block, save_stride, mode)
        done += block
        if paths:
            for w, path in zip(walkers, paths):
                lines = hills_lines(w.new_hills, wt.gamma)
                if lines:
                    with open(path, "a", encoding="ascii") as f:
                        f.write("\n".join(lines) + "\n")
            shared = _rebuild_from_files(paths, periods, template)
        else:
            _merge(shared, walkers)
        for w in walkers:
            w.adopt(shared.copy())

    logger.info("walkers done: {} shared hills", len(shared))
    return [w.trajectory() for w in walkers], shared


def multiwalker_run(*args, **kwargs) -> tuple[list[Trajectory], BiasPotential]:
    return asyncio.run(multiwalker_run_async(*args, **kwargs))


def metropolis_accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    """Accept with probability min(1, exp(−Δ/T)); always draws one uniform."""
    u = rng.random()
    if delta <= 0:
        return True
    if temperature <= 0:
        return False
    return bool(u < np.exp(-delta / temperature))


def exchange_delta(walker_i: Walker, walker_j: Walker) -> float:
    q_i, q_j = walker_i.state.q, walker_j.state.q
    crossed = walker_i.bias_at(q_j) + walker_j.bias_at(q_i)
    own = walker_i.bias_at(q_i) + walker_j.bias_at(q_j)
    return crossed - own


def bias_exchange_swap(
    walker_i: Walker,
    walker_j: Walker,
    temperature: float,
    rng: np.random.Generator,
) -> bool:
    """Propose exchanging configurations (and velocities) between two walkers."""
    delta = exchange_delta(walker_i, walker_j)
    if not metropolis_accept(delta, temperature, rng):
        return False
    q_i, v_i = walker_i.state.q, walker_i.state.v
    walker_i.set_phase(walker_j.state.q, walker_j.state.v)
    walker_j.set_phase(q_i, v_i)
    return True


@dataclass(frozen=True, eq=False)
class BiasExchangeResult:
    trajectories: list[Trajectory]
    biases: list[BiasPotential]
    attempted: np.ndarray
    accepted: np.ndarray

    @property
    def acceptance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.accepted / self.attempted


def run_bias_exchange(
    p: ToyPotential,
    cvs: Sequence[CollectiveVariable],
    lps: Sequence[LangevinParams],
    wts: Sequence[WellTemperedParams],
    steps: int,
    exchange_stride: int,
    q0,
    save_stride: int = 1,
    seed: int = 0,
) -> BiasExchangeResult:
    """One 1-D replica per CV; neighbours swap every ``exchange_stride`` steps,
    alternating between even and odd pairings."""
    n = len(cvs)
    if n < 2:
        raise InvalidArgumentError(f"Bias exchange needs at least 2 replicas, got {n}")
    _check_params(lps, n)
    if len(wts) != n:
        raise InvalidArgumentError(f"{len(wts)} well-tempered parameter sets for {n} replicas")
    if len({lp.temperature for lp in lps}) != 1:
        raise InvalidArgumentError("Bias-exchange replicas must share one temperature")
    if exchange_stride < 1:
        raise InvalidArgumentError(f"exchange_stride must be ≥ 1, got {exchange_stride}")

    temperature = lps[0].temperature
    rng = np.random.default_rng(seed)
    replicas = [
        Walker(p, [cv], lp, wt, q, walker_id=k)
        for k, (cv, lp, wt, q) in enumerate(zip(cvs, lps, wts, _start_points(q0, n)))
    ]
    attempted = np.zeros(n - 1, dtype=int)
    accepted = np.zeros(n - 1, dtype=int)
    done = 0
    exchange = 0
    while done < steps:
        block = min(exchange_stride, steps - done)
        for r in replicas:
            r.advance(block, save_stride)
        done += block
        if block < exchange_stride:
            break
        for i in range(exchange % 2, n - 1, 2):
            attempted[i] += 1
            accepted[i] += bias_exchange_swap(replicas[i], replicas[i + 1], temperature, rng)
        exchange += 1
    logger.info(
        "bias exchange: {} replicas, acceptance per pair {}",
        n, np.round(accepted / np.maximum(attempted, 1), 3).tolist(),
    )
    return BiasExchangeResult(
        [r.trajectory() for r in replicas], [r.bias for r in replicas], attempted, accepted
    )
