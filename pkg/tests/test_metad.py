import numpy as np
import pytest

from cvforge.bias import WellTemperedParams
from cvforge.cvs import raw_coordinate_cv
from cvforge.errors import InvalidArgumentError, InvalidInputError
from cvforge.langevin import LangevinParams
from cvforge.metad import (
    Walker,
    read_trajectory_csv,
    run_metadynamics,
    run_unbiased,
    write_trajectory_csv,
)
from cvforge.potentials import DoubleWell1D, RamaTorus2D
from cvforge.transitions import Basin, count_transitions
from cvforge.walkers import (
    bias_exchange_swap,
    exchange_delta,
    metropolis_accept,
    multiwalker_run,
    multiwalker_run_async,
    run_bias_exchange,
)

WELLS = [Basin((-1.0,), 0.3, "left"), Basin((1.0,), 0.3, "right")]


@pytest.fixture
def well():
    return DoubleWell1D(6.0)


@pytest.fixture
def x_cv():
    return [raw_coordinate_cv(0, 1)]


@pytest.fixture
def wt():
    return WellTemperedParams(w0=1.0, sigma=(0.2,), gamma=10.0, deposit_stride=100)


@pytest.fixture
def cold():
    return LangevinParams(dt=0.005, friction=1.0, temperature=0.5, seed=7)


class TestMetadynamics:
    """Single-walker well-tempered runs"""

    def test_deposits_on_stride(self, well, x_cv, wt, cold):
        traj, bias = run_metadynamics(well, x_cv, cold, wt, 2000, 10, [-1.0])
        assert len(bias) == 20
        assert list(bias.steps) == list(range(100, 2001, 100))
        assert bias.heights[0] == 1.0
        assert np.all(bias.heights <= 1.0)

    def test_frames_and_bias_record(self, well, x_cv, wt, cold):
        traj, bias = run_metadynamics(well, x_cv, cold, wt, 2000, 10, [-1.0])
        assert len(traj) == 201
        assert traj.steps[0] == 0 and traj.steps[-1] == 2000
        np.testing.assert_array_equal(traj.cv_series[:, 0], traj.frames[:, 0])
        assert traj.bias_at_frame[0] == 0.0
        assert traj.bias_at_frame[-1] == pytest.approx(bias.evaluate(traj.cv_series[-1])[0])

    def test_seeded_runs_repeat(self, well, x_cv, wt, cold):
        a, bias_a = run_metadynamics(well, x_cv, cold, wt, 1000, 10, [-1.0])
        b, bias_b = run_metadynamics(well, x_cv, cold, wt, 1000, 10, [-1.0])
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(bias_a.heights, bias_b.heights)

    def test_grid_cache_tracks_exact_run(self, well, x_cv, wt, cold):
        exact, _ = run_metadynamics(well, x_cv, cold, wt, 1000, 10, [-1.0])
        cached, _ = run_metadynamics(well, x_cv, cold, wt, 1000, 10, [-1.0], grid_range=(-2.5, 2.5))
        np.testing.assert_allclose(cached.frames, exact.frames, atol=1e-6)

    def test_escapes_where_plain_dynamics_stays(self, well, x_cv, wt, cold):
        traj, _ = run_metadynamics(well, x_cv, cold, wt, 40_000, 10, [-1.0])
        plain = run_unbiased(well, cold, 40_000, 10, [-1.0])
        assert count_transitions(traj, WELLS).round_trips >= 1
        assert count_transitions(plain, WELLS).total == 0

    @pytest.mark.slow
    def test_many_crossings_at_scale(self, well, x_cv, wt, cold):
        traj, _ = run_metadynamics(well, x_cv, cold, wt, 500_000, 50, [-1.0], grid_range=(-2.5, 2.5))
        plain = run_unbiased(well, cold, 500_000, 50, [-1.0])
        assert count_transitions(traj, WELLS).total >= 10
        assert count_transitions(plain, WELLS).total <= 1

    def test_cv_count_limits(self, well, wt, cold):
        with pytest.raises(InvalidArgumentError):
            run_metadynamics(well, [], cold, wt, 10, 1, [0.0])
        four = [raw_coordinate_cv(0, 1)] * 4
        with pytest.raises(InvalidArgumentError):
            run_metadynamics(well, four, cold, WellTemperedParams(sigma=(0.2,) * 4), 10, 1, [0.0])

    def test_mismatched_inputs(self, well, x_cv, wt, cold):
        with pytest.raises(InvalidInputError):
            run_metadynamics(well, x_cv, cold, wt, 10, 1, [0.0, 0.0])
        with pytest.raises(InvalidInputError):
            run_metadynamics(well, [raw_coordinate_cv(0, 2)], cold, wt, 10, 1, [0.0])
        with pytest.raises(InvalidArgumentError):
            run_metadynamics(well, x_cv, cold, WellTemperedParams(sigma=(0.2, 0.2)), 10, 1, [0.0])

    def test_trajectory_csv_round_trip(self, tmp_path, well, x_cv, wt, cold):
        traj, _ = run_metadynamics(well, x_cv, cold, wt, 500, 10, [-1.0])
        path = tmp_path / "trajectory.csv"
        write_trajectory_csv(path, traj)
        assert path.read_text().splitlines()[0] == "step,q_1,cv_1,bias_energy"
        loaded = read_trajectory_csv(path)
        np.testing.assert_array_equal(loaded.steps, traj.steps)
        np.testing.assert_array_equal(loaded.frames, traj.frames)
        np.testing.assert_array_equal(loaded.bias_at_frame, traj.bias_at_frame)


class TestMultipleWalkers:
    """Walkers sharing one hill list"""

    def _lps(self, n, base=7):
        return [LangevinParams(dt=0.005, temperature=0.5, seed=base + k) for k in range(n)]

    def test_single_walker_matches_plain_run(self, well, x_cv, wt, cold):
        traj, bias = run_metadynamics(well, x_cv, cold, wt, 3000, 10, [-1.0])
        trajs, shared = multiwalker_run(well, x_cv, [cold], wt, 3000, 1, 250, [-1.0], save_stride=10)
        np.testing.assert_array_equal(trajs[0].frames, traj.frames)
        np.testing.assert_array_equal(trajs[0].bias_at_frame, traj.bias_at_frame)
        np.testing.assert_array_equal(shared.centers, bias.centers)
        np.testing.assert_array_equal(shared.heights, bias.heights)

    def test_hills_counted_from_every_walker(self, well, x_cv, wt):
        trajs, shared = multiwalker_run(well, x_cv, self._lps(3), wt, 1000, 3, 200, [-1.0])
        assert len(trajs) == 3
        assert len(shared) == 30
        steps = shared.steps
        assert np.all(np.diff(steps) >= 0)

    async def test_parallel_equals_sequential(self, well, x_cv, wt):
        seq = await multiwalker_run_async(well, x_cv, self._lps(3), wt, 1000, 3, 200, [-1.0], mode="sequential")
        par = await multiwalker_run_async(well, x_cv, self._lps(3), wt, 1000, 3, 200, [-1.0], mode="parallel")
        for a, b in zip(seq[0], par[0]):
            np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(seq[1].heights, par[1].heights)

    def test_hills_files_equal_memory_merge(self, tmp_path, well, x_cv, wt):
        mem = multiwalker_run(well, x_cv, self._lps(2), wt, 1000, 2, 300, [-1.0])
        files = multiwalker_run(well, x_cv, self._lps(2), wt, 1000, 2, 300, [-1.0], hills_dir=tmp_path)
        np.testing.assert_array_equal(mem[1].centers, files[1].centers)
        np.testing.assert_array_equal(mem[1].heights, files[1].heights)
        assert (tmp_path / "HILLS.0").exists() and (tmp_path / "HILLS.1").exists()

    def test_seeds_must_differ(self, well, x_cv, wt, cold):
        with pytest.raises(InvalidArgumentError):
            multiwalker_run(well, x_cv, [cold, cold], wt, 100, 2, 50, [-1.0])

    def test_start_points_per_walker(self, well, x_cv, wt):
        trajs, _ = multiwalker_run(well, x_cv, self._lps(2), wt, 10, 2, 5, [[-1.0], [1.0]])
        assert trajs[0].frames[0, 0] == -1.0
        assert trajs[1].frames[0, 0] == 1.0


class TestBiasExchange:
    """Replica swaps between walkers biasing different CVs"""

    def test_metropolis_rule(self):
        rng = np.random.default_rng(0)
        assert metropolis_accept(-1.0, 1.0, rng)
        assert not metropolis_accept(1.0, 0.0, rng)
        a, b = np.random.default_rng(3), np.random.default_rng(3)
        metropolis_accept(-5.0, 1.0, a)
        b.random()
        assert a.random() == b.random()

    def test_acceptance_frequency(self):
        rng = np.random.default_rng(1)
        hits = sum(metropolis_accept(1.0, 1.0, rng) for _ in range(20_000))
        assert hits / 20_000 == pytest.approx(np.exp(-1.0), abs=0.01)

    def test_swap_exchanges_configurations(self):
        p = RamaTorus2D()
        lp_a, lp_b = LangevinParams(seed=1), LangevinParams(seed=2)
        wt = WellTemperedParams(sigma=(0.3,), deposit_stride=10)
        a = Walker(p, [raw_coordinate_cv(0, 2, periodic=True)], lp_a, wt, [-2.5, 2.6], walker_id=0)
        b = Walker(p, [raw_coordinate_cv(1, 2, periodic=True)], lp_b, wt, [1.0, 1.2], walker_id=1)
        a.advance(50, 10)
        b.advance(50, 10)
        q_a, q_b = a.state.q.copy(), b.state.q.copy()
        delta = exchange_delta(a, b)
        expected = a.bias_at(q_b) + b.bias_at(q_a) - a.bias_at(q_a) - b.bias_at(q_b)
        assert delta == pytest.approx(expected)
        accepted = bias_exchange_swap(a, b, 0.0 if delta > 0 else 1.0, np.random.default_rng(0))
        assert accepted == (delta <= 0)
        if accepted:
            np.testing.assert_array_equal(a.state.q, q_b)
            np.testing.assert_array_equal(b.state.q, q_a)

    def test_alternating_pairs(self):
        p = RamaTorus2D()
        cvs = [raw_coordinate_cv(0, 2, periodic=True), raw_coordinate_cv(1, 2, periodic=True)]
        lps = [LangevinParams(seed=1), LangevinParams(seed=2)]
        wts = [WellTemperedParams(sigma=(0.3,), deposit_stride=50)] * 2
        result = run_bias_exchange(p, cvs, lps, wts, 1000, 100, [-2.5, 2.6], save_stride=10, seed=3)
        assert result.attempted.tolist() == [5]
        assert 0 <= result.accepted[0] <= 5
        assert len(result.trajectories) == 2
        assert [len(b) for b in result.biases] == [20, 20]

    def test_needs_two_replicas(self):
        with pytest.raises(InvalidArgumentError):
            run_bias_exchange(
                RamaTorus2D(), [raw_coordinate_cv(0, 2)], [LangevinParams()], [WellTemperedParams()], 10, 5, [0.0, 0.0]
            )

    def test_shared_temperature(self):
        cvs = [raw_coordinate_cv(0, 2), raw_coordinate_cv(1, 2)]
        lps = [LangevinParams(seed=1), LangevinParams(seed=2, temperature=2.0)]
        with pytest.raises(InvalidArgumentError):
            run_bias_exchange(RamaTorus2D(), cvs, lps, [WellTemperedParams()] * 2, 10, 5, [0.0, 0.0])


class TestTransitions:
    """Core-to-core transition counting"""

    def test_hysteresis(self):
        series = np.array([-1.0, 0.0, 1.0, 0.1, -1.0, -0.95, 1.0])
        counts = count_transitions(series, WELLS)
        assert counts.matrix.tolist() == [[0, 2], [1, 0]]
        assert counts.round_trips == 1
        assert counts.first_round_trip_step == 4
        assert counts.visits.tolist() == [2, 2]

    def test_leaving_without_arriving(self):
        counts = count_transitions(np.array([-1.0, 0.0, -1.0, 0.5]), WELLS)
        assert counts.total == 0
        assert counts.first_round_trip_step is None

    def test_periodic_cores(self):
        basins = [Basin((np.pi,), 0.3), Basin((0.0,), 0.3)]
        counts = count_transitions(np.array([-3.1, 0.1, 3.0]), basins, [2 * np.pi])
        assert counts.matrix.tolist() == [[0, 1], [1, 0]]

    def test_invalid_basins(self):
        with pytest.raises(InvalidArgumentError):
            count_transitions(np.zeros(3), WELLS[:1])
        with pytest.raises(InvalidArgumentError):
            count_transitions(np.zeros(3), [Basin((0.0,), 0.6), Basin((1.0,), 0.6)])
