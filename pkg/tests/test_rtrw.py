import math

import numpy as np
import pytest

from trapped_walks.errors import DomainError, TooFewBlocksError, WindowError
from trapped_walks.rtrw import (
    Environment,
    ExponentialTraps,
    RecordOptions,
    RegenerationBlock,
    TwoPointTraps,
    UnitTraps,
    blocks_to_csv,
    correction_sum_J,
    detect_regenerations,
    environment_to_json,
    hitting_centrings,
    quenched_centring_G,
    run_rtrw,
    sigma_sq_blocks,
    simulate_hitting_time,
    speed_formula,
)
from trapped_walks.streams import derive_stream

TWO_POINT = TwoPointTraps(1.0, 3.0, 0.5)


def test_speed_formula():
    assert speed_formula(2.0, 1.0) == pytest.approx(1 / 3)
    assert speed_formula(1.1, 9.730158730158730) == pytest.approx(0.0048940, abs=5e-8)
    assert speed_formula(1.0, 3.0) == 0.0
    with pytest.raises(DomainError):
        speed_formula(0.9, 1.0)
    with pytest.raises(DomainError):
        speed_formula(2.0, math.inf)


def test_zero_horizon_stays_at_the_origin(rng):
    trajectory = run_rtrw(Environment(UnitTraps(), seed=1), 2.0, 0.0, rng)
    assert trajectory.final_position == 0
    assert trajectory.blocks() == []


def test_unit_traps_speed(rng):
    horizon = 1000.0
    trajectory = run_rtrw(Environment(UnitTraps(), seed=1), 2.0, horizon, rng)
    tolerance = 4 * math.sqrt(8 / 9) / math.sqrt(horizon)
    assert abs(trajectory.final_position / horizon - 1 / 3) < tolerance


def test_two_point_traps_speed():
    horizon = 40_000.0
    estimates = []
    for replica in range(3):
        env = Environment(TWO_POINT, seed=100 + replica)
        estimates.append(run_rtrw(env, 1.5, horizon, derive_stream(5, replica)).final_position / horizon)
    assert abs(np.mean(estimates) - 0.1) < 0.025


def test_kept_path_matches_observations(rng):
    options = RecordOptions(keep_path=True, observe_times=(0.0, 50.0, 100.0))
    trajectory = run_rtrw(Environment(TWO_POINT, seed=3), 1.5, 100.0, rng, options)
    for t, position in trajectory.observations.items():
        assert trajectory.position_at(t) == position
    assert trajectory.position_at(100.0) == trajectory.final_position
    with pytest.raises(ValueError):
        trajectory.position_at(101.0)


def test_regeneration_detection():
    assert detect_regenerations(list(range(11)), 0) == list(range(1, 11))
    assert detect_regenerations(list(range(11)), 3) == list(range(1, 8))
    # level 1 is revisited at time 3, so time 4 is the first regeneration
    assert detect_regenerations([0, 1, 0, 1, 2, 3], 0) == [4, 5]
    assert detect_regenerations([0], 0) == []


def test_regeneration_blocks_tile_the_run(rng):
    trajectory = run_rtrw(Environment(UnitTraps(), seed=1), 2.0, 5000.0, rng)
    blocks = trajectory.blocks()
    assert len(blocks) > 100
    assert all(block.dx > 0 and block.dkappa > 0 for block in blocks)
    last = trajectory.regenerations[-1]
    assert sum(block.dx for block in blocks) == last.position
    assert blocks_to_csv([(0, blocks[:2])]).splitlines()[0] == "replica,kappa_index,dx,dt"


def test_block_variance_of_identical_blocks():
    blocks = [RegenerationBlock(dx=2, dt=3.0, dkappa=2)] * 5
    estimate = sigma_sq_blocks(blocks, mean_eta0=1.0, nu=0.5, rng=np.random.default_rng(0))
    assert estimate.value == pytest.approx(0.25 / 2)
    assert estimate.standard_error == pytest.approx(0.0)
    assert estimate.blocks_used == 4
    with pytest.raises(TooFewBlocksError):
        sigma_sq_blocks(blocks[:1], 1.0, 0.5)


def test_block_variance_of_unit_traps(rng):
    trajectory = run_rtrw(Environment(UnitTraps(), seed=2), 2.0, 50_000.0, rng)
    estimate = sigma_sq_blocks(trajectory.blocks(), 1.0, 1 / 3, rng)
    assert abs(estimate.value - 8 / 9) < 5 * estimate.standard_error


def test_environment_extension_is_stable():
    small = Environment(TWO_POINT, seed=11)
    small.ensure(0, 10)
    large = Environment(TWO_POINT, seed=11)
    large.ensure(-600, 600)
    np.testing.assert_array_equal(small.quenched_means(0, 11), large.quenched_means(0, 11))
    assert small.quenched_mean(-3) == large.quenched_mean(-3)


def test_fixed_window_refuses_to_grow():
    env = Environment.from_sites(TWO_POINT, [1.0, 3.0])
    with pytest.raises(WindowError):
        env.quenched_mean(5)


def test_quenched_centring():
    assert quenched_centring_G(Environment(UnitTraps(), seed=1), 2.0, 300.0, 1 / 3, 1.0) == pytest.approx(100.0)
    symmetric = Environment.from_sites(TWO_POINT, [1.0, 3.0, 3.0, 1.0])
    assert quenched_centring_G(symmetric, 1.5, 45.0, 0.1, 2.0) == pytest.approx(4.5)
    heavy = Environment.from_sites(TWO_POINT, [3.0, 3.0, 3.0, 3.0])
    assert quenched_centring_G(heavy, 1.5, 45.0, 0.1, 2.0) == pytest.approx(2.5)


def test_correction_sum():
    assert correction_sum_J(Environment(UnitTraps(), seed=1), 1000, 1.0) == 0.0
    assert correction_sum_J(Environment.from_sites(TWO_POINT, [1.0, 3.0, 3.0, 1.0]), 4, 2.0) == 0.0


def test_hitting_centrings_of_unit_traps():
    exact, surrogate = hitting_centrings(Environment(UnitTraps(), seed=1), 2.0, 1)
    assert surrogate == pytest.approx(3.0)
    assert exact == pytest.approx(3.0, abs=1e-12)


def test_hitting_time_mean_matches_centring():
    env = Environment(ExponentialTraps((0.5, 1.5), (0.5, 0.5)), seed=9)
    exact, _ = hitting_centrings(env, 2.0, 20)
    times = np.array([simulate_hitting_time(env, 2.0, 20, derive_stream(9, i)) for i in range(4000)])
    assert abs(times.mean() - exact) < 4 * times.std(ddof=1) / math.sqrt(times.size)


def test_environment_json():
    env = Environment.from_sites(TWO_POINT, [1.0, 3.0], origin=-1)
    payload = environment_to_json(env)
    assert payload["window"] == [-1, 1]
    assert payload["sites"] == {"-1": 1.0, "0": 3.0}
    assert payload["model"]["kind"] == "two-point"
