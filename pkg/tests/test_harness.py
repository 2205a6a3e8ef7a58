import math

import numpy as np
import pytest
from scipy import special

from trapped_walks.errors import TooFewBlocksError, TooSmallSampleError
from trapped_walks.harness import (
    _position_worker,
    anderson_darling,
    clt_experiment,
    compare_to_expected,
    excursion_count_gof,
    fit_exponential_tail,
    geometric_mixture_pmf,
    half_normal_cdf,
    kolmogorov_survival,
    ks_size_calibration,
    ks_statistic,
    ks_test,
    lattice_jitter,
    majority_pass,
    normal_cdf,
    normal_quantile,
    replica_tasks,
    run_replicas,
    tree_centring_experiment,
    two_sample_ks,
)
from trapped_walks.models import ExperimentConfig
from trapped_walks.offspring import OffspringLaw
from trapped_walks.rtrw import UnitTraps
from trapped_walks.tree_walk import sample_excursions
from trapped_walks.trees import sample_branch_forest


def exact_normal_quantiles(n: int) -> np.ndarray:
    return normal_quantile((np.arange(1, n + 1) - 0.5) / n)


def test_normal_cdf_and_quantile():
    assert normal_cdf(0.0) == pytest.approx(0.5)
    assert normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-9)
    assert normal_cdf(-30.0) > 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959963985, abs=1e-8)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_half_normal_cdf():
    assert half_normal_cdf(-1.0) == 0.0
    assert half_normal_cdf(1.959963985) == pytest.approx(0.95, abs=1e-9)
    assert half_normal_cdf(2.0, scale=2.0) == pytest.approx(half_normal_cdf(1.0))


@pytest.mark.parametrize("y", [0.2, 0.5, 0.8, 1.0, 1.36, 2.0, 3.5])
def test_kolmogorov_survival_matches_scipy(y):
    assert kolmogorov_survival(y) == pytest.approx(float(special.kolmogorov(y)), abs=1e-12)


def test_ks_on_exact_quantiles():
    report = ks_test(exact_normal_quantiles(100), normal_cdf)
    assert report.statistic == pytest.approx(0.005)
    assert report.p_value == pytest.approx(1.0)
    assert report.passed


def test_ks_rejects_a_shift(rng):
    report = ks_test(rng.standard_normal(500) + 1.0, normal_cdf)
    assert report.p_value < 1e-6
    assert not report.passed


def test_ks_statistic_matches_brute_force(rng):
    sample = rng.standard_normal(60)
    statistic, n = ks_statistic(sample, normal_cdf)
    grid = np.sort(sample)
    brute = max(
        max(abs((i + 1) / n - normal_cdf(x)), abs(i / n - normal_cdf(x))) for i, x in enumerate(grid)
    )
    assert statistic == pytest.approx(brute)


def test_small_samples_are_refused():
    with pytest.raises(TooSmallSampleError):
        ks_test(np.zeros(10), normal_cdf)
    with pytest.raises(TooSmallSampleError):
        two_sample_ks(np.zeros(10), np.zeros(100))


def test_two_sample_ks(rng):
    assert two_sample_ks(rng.standard_normal(2000), rng.standard_normal(2000)).statistic < 0.1
    assert not two_sample_ks(rng.standard_normal(2000), rng.standard_normal(2000) + 0.5).passed


def test_anderson_darling():
    assert anderson_darling(exact_normal_quantiles(400), normal_cdf).passed
    assert not anderson_darling(exact_normal_quantiles(400) + 0.5, normal_cdf).passed


def test_compare_to_expected():
    record = compare_to_expected("ones", np.ones(10), 1.0)
    assert record.standard_error == 0.0
    assert record.passed
    assert not compare_to_expected("ones", np.ones(10), 2.0).passed
    with pytest.raises(TooSmallSampleError):
        compare_to_expected("empty", [], 1.0)


def test_majority_pass():
    assert majority_pass([True, False, True])
    assert not majority_pass([True, False, False])
    assert not majority_pass([])
    assert majority_pass([True, False], required=1)


def test_exponential_tail_of_halving_gaps():
    # counts 512, 256, ..., 1 at gaps 1..10, plus one extra at 10: P(G > g) = 2^-g
    gaps = np.concatenate([np.full(2 ** (10 - g), g) for g in range(1, 11)] + [[10]])
    fit = fit_exponential_tail(gaps)
    assert fit.rate == pytest.approx(math.log(2.0))
    assert fit.intercept == pytest.approx(0.0, abs=1e-10)
    assert fit.points == 9
    with pytest.raises(TooFewBlocksError):
        fit_exponential_tail([1, 1, 2, 3])


def test_lattice_jitter_stays_in_the_cell(rng):
    values = np.arange(1000, dtype=float) * 2
    jittered = lattice_jitter(values, 2.0, rng)
    assert np.all(np.abs(jittered - values) <= 1.0)
    assert not np.array_equal(jittered, values)


def test_replica_tasks_cover_every_replica():
    tasks = replica_tasks(3, 60, beta=2.0, horizon=10.0)
    assert [len(task.replica_ids) for task in tasks] == [25, 25, 10]
    assert sum((task.replica_ids for task in tasks), ()) == tuple(range(60))


@pytest.mark.asyncio
async def test_replicas_do_not_depend_on_worker_count():
    tasks = replica_tasks(11, 60, model=UnitTraps(), beta=2.0, horizon=200.0)
    inline = await run_replicas(_position_worker, tasks, threads=1)
    pooled = await run_replicas(_position_worker, tasks, threads=2)
    np.testing.assert_array_equal(inline, pooled)
    assert inline.shape == (60,)


def test_ks_size_calibration_runs():
    record = ks_size_calibration(5, repetitions=40, n=200)
    assert 0.0 <= record.estimate <= 1.0
    assert record.expected == 0.01
    assert ks_size_calibration(5, repetitions=40, n=200).estimate == record.estimate


@pytest.mark.slow
@pytest.mark.asyncio
async def test_annealed_unit_trap_clt():
    config = ExperimentConfig(
        suite="annealed-clt",
        seed=7,
        traps={"kind": "unit"},
        beta=2.0,
        horizon=2000.0,
        calibration_horizon=200_000.0,
        replicas=300,
    )
    outcome = await clt_experiment(config)
    assert outcome.mode == "annealed-position"
    assert outcome.centring == pytest.approx(2000.0 / 3)
    assert outcome.report.n == 300
    assert abs(outcome.standardized.mean()) < 0.5
    assert outcome.calibration.value == pytest.approx(8 / 9, rel=0.2)


def test_geometric_mixture_pmf():
    single = geometric_mixture_pmf(np.full(3, 0.25), 4)
    np.testing.assert_allclose(single, 0.75 * 0.25 ** np.arange(4))
    mixed = geometric_mixture_pmf(np.array([0.0, 0.5]), 3)
    np.testing.assert_allclose(mixed, [0.75, 0.125, 0.0625])


def test_excursion_count_gof_rejects_counts_without_returns(law_a, rng):
    forest = sample_branch_forest(law_a, 2000, rng)
    report = excursion_count_gof(forest, np.zeros(2000, dtype=np.int64), 1.1)
    assert not report.passed
    with pytest.raises(TooSmallSampleError):
        excursion_count_gof(forest, np.zeros(10, dtype=np.int64), 1.1)


@pytest.mark.slow
def test_excursion_counts_are_geometric(law_a, rng):
    forest = sample_branch_forest(law_a, 100_000, rng)
    returns = sample_excursions(forest, 1.1, rng).returns

    report = excursion_count_gof(forest, returns, 1.1)

    assert report.passed, report
    assert report.n == 100_000
    # p_ex = 1.1 / 3.2 for a single bud; N has mean p/(1-p) and sd sqrt(p)/(1-p)
    assert returns.mean() == pytest.approx(0.34375 / 0.65625, abs=4 * 0.893 / math.sqrt(100_000))


@pytest.mark.slow
@pytest.mark.asyncio
async def test_tree_centring_experiment_tracks_the_window_correction():
    law = OffspringLaw.from_pmf({0: 0.7, 1: 0.2, 2: 0.1})

    outcome = await tree_centring_experiment(law, 1.5, 4000, 200, 31, window_length=400, windows=8, walks_per_window=50)

    assert outcome.nu == pytest.approx(0.08)
    assert outcome.fixed.walks == 200
    assert len(outcome.reference) == 8
    assert outcome.record.expected == outcome.fixed.correction
    assert outcome.record.passed, outcome.record
    assert outcome.explained >= 0.5
    assert outcome.distances.shape == (200,)


@pytest.mark.asyncio
async def test_tree_centring_needs_reference_windows():
    law = OffspringLaw.from_pmf({0: 0.7, 1: 0.2, 2: 0.1})
    with pytest.raises(TooSmallSampleError):
        await tree_centring_experiment(law, 1.5, 100, 10, 31, windows=1)
