import math

import numpy as np
import pytest

from trapped_walks.errors import DegenerateTreeError, DomainError, SingularSystemError
from trapped_walks.trees import ANCESTOR, BranchTree, RootedTree, sample_gw_tree
from trapped_walks.tree_walk import (
    KernelMode,
    WalkKernel,
    branching_escape_limit,
    branching_escape_probability,
    excursion_probability,
    expected_hitting_time,
    expected_local_time,
    expected_local_times,
    expected_return_time_formula,
    gamblers_ruin,
    gamblers_win,
    hitting_probability,
    mean_excursion_count,
    sample_excursions,
    sample_return_visits,
    second_moment_return_time,
    segment_absorption_probability,
    segment_local_times,
    simulate_excursion,
    simulate_segment_walks,
    transition_row,
    transition_rows_csv,
    visit_covariance_exact,
    visit_product_bound,
    visit_product_matrix,
)

PATH_RAB = RootedTree.from_parents([-1, 0, 1])
CHERRY = RootedTree.from_parents([-1, 0, 0])


def stick(length: int) -> BranchTree:
    return BranchTree(RootedTree.from_parents([-1] + list(range(length - 1))))


def test_kernel_rows():
    assert dict(transition_row(WalkKernel(2.0, CHERRY), 0)) == pytest.approx({1: 0.5, 2: 0.5})
    assert dict(transition_row(WalkKernel(2.0, PATH_RAB), 1)) == pytest.approx({0: 1 / 3, 2: 2 / 3})
    absorbing = WalkKernel(2.0, stick(2))
    assert absorbing.mode is KernelMode.ANCESTOR_ABSORBING
    assert dict(transition_row(absorbing, 0)) == pytest.approx({ANCESTOR: 3 / 5, 1: 2 / 5})
    assert dict(transition_row(absorbing, ANCESTOR)) == {ANCESTOR: 1.0}


def test_rows_csv_lists_every_transition():
    lines = transition_rows_csv(WalkKernel(2.0, stick(2))).splitlines()
    assert lines[0] == "vertex,target,probability"
    assert "ancestor,ancestor,1.0" in lines
    assert len(lines) == 1 + 2 + 1 + 1


def test_single_vertex_tree_has_no_walk():
    with pytest.raises(DegenerateTreeError):
        transition_row(WalkKernel(2.0, RootedTree.from_parents([-1])), 0)


def test_excursions_on_small_traps(rng):
    assert sample_excursions(stick(1), 1.1, rng, size=1000).times.tolist() == [1] * 1000
    assert simulate_excursion(stick(1), 1.1, rng) == 1

    sample = sample_excursions(stick(2), 1.1, rng, size=200_000).times
    exact = (3 * 1.1 + 1) / (1.1 + 1)
    assert abs(sample.mean() - exact) < 4 * sample.std(ddof=1) / math.sqrt(sample.size)
    assert np.all(sample % 2 == 1)


def test_expected_hitting_times():
    kernel = WalkKernel(1.1, stick(2))
    assert expected_hitting_time(kernel, 0, ANCESTOR) == pytest.approx(2.047619047619)
    assert expected_hitting_time(kernel, 1, 1) == 0.0
    path = WalkKernel(2.0, PATH_RAB)
    assert expected_hitting_time(path, 0, 0, return_time=True) == pytest.approx(6.0)
    assert expected_hitting_time(path, 1, 0) == pytest.approx(5.0)


def test_unreachable_target_is_singular():
    with pytest.raises(SingularSystemError):
        expected_hitting_time(WalkKernel(2.0, stick(2)), ANCESTOR, 0)


def test_return_time_formula():
    assert expected_return_time_formula(PATH_RAB, 2.0) == pytest.approx(6.0)
    assert expected_return_time_formula(CHERRY, 3.7) == pytest.approx(2.0)
    with pytest.raises(DegenerateTreeError):
        expected_return_time_formula(RootedTree.from_parents([-1]), 2.0)


def test_return_time_formula_matches_solve_on_sampled_trees(law_a, rng):
    checked = 0
    while checked < 100:
        tree = sample_gw_tree(law_a, rng)
        if tree.num_children(0) == 0:
            continue
        kernel = WalkKernel(1.1, tree)
        solved = expected_hitting_time(kernel, 0, 0, return_time=True)
        assert expected_return_time_formula(tree, 1.1) == pytest.approx(solved, rel=1e-8)
        checked += 1


def test_gamblers_ruin():
    assert gamblers_ruin(2.0, -1, 1) == pytest.approx(1 / 3)
    assert gamblers_ruin(2.0, -2, 2) == pytest.approx(0.2)
    assert segment_absorption_probability(2.0, -2, 2) == pytest.approx(0.2, abs=1e-12)
    assert gamblers_ruin(2.0, -3, 5) + gamblers_win(2.0, -3, 5) == pytest.approx(1.0)
    values = [gamblers_ruin(1.5, k, 4) for k in range(-1, -30, -1)]
    assert all(b < a for a, b in zip(values, values[1:]))
    with pytest.raises(DomainError):
        gamblers_ruin(1.0, -1, 1)
    with pytest.raises(DomainError):
        gamblers_ruin(2.0, 1, 3)


def test_local_times():
    assert expected_local_time(2.0, 0, 1) == pytest.approx(1.5)
    assert expected_local_time(2.0, -1, 1) == pytest.approx(0.75)
    assert expected_local_time(2.0, 1, 2) == pytest.approx(1.5)
    with pytest.raises(DomainError):
        expected_local_time(2.0, 3, 3)

    sites, visits = segment_local_times(2.0, -70, 6)
    keep = sites >= -10
    np.testing.assert_allclose(visits[keep], expected_local_times(2.0, sites[keep], 6), rtol=1e-10)


def test_segment_walks(rng):
    _, at_zero = simulate_segment_walks(2.0, 1, -60, rng, 100_000)
    assert abs(at_zero.mean() - 1.5) < 4 * at_zero.std(ddof=1) / math.sqrt(at_zero.size)
    hit, _ = simulate_segment_walks(2.0, 2, -2, rng, 100_000)
    lost = (~hit).mean()
    assert abs(lost - 0.2) < 4 * math.sqrt(0.2 * 0.8 / 100_000)


def test_branching_escape_probability():
    assert branching_escape_probability(2.0, 1, 2, 2) == pytest.approx(0.2)
    assert branching_escape_probability(2.0, 1, 2, 3) == pytest.approx(3 / 13)
    tree = RootedTree.from_parents([-1, 0, 1, 1, 3])
    solved = hitting_probability(WalkKernel(2.0, tree), 1, [0], [2, 4])
    assert solved == pytest.approx(3 / 13, abs=1e-10)
    assert branching_escape_probability(2.0, 1, 30, 30) == pytest.approx(branching_escape_limit(2.0, 1), abs=1e-8)
    with pytest.raises(DomainError):
        branching_escape_probability(2.0, 2, 2, 3)


def test_visit_products():
    leaf = RootedTree.from_parents([-1, 0])
    assert visit_covariance_exact(leaf, 2.0, 1, 1) == pytest.approx(1.0)
    products = visit_product_matrix(PATH_RAB, 2.0)
    assert products[0, 0] == 1.0
    assert products.sum() == pytest.approx(second_moment_return_time(PATH_RAB, 2.0), rel=1e-10)
    assert np.allclose(products, products.T)


def test_visit_products_against_monte_carlo(rng):
    products = visit_product_matrix(PATH_RAB, 2.0)
    times, visits = sample_return_visits(PATH_RAB, 2.0, rng, 100_000)
    pair = visits[:, 1] * visits[:, 2]
    assert abs(pair.mean() - products[1, 2]) < 4 * pair.std(ddof=1) / math.sqrt(pair.size)
    assert abs(times.mean() - 6.0) < 4 * times.std(ddof=1) / math.sqrt(times.size)


def test_visit_product_bounds_hold(law_a, rng):
    seen = 0
    while seen < 30:
        tree = sample_gw_tree(law_a, rng)
        if tree.num_children(0) == 0 or tree.size > 60:
            continue
        products = visit_product_matrix(tree, 2.0)
        for x in range(tree.size):
            for y in range(tree.size):
                case, bound = visit_product_bound(tree, 2.0, x, y)
                assert products[x, y] <= bound + 1e-12, case
        seen += 1


def test_excursion_count_identity():
    p = excursion_probability(2, 1.5)
    assert mean_excursion_count(2, 1.5) == pytest.approx(p / (1 - p))
