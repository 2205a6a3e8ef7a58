from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from trapped_walks.offspring import (
    OffspringLaw,
    cross_moment_Zn_Zm,
    mean_Zn,
    second_moment_Zn,
    survival_probability,
)
from trapped_walks.rtrw import detect_regenerations
from trapped_walks.tree_walk import WalkKernel, gamblers_ruin, gamblers_win, transition_row
from trapped_walks.trees import RootedTree

weights = st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=5)
biases = st.floats(min_value=0.2, max_value=5.0)


def law_from(raw: list[float]) -> OffspringLaw:
    total = sum(raw)
    return OffspringLaw.from_pmf({k: w / total for k, w in enumerate(raw)})


@st.composite
def parent_arrays(draw: st.DrawFn, max_size: int = 30) -> list[int]:
    size = draw(st.integers(min_value=2, max_value=max_size))
    return [-1] + [draw(st.integers(min_value=0, max_value=i - 1)) for i in range(1, size)]


@given(raw=weights, n=st.integers(min_value=0, max_value=8))
def test_generation_mean_is_a_power_of_mu(raw, n):
    law = law_from(raw)
    assert mean_Zn(law, n) == pytest.approx(law.mean_mu**n, rel=1e-9, abs=1e-12)


@given(raw=weights, n=st.integers(min_value=1, max_value=6))
def test_diagonal_cross_moment_is_the_second_moment(raw, n):
    law = law_from(raw)
    assert cross_moment_Zn_Zm(law, n, n) == pytest.approx(second_moment_Zn(law, n), rel=1e-9)
    assert second_moment_Zn(law, n) >= mean_Zn(law, n) ** 2 * (1 - 1e-12)


@given(raw=weights)
def test_survival_never_increases(raw):
    law = law_from(raw)
    survival = [survival_probability(law, n) for n in range(12)]
    assert all(b <= a + 1e-15 for a, b in zip(survival, survival[1:]))


@settings(max_examples=50)
@given(parents=parent_arrays(), beta=biases)
def test_transition_rows_sum_to_one(parents, beta):
    kernel = WalkKernel(beta, RootedTree.from_parents(parents))
    for x in range(len(parents)):
        row = transition_row(kernel, x)
        assert sum(p for _, p in row) == pytest.approx(1.0)
        assert all(p > 0 for _, p in row)


@given(steps=st.lists(st.sampled_from([-1, 1]), max_size=60))
def test_regenerations_split_past_from_future(steps):
    path = [0]
    for step in steps:
        path.append(path[-1] + step)
    found = detect_regenerations(path, 0)
    expected = [m for m in range(1, len(path)) if max(path[:m]) < min(path[m:])]
    assert found == expected


@given(
    beta=st.floats(min_value=1.01, max_value=5.0),
    k=st.integers(min_value=-20, max_value=-1),
    n=st.integers(min_value=1, max_value=20),
)
def test_ruin_and_win_are_complementary(beta, k, n):
    ruin = gamblers_ruin(beta, k, n)
    assert 0.0 < ruin < 1.0
    assert ruin + gamblers_win(beta, k, n) == pytest.approx(1.0)
    assert gamblers_ruin(beta, k - 1, n) < ruin or math.isclose(gamblers_ruin(beta, k - 1, n), ruin)
