import math

import numpy as np
import pytest

from trapped_walks.errors import InvalidLawError
from trapped_walks.offspring import (
    OffspringLaw,
    cross_moment_bound,
    cross_moment_Zn_Zm,
    estimate_c_mu,
    expected_branch_size,
    expected_total_progeny,
    iterate_generating_function,
    mean_Zn,
    second_moment_Zn,
    size_biased,
    survival_probability,
    survival_ratio,
    survival_ratios,
    third_moment_Zn,
)


def test_law_a_moments(law_a):
    assert law_a.mean_mu == pytest.approx(0.8)
    assert law_a.var_sigma2 == pytest.approx(0.96)
    assert law_a.subcritical
    assert law_a.nontrivial


def test_generation_moments_of_law_a(law_a):
    assert mean_Zn(law_a, 0) == 1.0
    assert mean_Zn(law_a, 1) == pytest.approx(0.8)
    assert mean_Zn(law_a, 3) == pytest.approx(0.512)
    assert second_moment_Zn(law_a, 1) == pytest.approx(1.6)
    assert second_moment_Zn(law_a, 2) == pytest.approx(1.792)
    assert third_moment_Zn(law_a, 1) == pytest.approx(3.2)
    # 0.4 * E[(xi_1 + xi_2)^3] with xi in {0, 2}
    assert third_moment_Zn(law_a, 2) == pytest.approx(0.4 * (0.48 * 8 + 0.16 * 64))


def test_cross_moments(law_a):
    assert cross_moment_Zn_Zm(law_a, 1, 2) == pytest.approx(1.28)
    assert cross_moment_Zn_Zm(law_a, 2, 2) == pytest.approx(second_moment_Zn(law_a, 2))
    assert cross_moment_Zn_Zm(law_a, 1, 3) == pytest.approx(1.024)
    assert cross_moment_bound(law_a, 1) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        cross_moment_Zn_Zm(law_a, 3, 2)


def test_identity_law_has_unit_moments():
    line = OffspringLaw((0.0, 1.0))
    assert third_moment_Zn(line, 4) == pytest.approx(1.0)
    assert not line.subcritical


def test_survival(law_a):
    assert survival_probability(law_a, 0) == 1.0
    assert survival_probability(law_a, 1) == pytest.approx(0.4)
    assert survival_probability(law_a, 2) == pytest.approx(0.256)
    assert iterate_generating_function(law_a, 0.0, 2) == pytest.approx(0.744)
    assert survival_ratio(law_a, 2) == pytest.approx(0.256 / 0.64)


def test_survival_ratios_decrease_to_a_plateau(law_b):
    ratios = survival_ratios(law_b, 200)
    assert np.all(np.diff(ratios) <= 1e-12)
    c_mu, reached = estimate_c_mu(law_b)
    assert 0.0 < c_mu <= 1.0
    assert reached >= 2
    assert c_mu == pytest.approx(ratios[-1], rel=1e-3)


def test_size_biased_laws(law_a, law_b):
    assert size_biased(law_a).pmf == pytest.approx({2: 1.0})
    assert size_biased(law_b).pmf == pytest.approx({1: 2 / 9, 2: 4 / 9, 3: 3 / 9})
    assert size_biased(OffspringLaw((0.0, 1.0))).pmf == pytest.approx({1: 1.0})


def test_progeny_expectations(law_a):
    assert expected_total_progeny(law_a) == pytest.approx(5.0)
    # xi* = 2 under law A, so one bud of mean progeny 5
    assert expected_branch_size(law_a) == pytest.approx(5.0)


def test_sum_mismatch_is_reported_with_the_sum():
    with pytest.raises(InvalidLawError, match="sum to 1.2"):
        OffspringLaw.from_pmf({0: 0.6, 2: 0.6})


def test_negative_probability_is_rejected():
    with pytest.raises(InvalidLawError, match="Negative probability"):
        OffspringLaw.from_pmf({0: 1.1, 1: -0.1})


def test_json_payload_round_trip(law_b):
    again = OffspringLaw.from_json(law_b.to_json())
    assert again.probabilities == pytest.approx(law_b.probabilities)
    with pytest.raises(InvalidLawError, match="Invalid offspring law payload"):
        OffspringLaw.from_json({"pmf": {"-1": 1.0}})


def test_truncated_laws():
    geometric = OffspringLaw.truncated_geometric(0.4)
    assert geometric.mean_mu == pytest.approx(0.4 / 0.6, rel=1e-9)
    power = OffspringLaw.truncated_power_law(2.5, 200, 0.6)
    assert power.moment_is_finite(2)
    assert not power.moment_is_finite(3)
    assert power.subcritical


def test_sampling_matches_the_pmf(law_b, rng):
    draws = law_b.sample(rng, 200_000)
    freq = np.bincount(draws, minlength=4) / draws.size
    for k, p in law_b.pmf.items():
        se = math.sqrt(p * (1 - p) / draws.size)
        assert abs(freq[k] - p) < 5 * se
