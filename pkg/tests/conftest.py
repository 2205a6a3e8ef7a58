import numpy as np
import pytest

from trapped_walks.offspring import OffspringLaw
from trapped_walks.streams import derive_stream


@pytest.fixture
def law_a() -> OffspringLaw:
    return OffspringLaw.from_pmf({0: 0.6, 2: 0.4}, name="A")


@pytest.fixture
def law_b() -> OffspringLaw:
    return OffspringLaw.from_pmf({0: 0.5, 1: 0.2, 2: 0.2, 3: 0.1}, name="B")


@pytest.fixture
def rng() -> np.random.Generator:
    return derive_stream(20240101, 0)
