import pytest

from trapped_walks.bridge import TreeExcursionTraps
from trapped_walks.catalog import Catalog, trap_model_from_config
from trapped_walks.errors import ConfigError, InvalidLawError
from trapped_walks.models import ExperimentConfig
from trapped_walks.rtrw import TwoPointTraps, UnitTraps


@pytest.fixture(scope="module")
def catalog() -> Catalog:
    return Catalog()


def test_catalog_names(catalog):
    assert catalog.law_names() == ["A", "B", "geometric", "power-tail"]


def test_lookup_ignores_case(catalog):
    assert catalog.law("a").mean_mu == pytest.approx(0.8)
    assert catalog.law(" B ").mean_mu == pytest.approx(0.9)


def test_unknown_law(catalog):
    with pytest.raises(InvalidLawError, match="Known laws: A, B"):
        catalog.law("C")


def test_generated_laws(catalog):
    assert catalog.law("geometric").mean_mu == pytest.approx(0.4 / 0.6, rel=1e-9)
    power = catalog.law("power-tail")
    assert power.moment_is_finite(2)
    assert not power.moment_is_finite(3)


def test_trap_models(catalog):
    two_point = catalog.trap_model("two-point")
    assert isinstance(two_point, TwoPointTraps)
    assert two_point.annealed_mean == pytest.approx(2.0)
    assert isinstance(catalog.trap_model("Unit"), UnitTraps)
    with pytest.raises(ConfigError):
        catalog.trap_model("pareto")


def test_trap_model_from_config(catalog):
    bare_law = ExperimentConfig(suite="speed", seed=1, law="A", beta=1.1)
    model = trap_model_from_config(bare_law, catalog)
    assert isinstance(model, TreeExcursionTraps)
    assert model.annealed_mean == pytest.approx(1.9616 / 0.2016)

    explicit = ExperimentConfig(suite="speed", seed=1, law="A", traps={"kind": "unit"})
    assert isinstance(trap_model_from_config(explicit, catalog), UnitTraps)

    with pytest.raises(ConfigError):
        trap_model_from_config(ExperimentConfig(suite="speed", seed=1), catalog)
    with pytest.raises(ConfigError, match="m1, m2 and p"):
        trap_model_from_config(ExperimentConfig(suite="speed", seed=1, traps={"kind": "two-point"}), catalog)


def test_named_trap_models_resolve_from_config(catalog):
    config = ExperimentConfig(suite="quenched-clt", seed=1, traps="Two-Point", beta=2.0)
    model = trap_model_from_config(config, catalog)
    assert isinstance(model, TwoPointTraps)
    assert (model.m1, model.m2, model.p) == (1.0, 3.0, 0.5)
    assert catalog.trap_names() == ["unit", "two-point", "exponential"]
    with pytest.raises(ConfigError, match="Known trap models: unit, two-point, exponential"):
        trap_model_from_config(ExperimentConfig(suite="speed", seed=1, traps="pareto"), catalog)
