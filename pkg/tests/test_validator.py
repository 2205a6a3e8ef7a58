from pathlib import Path

import pytest

from trapped_walks.errors import ConfigError
from trapped_walks.validator import ConfigValidator, build_config, load_config, read_config_file

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_law_that_does_not_sum_to_one_is_reported():
    payload = {"suite": "verify-analytics", "seed": 1, "law": {"pmf": {"0": 0.6, "2": 0.6}}}

    validator = ConfigValidator()
    errors, warnings = validator.validate(payload)

    assert errors == ["law > pmf: Offspring probabilities sum to 1.2, expected 1."]
    assert warnings == []


def test_schema_validation_catches_missing_seed():
    errors, warnings = ConfigValidator().validate({"suite": "speed", "traps": {"kind": "unit"}})

    assert any("seed" in error for error in errors)
    assert warnings == []


def test_unknown_keys_are_rejected():
    errors, _ = ConfigValidator().validate({"suite": "speed", "seed": 1, "law": "A", "temperature": 3})

    assert any("temperature" in error for error in errors)


def test_necessity_needs_an_infinite_second_moment():
    errors, _ = ConfigValidator().validate({"suite": "necessity", "seed": 1, "law": "A", "beta": 1.1})

    assert "beta: necessity needs beta^2*mu >= 1, got 0.968." in errors


def test_necessity_needs_a_finite_mean():
    errors, _ = ConfigValidator().validate({"suite": "necessity", "seed": 1, "law": "A", "beta": 1.3})

    assert any(error.startswith("beta: necessity needs beta*mu < 1") for error in errors)


def test_supercritical_law_is_rejected():
    errors, _ = ConfigValidator().validate({"suite": "speed", "seed": 1, "law": {"pmf": {"0": 0.2, "2": 0.8}}})

    assert any("not subcritical" in error for error in errors)


def test_hitting_suite_needs_a_level():
    payload = {"suite": "quenched-hitting", "seed": 1, "traps": {"kind": "exponential", "means": [0.5, 1.5], "weights": [0.5, 0.5]}, "beta": 2.0}

    errors, _ = ConfigValidator().validate(payload)

    assert errors == ["level: quenched-hitting needs a hitting level."]


def test_law_suites_need_a_law():
    errors, _ = ConfigValidator().validate({"suite": "einstein", "seed": 1, "traps": {"kind": "unit"}})

    assert "Suite 'einstein' needs an offspring law." in errors


def test_einstein_betas_must_stay_below_one_over_mu():
    errors, _ = ConfigValidator().validate({"suite": "einstein", "seed": 1, "law": "A", "betas": [1.05, 1.3]})

    assert errors == ["betas: 1.3 lies outside (1, 1.25)."]


def test_exponential_weights_must_sum_to_one():
    payload = {"suite": "speed", "seed": 1, "traps": {"kind": "exponential", "means": [1.0, 2.0], "weights": [0.5, 0.6]}}

    errors, _ = ConfigValidator().validate(payload)

    assert errors == ["traps > weights: weights sum to 1.1, expected 1."]


def test_matching_calibration_seed_only_warns():
    errors, warnings = ConfigValidator().validate({"suite": "speed", "seed": 5, "calibration_seed": 5, "law": "A"})

    assert errors == []
    assert len(warnings) == 1
    assert "calibration_seed" in warnings[0]


def test_build_config_applies_overrides():
    config = build_config({"suite": "speed", "seed": 1, "law": "A"}, {"seed": 9, "threads": None, "output": "out"})

    assert config.seed == 9
    assert config.threads == 1
    assert config.output == "out"


def test_build_config_raises_with_every_diagnostic():
    with pytest.raises(ConfigError) as info:
        build_config({"suite": "necessity", "seed": 1, "law": "A", "beta": 1.1})

    assert "necessity needs beta^2*mu" in str(info.value)
    assert info.value.diagnostics


def test_load_config_reads_toml_and_yaml(tmp_path):
    toml_path = tmp_path / "speed.toml"
    toml_path.write_text('suite = "speed"\nseed = 3\nlaw = "B"\nbeta = 1.05\n', encoding="utf-8")
    yaml_path = tmp_path / "speed.yaml"
    yaml_path.write_text("suite: speed\nseed: 3\nlaw: B\nbeta: 1.05\n", encoding="utf-8")

    assert load_config(toml_path) == load_config(yaml_path)
    assert load_config(toml_path).config_hash() == load_config(yaml_path).config_hash()


def test_unreadable_config_files(tmp_path):
    with pytest.raises(ConfigError, match="Cannot read config"):
        read_config_file(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("suite = \n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Cannot parse config"):
        read_config_file(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="must be a mapping"):
        read_config_file(listing)


def test_unknown_trap_name_is_reported():
    errors, _ = ConfigValidator().validate({"suite": "speed", "seed": 1, "traps": "pareto"})

    assert errors == ["traps: Unknown trap model 'pareto'. Known trap models: unit, two-point, exponential."]


def test_tree_window_mode_needs_a_law():
    errors, _ = ConfigValidator().validate(
        {"suite": "quenched-clt", "mode": "quenched-tree-position", "seed": 1, "traps": "two-point", "beta": 2.0}
    )

    assert "mode: quenched-tree-position needs an offspring law." in errors


def test_tree_window_mode_refuses_lattice_traps():
    errors, _ = ConfigValidator().validate(
        {"suite": "quenched-clt", "mode": "quenched-tree-position", "seed": 1, "law": "A", "traps": "unit", "beta": 1.1}
    )

    assert errors == ["traps: quenched-tree-position walks on trees, got unit traps."]


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda path: path.stem)
def test_shipped_configs_load(path):
    config = load_config(path)

    assert config.seed > 0
