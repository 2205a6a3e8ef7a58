from __future__ import annotations

import logging
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import jsonschema
import yaml
from jsonschema.exceptions import ValidationError as SchemaError
from pydantic import ValidationError

from .catalog import Catalog, law_from_config, trap_spec_from_config
from .errors import ConfigError, LabError
from .models import ExperimentConfig, TrapSpec
from .schema import EXPERIMENT_CONFIG_SCHEMA

logger = logging.getLogger(__name__)

LAW_SUITES = {"verify-analytics", "einstein", "coupling", "necessity"}
CLT_SUITES = {"annealed-clt", "quenched-clt", "quenched-hitting"}


class ConfigValidator:
    """Validates experiment configs against the schema and the suite rules."""

    def __init__(self, catalog: Optional[Catalog] = None):
        self._validator = jsonschema.Draft202012Validator(EXPERIMENT_CONFIG_SCHEMA)
        self.catalog = catalog or Catalog()

    def validate(self, payload: dict) -> Tuple[List[str], List[str]]:
        errors = [self._format_error(error) for error in self._validator.iter_errors(payload)]
        warnings: List[str] = []
        if errors:
            return errors, warnings

        try:
            config = ExperimentConfig.model_validate(payload)
        except ValidationError as exc:
            return [self._format_pydantic(item) for item in exc.errors()], warnings
        return self._cross_field_rules(config)

    def _cross_field_rules(self, config: ExperimentConfig) -> Tuple[List[str], List[str]]:
        errors: List[str] = []
        warnings: List[str] = []

        law = None
        if config.law is not None:
            try:
                law = law_from_config(config, self.catalog)
            except LabError as exc:
                where = "law" if isinstance(config.law, str) else "law > pmf"
                errors.append(f"{where}: {exc}")
        if law is not None and not law.subcritical:
            errors.append(f"law: mean offspring {law.mean_mu:.6g} is not subcritical (need mu < 1).")
            law = None

        traps = None
        try:
            traps = trap_spec_from_config(config, self.catalog)
        except LabError as exc:
            errors.append(f"traps: {exc}")

        if config.suite in LAW_SUITES and config.law is None:
            errors.append(f"Suite '{config.suite}' needs an offspring law.")
        if config.suite not in LAW_SUITES and config.law is None and config.traps is None:
            errors.append(f"Suite '{config.suite}' needs either traps or an offspring law.")
        if traps is not None and traps.kind == "tree" and config.law is None:
            errors.append("traps: tree traps need an offspring law.")
        if traps is not None:
            errors.extend(self._trap_rules(traps))

        if config.calibration_seed is not None and config.calibration_seed == config.seed:
            warnings.append("calibration_seed equals seed; calibration runs on its own stream namespace anyway.")

        if config.suite in CLT_SUITES:
            if config.beta <= 1:
                errors.append(f"beta: CLT suites need beta > 1, got {config.beta}.")
            if config.resolved_mode == "quenched-hitting" and config.level is None:
                errors.append("level: quenched-hitting needs a hitting level.")
            if config.resolved_mode == "quenched-tree-position":
                if config.law is None:
                    errors.append("mode: quenched-tree-position needs an offspring law.")
                elif traps is not None and traps.kind != "tree":
                    errors.append(f"traps: quenched-tree-position walks on trees, got {traps.kind} traps.")
            if config.replicas < 50:
                errors.append("replicas: the KS test needs at least 50 replicas.")
        if config.suite == "speed" and config.beta < 1:
            errors.append(f"beta: the speed suite needs beta >= 1, got {config.beta}.")

        if law is not None:
            beta_mu = config.beta * law.mean_mu
            if config.suite == "necessity":
                if config.beta**2 * law.mean_mu < 1:
                    errors.append(f"beta: necessity needs beta^2*mu >= 1, got {config.beta**2 * law.mean_mu:.6g}.")
                if beta_mu >= 1:
                    errors.append(f"beta: necessity needs beta*mu < 1, got {beta_mu:.6g}.")
                if config.control_beta is not None and config.control_beta**2 * law.mean_mu >= 1:
                    errors.append("control_beta: the control run needs beta^2*mu < 1.")
            elif beta_mu >= 1 and config.suite in {"speed", "coupling"} | CLT_SUITES:
                warnings.append(f"beta*mu = {beta_mu:.6g} >= 1: the walk is sub-ballistic and its speed is 0.")
            elif config.suite == "annealed-clt" and config.beta**2 * law.mean_mu >= 1:
                warnings.append("beta^2*mu >= 1: holding times have infinite variance, the annealed CLT need not hold.")
            if config.suite == "einstein":
                upper = 1.0 / law.mean_mu
                for beta in config.betas:
                    if not 1.0 < beta < upper:
                        errors.append(f"betas: {beta} lies outside (1, {upper:.6g}).")
                if not config.betas:
                    warnings.append("betas is empty; the Einstein table will have no rows.")
        return errors, warnings

    @staticmethod
    def _trap_rules(traps: TrapSpec) -> List[str]:
        errors: List[str] = []
        if traps.kind == "two-point" and (traps.m1 is None or traps.m2 is None or traps.p is None):
            errors.append("traps: two-point traps need m1, m2 and p.")
        if traps.kind == "exponential":
            if not traps.means or not traps.weights or len(traps.means) != len(traps.weights):
                errors.append("traps: exponential traps need means and weights of equal length.")
            elif abs(sum(traps.weights) - 1.0) > 1e-9:
                errors.append(f"traps > weights: weights sum to {sum(traps.weights):.12g}, expected 1.")
        return errors

    @staticmethod
    def _format_error(error: SchemaError) -> str:
        path = " > ".join(str(item) for item in error.path)
        return f"{path}: {error.message}" if path else error.message

    @staticmethod
    def _format_pydantic(item: Dict[str, Any]) -> str:
        path = " > ".join(str(part) for part in item.get("loc", ()))
        return f"{path}: {item.get('msg')}" if path else str(item.get("msg"))


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}", [str(exc)]) from exc
    try:
        if path.suffix.lower() in {".yaml", ".yml"}:
            data = yaml.safe_load(text)
        else:
            data = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot parse config {path}", [str(exc)]) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a mapping.")
    return data


def build_config(
    payload: Mapping[str, Any],
    overrides: Optional[Mapping[str, Any]] = None,
    validator: Optional[ConfigValidator] = None,
) -> ExperimentConfig:
    merged = dict(payload)
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    validator = validator or ConfigValidator()
    errors, warnings = validator.validate(merged)
    for warning in warnings:
        logger.warning(warning)
    if errors:
        raise ConfigError("Invalid experiment config", errors)
    return ExperimentConfig.model_validate(merged)


def load_config(path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    return build_config(read_config_file(path), overrides)
