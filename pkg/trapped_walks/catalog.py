from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .errors import ConfigError, InvalidLawError
from .models import ExperimentConfig, LawSpec, TrapSpec
from .offspring import OffspringLaw
from .rtrw import ExponentialTraps, TrapModel, TwoPointTraps, UnitTraps

DEFAULT_CATALOG_PATH = Path(__file__).resolve().parent / "data" / "catalog.json"


@dataclass
class CatalogEntry:
    name: str
    description: str
    payload: dict


class Catalog:
    """Named offspring laws and trap models shipped with the package."""

    def __init__(self, data_path: str | os.PathLike | None = None):
        path = Path(data_path) if data_path else DEFAULT_CATALOG_PATH
        with path.open("r", encoding="utf-8") as fh:
            raw = json.load(fh)
        self.laws: Dict[str, CatalogEntry] = {
            row["name"].lower(): CatalogEntry(row["name"], row.get("description", ""), row) for row in raw["laws"]
        }
        self.traps: Dict[str, CatalogEntry] = {
            row["name"].lower(): CatalogEntry(row["name"], row.get("description", ""), row) for row in raw["traps"]
        }

    def law_names(self) -> List[str]:
        return [entry.name for entry in self.laws.values()]

    def law(self, name: str) -> OffspringLaw:
        entry = self.laws.get(name.strip().lower())
        if entry is None:
            raise InvalidLawError(f"Unknown law '{name}'. Known laws: {', '.join(self.law_names())}.")
        row = entry.payload
        generator = row.get("generator")
        if generator == "geometric":
            return OffspringLaw.truncated_geometric(row["p"])
        if generator == "power":
            return OffspringLaw.truncated_power_law(row["alpha"], row["kmax"], row["zero_mass"])
        return OffspringLaw.from_json({"pmf": row["pmf"], "name": entry.name})

    def trap_names(self) -> List[str]:
        return [entry.name for entry in self.traps.values()]

    def trap_spec(self, name: str) -> TrapSpec:
        entry = self.traps.get(name.strip().lower())
        if entry is None:
            raise ConfigError(f"Unknown trap model '{name}'. Known trap models: {', '.join(self.trap_names())}.")
        return TrapSpec(**{k: v for k, v in entry.payload.items() if k not in {"name", "description"}})

    def trap_model(self, name: str) -> TrapModel:
        return trap_model_from_spec(self.trap_spec(name), law=None, beta=None)


def law_from_spec(spec: str | LawSpec, catalog: Optional[Catalog] = None) -> OffspringLaw:
    if isinstance(spec, str):
        return (catalog or Catalog()).law(spec)
    return OffspringLaw.from_json(spec.model_dump(exclude_none=True))


def trap_model_from_spec(spec: TrapSpec, law: Optional[OffspringLaw], beta: Optional[float]) -> TrapModel:
    if spec.kind == "unit":
        return UnitTraps()
    if spec.kind == "two-point":
        if spec.m1 is None or spec.m2 is None or spec.p is None:
            raise ConfigError("Two-point traps need m1, m2 and p")
        return TwoPointTraps(spec.m1, spec.m2, spec.p)
    if spec.kind == "exponential":
        if not spec.means or not spec.weights:
            raise ConfigError("Exponential traps need means and weights")
        return ExponentialTraps(tuple(spec.means), tuple(spec.weights))
    if law is None or beta is None:
        raise ConfigError("Tree traps need an offspring law and a bias")
    from .bridge import TreeExcursionTraps

    return TreeExcursionTraps(law, beta)


def law_from_config(config: ExperimentConfig, catalog: Optional[Catalog] = None) -> Optional[OffspringLaw]:
    return law_from_spec(config.law, catalog) if config.law is not None else None


def trap_spec_from_config(config: ExperimentConfig, catalog: Optional[Catalog] = None) -> Optional[TrapSpec]:
    """Inline trap spec of a config, with catalog names resolved."""
    if isinstance(config.traps, str):
        return (catalog or Catalog()).trap_spec(config.traps)
    return config.traps


def trap_model_from_config(config: ExperimentConfig, catalog: Optional[Catalog] = None) -> TrapModel:
    """Trap model of a config: explicit ``traps`` wins, a bare ``law`` means tree traps."""
    law = law_from_config(config, catalog)
    spec = trap_spec_from_config(config, catalog)
    if spec is not None:
        return trap_model_from_spec(spec, law, config.beta)
    if law is None:
        raise ConfigError("Config names neither traps nor an offspring law")
    return trap_model_from_spec(TrapSpec(kind="tree"), law, config.beta)
