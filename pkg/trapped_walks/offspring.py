"""Finite offspring laws and exact Galton-Watson moment oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import jsonschema
import numpy as np

from .errors import InvalidLawError
from .schema import OFFSPRING_LAW_SCHEMA

NORMALIZATION_TOLERANCE = 1e-12
PAYLOAD_TOLERANCE = 1e-9

_law_validator = jsonschema.Draft202012Validator(OFFSPRING_LAW_SCHEMA)


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Finite-support offspring law p_k = probabilities[k].

    ``tail_exponent`` marks a truncation of a heavy-tailed law with
    P(xi > k) ~ k^-alpha; moments of order >= alpha are then treated as
    infinite by the regime checks even though the truncation itself is finite.
    """

    probabilities: Tuple[float, ...]
    tail_exponent: Optional[float] = None
    name: Optional[str] = None
    mean_mu: float = field(init=False)
    var_sigma2: float = field(init=False)
    fact2: float = field(init=False)
    fact3: float = field(init=False)
    m2: float = field(init=False)
    m3: float = field(init=False)
    _array: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidLawError("Offspring law needs at least one probability.")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidLawError("Offspring probabilities must be finite and non-negative.")
        total = float(probs.sum())
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise InvalidLawError(f"Offspring probabilities sum to {total!r}, expected 1.")
        if self.tail_exponent is not None and self.tail_exponent <= 0:
            raise InvalidLawError("Tail exponent must be positive.")

        k = np.arange(probs.size, dtype=float)
        mu = float(np.dot(k, probs))
        m2 = float(np.dot(k * k, probs))
        m3 = float(np.dot(k * k * k, probs))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in probs))
        object.__setattr__(self, "mean_mu", mu)
        object.__setattr__(self, "m2", m2)
        object.__setattr__(self, "m3", m3)
        object.__setattr__(self, "var_sigma2", m2 - mu * mu)
        object.__setattr__(self, "fact2", m2 - mu)
        object.__setattr__(self, "fact3", m3 - 3.0 * m2 + 2.0 * mu)
        probs.setflags(write=False)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_array", probs)
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def from_pmf(
        cls,
        pmf: Mapping[int, float],
        *,
        tail_exponent: Optional[float] = None,
        name: Optional[str] = None,
        tolerance: float = PAYLOAD_TOLERANCE,
    ) -> "OffspringLaw":
        if not pmf:
            raise InvalidLawError("Offspring pmf is empty.")
        support = {int(k): float(v) for k, v in pmf.items()}
        if min(support) < 0:
            raise InvalidLawError("Offspring counts must be non-negative.")
        negatives = sorted(k for k, v in support.items() if v < 0)
        if negatives:
            raise InvalidLawError(f"Negative probability for offspring count(s) {negatives}.")
        total = sum(support.values())
        if abs(total - 1.0) > tolerance:
            raise InvalidLawError(f"Offspring probabilities sum to {total:.12g}, expected 1.")
        probs = np.zeros(max(support) + 1)
        for k, v in support.items():
            probs[k] = v
        probs /= probs.sum()
        return cls(tuple(probs), tail_exponent=tail_exponent, name=name)

    @classmethod
    def from_json(cls, payload: Union[str, Mapping]) -> "OffspringLaw":
        data = json.loads(payload) if isinstance(payload, str) else dict(payload)
        errors = sorted(_law_validator.iter_errors(data), key=lambda e: list(e.path))
        if errors:
            messages = []
            for error in errors:
                path = " > ".join(str(item) for item in error.path)
                messages.append(f"{path}: {error.message}" if path else error.message)
            raise InvalidLawError("Invalid offspring law payload: " + "; ".join(messages))
        pmf = {int(k): v for k, v in data["pmf"].items()}
        return cls.from_pmf(pmf, tail_exponent=data.get("tail_exponent"), name=data.get("name"))

    @classmethod
    def truncated_geometric(cls, p: float, tol: float = NORMALIZATION_TOLERANCE) -> "OffspringLaw":
        """Geometric law P(xi=k) = (1-p) p^k cut where the tail mass drops below ``tol``."""
        if not 0.0 < p < 1.0:
            raise InvalidLawError("Geometric parameter must lie in (0, 1).")
        cutoff = max(1, math.ceil(math.log(tol) / math.log(p)))
        k = np.arange(cutoff + 1)
        probs = (1.0 - p) * p**k
        probs /= probs.sum()
        return cls(tuple(probs), name=f"geometric({p})")

    @classmethod
    def truncated_power_law(cls, alpha: float, kmax: int, zero_mass: float) -> "OffspringLaw":
        """P(xi=k) proportional to k^-(alpha+1) on 1..kmax, plus an atom at 0."""
        if alpha <= 0 or kmax < 2 or not 0.0 < zero_mass < 1.0:
            raise InvalidLawError("Power law needs alpha > 0, kmax >= 2 and zero mass in (0, 1).")
        k = np.arange(1, kmax + 1, dtype=float)
        weights = k ** (-(alpha + 1.0))
        probs = np.concatenate([[zero_mass], (1.0 - zero_mass) * weights / weights.sum()])
        return cls(tuple(probs), tail_exponent=alpha, name=f"power({alpha},{kmax})")

    @property
    def pmf(self) -> Dict[int, float]:
        return {k: p for k, p in enumerate(self.probabilities) if p > 0}

    @property
    def max_offspring(self) -> int:
        return len(self.probabilities) - 1

    @property
    def subcritical(self) -> bool:
        return self.mean_mu < 1.0

    @property
    def nontrivial(self) -> bool:
        return any(p > 0 for p in self.probabilities[2:])

    def moment_is_finite(self, order: float) -> bool:
        return self.tail_exponent is None or order < self.tail_exponent

    def as_array(self) -> np.ndarray:
        return self._array

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. offspring counts."""
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        draws = np.searchsorted(self._cdf, rng.random(size), side="right")
        return np.minimum(draws, self.max_offspring).astype(np.int64)

    def to_json(self) -> dict:
        payload: dict = {"pmf": {str(k): p for k, p in self.pmf.items()}}
        if self.tail_exponent is not None:
            payload["tail_exponent"] = self.tail_exponent
        if self.name:
            payload["name"] = self.name
        return payload


@dataclass(frozen=True, eq=False)
class SizeBiasedLaw:
    """P(xi* = k) = k p_k / mu."""

    probabilities: Tuple[float, ...]
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.size and probs[0] != 0.0:
            raise InvalidLawError("Size-biased law cannot charge zero.")
        if abs(float(probs.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise InvalidLawError("Size-biased probabilities do not sum to 1.")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def pmf(self) -> Dict[int, float]:
        return {k: p for k, p in enumerate(self.probabilities) if p > 0}

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probabilities)), self.probabilities))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        draws = np.searchsorted(self._cdf, rng.random(size), side="right")
        return np.minimum(draws, len(self.probabilities) - 1).astype(np.int64)


def size_biased(law: OffspringLaw) -> SizeBiasedLaw:
    if law.mean_mu == 0.0:
        raise InvalidLawError("Size-biased law undefined for mean zero.")
    probs = law.as_array() * np.arange(len(law.probabilities)) / law.mean_mu
    probs = probs / probs.sum()
    return SizeBiasedLaw(tuple(float(p) for p in probs))


def generating_function(law: OffspringLaw, s: float) -> float:
    return float(np.polynomial.polynomial.polyval(s, law.as_array()))


def iterate_generating_function(law: OffspringLaw, s: float, n: int) -> float:
    """f_n(s), the n-fold composition of f."""
    value = s
    for _ in range(n):
        value = generating_function(law, value)
    return value


def mean_Zn(law: OffspringLaw, n: int) -> float:
    if n < 0:
        raise ValueError("Generation index must be non-negative.")
    return law.mean_mu**n


def _second_factorial_moments(law: OffspringLaw, n: int) -> List[float]:
    # f''_{k+1}(1) = f''(1) mu^{2k} + mu f''_k(1)
    mu = law.mean_mu
    values = [0.0, law.fact2]
    for k in range(1, n):
        values.append(law.fact2 * mu ** (2 * k) + mu * values[k])
    return values


def second_moment_Zn(law: OffspringLaw, n: int) -> float:
    if n < 1:
        raise ValueError("Generation index must be at least 1.")
    return _second_factorial_moments(law, n)[n] + law.mean_mu**n


def third_moment_Zn(law: OffspringLaw, n: int) -> float:
    if n < 1:
        raise ValueError("Generation index must be at least 1.")
    mu = law.mean_mu
    second = _second_factorial_moments(law, n)
    third = [0.0, law.fact3]
    for k in range(1, n):
        third.append(3.0 * law.fact2 * mu**k * second[k] + mu ** (3 * k) * law.fact3 + mu * third[k])
    return third[n] + 3.0 * second[n] + mu**n


def cross_moment_Zn_Zm(law: OffspringLaw, n: int, m: int) -> float:
    if not 1 <= n <= m:
        raise ValueError("Cross moment needs 1 <= n <= m.")
    return law.mean_mu ** (m - n) * second_moment_Zn(law, n)


def cross_moment_bound(law: OffspringLaw, n: int) -> float:
    """Constant C with E[Z_n Z_m] <= C mu^m for every m >= n."""
    return second_moment_Zn(law, n) / law.mean_mu**n


def survival_probability(law: OffspringLaw, n: int) -> float:
    if n < 0:
        raise ValueError("Generation index must be non-negative.")
    return 1.0 - iterate_generating_function(law, 0.0, n)


def survival_ratio(law: OffspringLaw, n: int) -> float:
    """P(Z_n > 0) / mu^n, non-increasing in n."""
    if law.mean_mu == 0.0:
        raise InvalidLawError("Survival ratio undefined for mean zero.")
    return survival_probability(law, n) / law.mean_mu**n


def survival_ratios(law: OffspringLaw, n_max: int) -> np.ndarray:
    if law.mean_mu == 0.0:
        raise InvalidLawError("Survival ratio undefined for mean zero.")
    ratios = np.empty(n_max + 1)
    s = 0.0
    for n in range(n_max + 1):
        ratios[n] = (1.0 - s) / law.mean_mu**n
        s = generating_function(law, s)
    return ratios


def estimate_c_mu(law: OffspringLaw, tol: float = 1e-6, max_generations: int = 100_000) -> Tuple[float, int]:
    """Plateau estimate of lim P(Z_n > 0)/mu^n; returns (estimate, generation reached)."""
    if not law.subcritical or law.mean_mu == 0.0:
        raise InvalidLawError("Plateau estimate needs 0 < mu < 1.")
    s = generating_function(law, 0.0)
    previous = 1.0 - s
    mu_power = law.mean_mu
    ratio = previous / mu_power
    for n in range(2, max_generations + 1):
        s = generating_function(law, s)
        mu_power *= law.mean_mu
        current = (1.0 - s) / mu_power
        if abs(current - ratio) < tol:
            return current, n
        ratio = current
    return ratio, max_generations


def expected_total_progeny(law: OffspringLaw) -> float:
    if not law.subcritical:
        return math.inf
    return 1.0 / (1.0 - law.mean_mu)


def expected_branch_size(law: OffspringLaw) -> float:
    """Mean vertex count hanging off one spine vertex: E[xi* - 1] / (1 - mu)."""
    return (size_biased(law).mean - 1.0) * expected_total_progeny(law)
