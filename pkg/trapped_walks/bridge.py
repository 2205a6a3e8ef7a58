"""Biased walk on the conditioned subcritical tree seen as a trapped walk on Z."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .errors import DegenerateLawError, DomainError, InvalidLawError
from .offspring import OffspringLaw, size_biased
from .rtrw import Environment, TrapModel
from .streams import child_seed
from .tree_walk import WalkKernel, expected_hitting_time, sample_excursions
from .trees import ANCESTOR, BranchTree, KestenWindow, sample_branch_forest, sample_branch_tree, to_edge_list

logger = logging.getLogger(__name__)

PROBE_BATCH = 100_000
UNIFORM_CHUNK = 1 << 16
# Second-moment probes cap each squared holding time at TRUNCATION_FACTOR^2 * sample size.
TRUNCATION_FACTOR = 30.0


def _require_subcritical(law: OffspringLaw) -> None:
    if not law.subcritical:
        raise InvalidLawError(f"Offspring law is not subcritical (mu = {law.mean_mu}).")


def _trap_denominator(law: OffspringLaw, beta: float) -> float:
    mu, var = law.mean_mu, law.var_sigma2
    return mu * (beta + 1.0) * (1.0 - beta * mu) + 2.0 * beta * (var - mu * (1.0 - mu))


def expected_eta0(law: OffspringLaw, beta: float) -> float:
    """Annealed mean excursion time of W in a fresh trap; math.inf once beta*mu >= 1."""
    _require_subcritical(law)
    if beta < 1:
        raise DomainError(f"Mean trap time is stated for beta >= 1, got {beta}.")
    mu = law.mean_mu
    if beta * mu >= 1.0 or not law.moment_is_finite(2):
        return math.inf
    return _trap_denominator(law, beta) / (mu * (beta + 1.0) * (1.0 - beta * mu))


def tree_speed(law: OffspringLaw, beta: float) -> float:
    _require_subcritical(law)
    if not beta > 1:
        raise DomainError(f"Tree speed needs beta > 1, got {beta}.")
    mu = law.mean_mu
    if beta * mu >= 1.0 or not law.moment_is_finite(2):
        logger.warning("beta*mu = %.4g >= 1 or infinite variance: walk is sub-ballistic, speed 0", beta * mu)
        return 0.0
    return mu * (beta - 1.0) * (1.0 - beta * mu) / _trap_denominator(law, beta)


def einstein_limit(law: OffspringLaw) -> float:
    if law.var_sigma2 <= 0.0:
        raise DegenerateLawError("Einstein limit needs a positive offspring variance.")
    return law.mean_mu * (1.0 - law.mean_mu) / (2.0 * law.var_sigma2)


def expected_excursion_count(law: OffspringLaw, beta: float) -> float:
    """E[N], the mean number of trap excursions before W is absorbed."""
    mu = law.mean_mu
    return beta * (law.var_sigma2 - mu * (1.0 - mu)) / ((beta + 1.0) * mu)


def mean_trap_bound(law: OffspringLaw, beta: float) -> float:
    """Upper bound 2 + 2 beta E[xi* - 1] / (1 - beta mu) on the mean trap time."""
    if beta * law.mean_mu >= 1.0:
        return math.inf
    return 2.0 + 2.0 * beta * (size_biased(law).mean - 1.0) / (1.0 - beta * law.mean_mu)


@dataclass(frozen=True)
class RegimeReport:
    beta: float
    delta: float
    beta_mu: float
    beta_sq_mu: float
    ballistic: bool
    annealed_clt: bool
    quenched_clt: bool
    necessity_violation: bool


def regime(law: OffspringLaw, beta: float, delta: float = 0.5) -> RegimeReport:
    if not beta > 1:
        raise DomainError(f"Regime classification needs beta > 1, got {beta}.")
    mu = law.mean_mu
    ballistic = beta * mu < 1.0 and law.moment_is_finite(2)
    annealed = beta * beta * mu < 1.0 and law.moment_is_finite(3)
    return RegimeReport(
        beta=beta,
        delta=delta,
        beta_mu=beta * mu,
        beta_sq_mu=beta * beta * mu,
        ballistic=ballistic,
        annealed_clt=annealed,
        quenched_clt=annealed and law.moment_is_finite(3.0 + delta),
        necessity_violation=not annealed,
    )


def format_regime_table(report: RegimeReport) -> str:
    rows = [
        ("beta", f"{report.beta:g}"),
        ("beta*mu", f"{report.beta_mu:.6g}"),
        ("beta^2*mu", f"{report.beta_sq_mu:.6g}"),
        ("delta", f"{report.delta:g}"),
        ("ballistic", "yes" if report.ballistic else "no"),
        ("annealed CLT", "yes" if report.annealed_clt else "no"),
        ("quenched CLT", "yes" if report.quenched_clt else "no"),
        ("necessity violated", "yes" if report.necessity_violation else "no"),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)


def trap_mean(trap: BranchTree, beta: float) -> float:
    """Exact quenched mean excursion time of W in ``trap``."""
    if trap.buds == 0:
        return 1.0
    return expected_hitting_time(WalkKernel(beta, trap), 0, ANCESTOR)


@dataclass(frozen=True)
class TreeExcursionTraps(TrapModel):
    """Holding times are excursion times of W in i.i.d. branch traps."""

    law: OffspringLaw
    beta: float
    kind = "tree"

    def __post_init__(self) -> None:
        _require_subcritical(self.law)
        if not self.beta > 0:
            raise DomainError(f"Bias must be positive, got {self.beta}.")

    def sample_sites(self, rng: np.random.Generator, count: int) -> List[Any]:
        return [sample_branch_tree(self.law, rng) for _ in range(count)]

    def quenched_means(self, params: Sequence[Any]) -> np.ndarray:
        return np.array([trap_mean(trap, self.beta) for trap in params], dtype=float)

    @property
    def annealed_mean(self) -> float:
        if self.beta < 1:
            return math.nan
        return expected_eta0(self.law, self.beta)

    def sample_holding_times(self, env: Environment, sites: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(sites.size)
        unique, inverse, counts = np.unique(sites, return_inverse=True, return_counts=True)
        order = np.argsort(inverse, kind="stable")
        start = 0
        for site, count in zip(unique.tolist(), counts.tolist()):
            trap = env.params[site - env.lo]
            if trap.buds == 0:
                times = np.ones(count)
            else:
                times = sample_excursions(trap, self.beta, rng, size=count).times
            out[order[start : start + count]] = times
            start += count
        return out

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "law": self.law.to_json(), "beta": self.beta}

    def site_to_json(self, param: Any) -> Any:
        return {"edges": to_edge_list(param.inner), "buds": param.buds}


def build_tree_environment(
    law: OffspringLaw,
    beta: float,
    window: Tuple[int, int],
    rng: np.random.Generator,
) -> Environment:
    """Environment of i.i.d. branch traps, materialized on the inclusive ``window``."""
    model = TreeExcursionTraps(law, beta)
    env = Environment(model=model, seed=child_seed(rng), block_size=1)
    first, last = window
    if last < first:
        raise ValueError("Window must satisfy first <= last.")
    env.ensure(first, last)
    return env


@dataclass
class TreeWalkPath:
    distance: np.ndarray
    backbone: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        return self.distance - self.backbone


def simulate_tree_walk(window: KestenWindow, beta: float, horizon: int, rng: np.random.Generator) -> TreeWalkPath:
    """Walk on the decorated backbone, recording |X_n| and its backbone level.

    The state is (k, v): v is a vertex of the trap at backbone site k, with
    v = 0 meaning the walk sits on rho_k itself.
    """
    if not beta > 0:
        raise DomainError(f"Bias must be positive, got {beta}.")
    if horizon < 0:
        raise ValueError("Horizon must be non-negative.")
    distance = np.zeros(horizon + 1, dtype=np.int64)
    backbone = np.zeros(horizon + 1, dtype=np.int64)
    cache: Dict[int, Tuple[list, list, list, list, list]] = {}

    def tables(k: int) -> Tuple[list, list, list, list, list]:
        if k not in cache:
            window.ensure(k)
            trap = window.traps[k].inner
            cache[k] = (
                trap.parent.tolist(),
                trap.out_degree.tolist(),
                trap.child_offsets.tolist(),
                trap.child_index.tolist(),
                trap.depth.tolist(),
            )
        return cache[k]

    site, v = 0, 0
    parent, degree, offsets, children, depth = tables(0)
    uniforms: List[float] = []
    cursor = 0
    for n in range(1, horizon + 1):
        if cursor == len(uniforms):
            uniforms = rng.random(min(UNIFORM_CHUNK, horizon - n + 1)).tolist()
            cursor = 0
        u = uniforms[cursor]
        cursor += 1
        if v == 0:
            d = degree[0] + 1
            up = 0.0 if site == 0 else 1.0 / (1.0 + beta * d)
            if u < up:
                site -= 1
                parent, degree, offsets, children, depth = tables(site)
            else:
                pick = min(int((u - up) / (1.0 - up) * d), d - 1)
                if pick == d - 1:
                    site += 1
                    parent, degree, offsets, children, depth = tables(site)
                else:
                    v = children[offsets[0] + pick]
        else:
            d = degree[v]
            up = 1.0 / (1.0 + beta * d)
            if u < up:
                v = parent[v]
            else:
                v = children[offsets[v] + min(int((u - up) / (1.0 - up) * d), d - 1)]
        distance[n] = site + depth[v]
        backbone[n] = site
    return TreeWalkPath(distance=distance, backbone=backbone)


def window_site_mean(window: KestenWindow, beta: float, k: int) -> float:
    key = (float(beta), int(k))
    if key not in window.quenched_means:
        window.ensure(k)
        window.quenched_means[key] = trap_mean(window.traps[k], beta)
    return window.quenched_means[key]


def quenched_tree_centring(window: KestenWindow, beta: float, t: float) -> float:
    nu = tree_speed(window.law, beta)
    mean = expected_eta0(window.law, beta)
    count = math.floor(nu * t)
    if count == 0:
        return nu * t
    means = np.array([window_site_mean(window, beta, k) for k in range(1, count + 1)])
    return nu * t - nu * (beta + 1.0) / (beta - 1.0) * float(np.sum(means - mean))


@dataclass
class DivergenceReport:
    scales: List[int]
    estimates: List[float]
    divergence_consistent: bool
    stable: bool
    beta: float = math.nan
    beta_sq_mu: float = math.nan
    notes: List[str] = field(default_factory=list)


def second_moment_profile(
    samples: np.ndarray,
    scales: Sequence[int],
    truncation: float = TRUNCATION_FACTOR,
) -> DivergenceReport:
    """Truncated second moments over nested prefixes of ``samples``.

    The estimate at scale s is the mean of min(x^2, truncation^2 * s) over the
    first s samples. A finite second moment is approached as s grows; an
    infinite one shows up as growth driven by the rising cap instead of by the
    single largest draw.
    """
    scales = sorted(int(s) for s in scales)
    if scales[-1] > samples.size:
        raise ValueError("Largest scale exceeds the sample size.")
    if not truncation > 0:
        raise ValueError("Truncation factor must be positive.")
    squares = np.asarray(samples, dtype=float) ** 2
    estimates = [float(np.minimum(squares[:s], truncation * truncation * s).mean()) for s in scales]
    increasing = all(b > a for a, b in zip(estimates, estimates[1:]))
    last_change = abs(estimates[-1] - estimates[-2]) / estimates[-2] if estimates[-2] > 0 else 0.0
    return DivergenceReport(
        scales=scales,
        estimates=estimates,
        divergence_consistent=increasing and last_change >= 0.1,
        stable=last_change < 0.1,
    )


def sample_annealed_trap_times(law: OffspringLaw, beta: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. holding times, each from its own freshly sampled trap."""
    chunks = []
    remaining = count
    while remaining > 0:
        batch = min(PROBE_BATCH, remaining)
        forest = sample_branch_forest(law, batch, rng)
        chunks.append(sample_excursions(forest, beta, rng).times)
        remaining -= batch
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def divergence_probe(
    law: OffspringLaw,
    beta: float,
    rng: np.random.Generator,
    scales: Sequence[int] = (10**4, 10**5, 10**6),
    truncation: float = TRUNCATION_FACTOR,
) -> DivergenceReport:
    _require_subcritical(law)
    if beta * law.mean_mu >= 1.0:
        raise DomainError("Divergence probe needs beta*mu < 1 so the mean trap time is finite.")
    if beta * beta * law.mean_mu < 1.0:
        logger.info("beta^2*mu = %.4g < 1: second moment is finite, expect a stable profile", beta * beta * law.mean_mu)
    samples = sample_annealed_trap_times(law, beta, max(scales), rng)
    report = second_moment_profile(samples, scales, truncation)
    report.beta = beta
    report.beta_sq_mu = beta * beta * law.mean_mu
    return report


@dataclass
class CouplingProfile:
    horizons: List[int]
    max_deviation: List[int]
    ratio_to_log: List[float]


def coupling_profile(path: TreeWalkPath, horizons: Sequence[int]) -> CouplingProfile:
    """max_{m<=n}(|X_m| - |X~_m|) and its ratio to log n at each horizon."""
    running = np.maximum.accumulate(path.deviation)
    horizons = [int(n) for n in horizons if 2 <= n < running.size]
    deviations = [int(running[n]) for n in horizons]
    ratios = [d / math.log(n) for d, n in zip(deviations, horizons)]
    return CouplingProfile(horizons=horizons, max_deviation=deviations, ratio_to_log=ratios)


def dyadic_horizons(limit: int, start: int = 2**6) -> List[int]:
    horizons = []
    n = start
    while n <= limit:
        horizons.append(n)
        n *= 2
    return horizons
