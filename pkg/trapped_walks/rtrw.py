"""Randomly trapped random walk on Z.

The walk Y steps +1 with probability beta/(beta+1) and -1 otherwise. At every
visit to site x it waits a fresh holding time drawn from the site law omega_x;
S_k is the sum of the first k holding times and X_t = Y_k for S_k <= t < S_{k+1}.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, TooFewBlocksError, WindowError
from .streams import StreamNamespace, derive_stream, zigzag
from .tree_walk import expected_local_times

logger = logging.getLogger(__name__)

SITE_BLOCK = 256
MIN_CHUNK = 1024


class TrapModel(ABC):
    """Law pi of the per-site holding-time laws omega_x."""

    kind: str = "abstract"

    @abstractmethod
    def sample_sites(self, rng: np.random.Generator, count: int) -> List[Any]:
        """Draw ``count`` i.i.d. site parameters."""

    @abstractmethod
    def quenched_means(self, params: Sequence[Any]) -> np.ndarray:
        """Exact E^omega[eta_{x,0}] for each site parameter."""

    @property
    @abstractmethod
    def annealed_mean(self) -> float:
        """E[eta_0], or math.inf."""

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        ...

    @property
    def has_finite_mean(self) -> bool:
        return math.isfinite(self.annealed_mean)

    def sample_holding_times(self, env: "Environment", sites: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Fresh holding times, one per entry of ``sites`` (repeat visits redraw)."""
        return env.quenched_means_at(sites)

    def site_to_json(self, param: Any) -> Any:
        return float(param)


class UnitTraps(TrapModel):
    kind = "unit"

    def sample_sites(self, rng: np.random.Generator, count: int) -> List[Any]:
        return [1.0] * count

    def quenched_means(self, params: Sequence[Any]) -> np.ndarray:
        return np.ones(len(params))

    @property
    def annealed_mean(self) -> float:
        return 1.0

    def sample_holding_times(self, env: "Environment", sites: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.ones(sites.size)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind}


@dataclass(frozen=True)
class TwoPointTraps(TrapModel):
    """Site holding time is deterministic: m1 with probability p, else m2."""

    m1: float
    m2: float
    p: float
    kind = "two-point"

    def __post_init__(self) -> None:
        if self.m1 <= 0 or self.m2 <= 0 or not 0.0 <= self.p <= 1.0:
            raise DomainError("Two-point traps need positive values and p in [0, 1].")

    def sample_sites(self, rng: np.random.Generator, count: int) -> List[Any]:
        return np.where(rng.random(count) < self.p, self.m1, self.m2).tolist()

    def quenched_means(self, params: Sequence[Any]) -> np.ndarray:
        return np.asarray(params, dtype=float)

    @property
    def annealed_mean(self) -> float:
        return self.p * self.m1 + (1.0 - self.p) * self.m2

    @property
    def site_variance(self) -> float:
        return self.p * (1.0 - self.p) * (self.m1 - self.m2) ** 2

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "m1": self.m1, "m2": self.m2, "p": self.p}


@dataclass(frozen=True)
class ExponentialTraps(TrapModel):
    """Exponential holding times whose per-site mean is drawn from a finite law."""

    means: Tuple[float, ...]
    weights: Tuple[float, ...]
    kind = "exponential"

    def __post_init__(self) -> None:
        if len(self.means) != len(self.weights) or not self.means:
            raise DomainError("Exponential traps need matching means and weights.")
        if min(self.means) <= 0 or min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise DomainError("Exponential traps need positive means and normalized weights.")

    def sample_sites(self, rng: np.random.Generator, count: int) -> List[Any]:
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        picks = np.searchsorted(cdf, rng.random(count), side="right")
        return np.asarray(self.means)[np.minimum(picks, len(self.means) - 1)].tolist()

    def quenched_means(self, params: Sequence[Any]) -> np.ndarray:
        return np.asarray(params, dtype=float)

    @property
    def annealed_mean(self) -> float:
        return float(np.dot(self.means, self.weights))

    def sample_holding_times(self, env: "Environment", sites: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.exponential(env.quenched_means_at(sites))

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "means": list(self.means), "weights": list(self.weights)}


@dataclass(eq=False)
class Environment:
    """Per-site parameters over the window [lo, hi) of Z.

    Extendable environments materialize whole blocks of ``block_size`` sites, each
    from its own stream keyed by (seed, block), so extension never changes a
    site that already exists.
    """

    model: TrapModel
    seed: int
    extendable: bool = True
    lo: int = 0
    hi: int = 0
    block_size: int = SITE_BLOCK
    params: List[Any] = field(default_factory=list, repr=False)
    means: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @classmethod
    def from_sites(cls, model: TrapModel, params: Sequence[Any], origin: int = 0) -> "Environment":
        params = list(params)
        return cls(
            model=model,
            seed=0,
            extendable=False,
            lo=origin,
            hi=origin + len(params),
            params=params,
            means=np.asarray(model.quenched_means(params), dtype=float),
        )

    def _block(self, index: int) -> Tuple[List[Any], np.ndarray]:
        rng = derive_stream(self.seed, zigzag(index), StreamNamespace.SITE)
        params = list(self.model.sample_sites(rng, self.block_size))
        return params, np.asarray(self.model.quenched_means(params), dtype=float)

    def ensure(self, first: int, last: int) -> None:
        """Make sites first..last (inclusive) available."""
        if self.lo <= first and last < self.hi:
            return
        if not self.extendable:
            raise WindowError(f"Sites {first}..{last} lie outside the fixed window [{self.lo}, {self.hi}).")
        size = self.block_size
        if self.hi == self.lo:
            self.lo = self.hi = (first // size) * size
        span = self.hi - self.lo
        new_lo = min(self.lo, first, self.lo - span if first < self.lo else self.lo)
        new_hi = max(self.hi, last + 1, self.hi + span if last >= self.hi else self.hi)
        new_lo = (new_lo // size) * size
        new_hi = -((-new_hi) // size) * size
        left_params: List[Any] = []
        left_means = []
        for block in range(new_lo // size, self.lo // size):
            params, means = self._block(block)
            left_params.extend(params)
            left_means.append(means)
        right_params: List[Any] = []
        right_means = []
        for block in range(self.hi // size, new_hi // size):
            params, means = self._block(block)
            right_params.extend(params)
            right_means.append(means)
        self.params = left_params + self.params + right_params
        self.means = np.concatenate(left_means + [self.means] + right_means)
        logger.debug("Environment window extended to [%d, %d)", new_lo, new_hi)
        self.lo, self.hi = new_lo, new_hi

    def param(self, x: int) -> Any:
        self.ensure(x, x)
        return self.params[x - self.lo]

    def quenched_mean(self, x: int) -> float:
        self.ensure(x, x)
        return float(self.means[x - self.lo])

    def quenched_means(self, first: int, stop: int) -> np.ndarray:
        """Quenched means of sites first..stop-1."""
        if stop <= first:
            return np.zeros(0)
        self.ensure(first, stop - 1)
        return self.means[first - self.lo : stop - self.lo]

    def quenched_means_at(self, sites: np.ndarray) -> np.ndarray:
        return self.means[sites - self.lo]

    def sample_holding_times(self, sites: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if sites.size == 0:
            return np.zeros(0)
        self.ensure(int(sites.min()), int(sites.max()))
        return np.asarray(self.model.sample_holding_times(self, sites, rng), dtype=float)


@dataclass(frozen=True)
class RecordOptions:
    keep_path: bool = False
    regenerations: bool = True
    observe_times: Tuple[float, ...] = ()


@dataclass(frozen=True)
class RegenerationRecord:
    index: int
    position: int
    clock: float


@dataclass(frozen=True)
class RegenerationBlock:
    dx: int
    dt: float
    dkappa: int


@dataclass
class Trajectory:
    horizon: float
    final_position: int
    elapsed_clock: float
    steps: int
    regenerations: List[RegenerationRecord] = field(default_factory=list)
    observations: Dict[float, int] = field(default_factory=dict)
    path: Optional[np.ndarray] = None
    clock: Optional[np.ndarray] = None

    def blocks(self) -> List[RegenerationBlock]:
        """Increments between consecutive regenerations, the first one measured from time 0."""
        blocks = []
        previous = RegenerationRecord(0, 0, 0.0)
        for record in self.regenerations:
            blocks.append(
                RegenerationBlock(
                    dx=record.position - previous.position,
                    dt=record.clock - previous.clock,
                    dkappa=record.index - previous.index,
                )
            )
            previous = record
        return blocks

    def position_at(self, t: float) -> int:
        if self.path is None or self.clock is None:
            raise ValueError("Trajectory was recorded without its path.")
        if not 0 <= t <= self.horizon:
            raise ValueError(f"Time {t} outside [0, {self.horizon}].")
        k = int(np.searchsorted(self.clock, t, side="right")) - 1
        return int(self.path[k])


def regeneration_buffer(beta: float) -> int:
    return max(1000, math.ceil(50.0 / (beta - 1.0)))


def _step_probability(beta: float) -> float:
    if not beta > 0:
        raise DomainError(f"Bias must be positive, got {beta}.")
    return beta / (beta + 1.0)


def _chunk_size(env: Environment, beta: float, remaining: float) -> int:
    mean = env.model.annealed_mean
    if not math.isfinite(mean) or mean <= 0:
        return MIN_CHUNK * 16
    return int(min(max(MIN_CHUNK, 1.1 * remaining / mean + 64), 1 << 22))


def run_rtrw(
    env: Environment,
    beta: float,
    horizon_T: float,
    rng: np.random.Generator,
    record: RecordOptions = RecordOptions(),
) -> Trajectory:
    p = _step_probability(beta)
    if horizon_T < 0:
        raise ValueError("Horizon must be non-negative.")
    chunk = _chunk_size(env, beta, horizon_T)

    sites_parts: List[np.ndarray] = []
    clock_parts: List[np.ndarray] = [np.zeros(1)]
    y, s = 0, 0.0
    final_index = None
    while final_index is None:
        steps = np.where(rng.random(chunk) < p, 1, -1)
        after = y + np.cumsum(steps)
        sites = np.concatenate([[y], after[:-1]])
        clock = s + np.cumsum(env.sample_holding_times(sites, rng))
        over = np.flatnonzero(clock > horizon_T)
        if over.size:
            cut = int(over[0]) + 1
            sites_parts.append(sites[:cut])
            clock_parts.append(clock[:cut])
            final_index = sum(part.size for part in sites_parts) - 1
            tail = after[cut - 1 :]
        else:
            sites_parts.append(sites)
            clock_parts.append(clock)
            y, s = int(after[-1]), float(clock[-1])

    path = np.concatenate(sites_parts)
    clock = np.concatenate(clock_parts)
    trajectory = Trajectory(
        horizon=float(horizon_T),
        final_position=int(path[final_index]),
        elapsed_clock=float(clock[final_index]),
        steps=final_index,
    )
    for t in record.observe_times:
        if not 0 <= t <= horizon_T:
            raise ValueError(f"Observation time {t} outside [0, {horizon_T}].")
        trajectory.observations[float(t)] = int(path[np.searchsorted(clock, t, side="right") - 1])

    if record.regenerations and beta > 1 and final_index > 0:
        buffer = regeneration_buffer(beta)
        extension = [path, tail]
        y = int(tail[-1])
        extra = tail.size
        while extra < buffer + 1:
            more = y + np.cumsum(np.where(rng.random(buffer) < p, 1, -1))
            extension.append(more)
            y = int(more[-1])
            extra += more.size
        full = np.concatenate(extension)
        kappas = [k for k in detect_regenerations(full, buffer) if k <= final_index]
        trajectory.regenerations = [
            RegenerationRecord(index=k, position=int(full[k]), clock=float(clock[k])) for k in kappas
        ]

    if record.keep_path:
        trajectory.path = path
        trajectory.clock = clock
    return trajectory


def detect_regenerations(path: Sequence[int], confirmation_horizon: int) -> List[int]:
    """Times m whose past range lies strictly below the whole simulated future."""
    y = np.asarray(path)
    last = y.size - 1
    if last < 1:
        return []
    past_max = np.maximum.accumulate(y)[:-1]
    future_min = np.minimum.accumulate(y[::-1])[::-1][1:]
    m = np.arange(1, last + 1)
    accepted = (past_max < future_min) & (m <= last - confirmation_horizon)
    return m[accepted].tolist()


def simulate_hitting_time(env: Environment, beta: float, level: int, rng: np.random.Generator) -> float:
    """Clock value S at the first hitting time of ``level`` by Y."""
    p = _step_probability(beta)
    if level < 1:
        raise ValueError("Hitting level must be positive.")
    chunk = max(MIN_CHUNK, int(2 * level * (beta + 1.0) / max(beta - 1.0, 1e-3)))
    y, s = 0, 0.0
    while True:
        after = y + np.cumsum(np.where(rng.random(chunk) < p, 1, -1))
        sites = np.concatenate([[y], after[:-1]])
        hit = np.flatnonzero(after >= level)
        if hit.size:
            used = sites[: int(hit[0]) + 1]
            return s + float(env.sample_holding_times(used, rng).sum())
        s += float(env.sample_holding_times(sites, rng).sum())
        y = int(after[-1])


def speed_formula(beta: float, mean_eta0: float) -> float:
    if beta < 1:
        raise DomainError(f"Speed formula needs beta >= 1, got {beta}.")
    if not (math.isfinite(mean_eta0) and mean_eta0 > 0):
        raise DomainError(f"Mean holding time must be positive and finite, got {mean_eta0}.")
    return (beta - 1.0) / (mean_eta0 * (beta + 1.0))


@dataclass(frozen=True)
class BlockVarianceEstimate:
    value: float
    standard_error: float
    blocks_used: int


def sigma_sq_blocks(
    blocks: Sequence[RegenerationBlock],
    mean_eta0: float,
    nu: float,
    rng: Optional[np.random.Generator] = None,
    resamples: int = 200,
) -> BlockVarianceEstimate:
    """Regeneration-block estimate of the annealed position variance.

    The first block starts at time 0 rather than at a regeneration and is
    dropped. The standard error comes from resampling whole blocks.
    """
    if len(blocks) < 2:
        raise TooFewBlocksError(f"Need at least 2 regeneration blocks, got {len(blocks)}.")
    used = blocks[1:]
    dx = np.array([b.dx for b in used], dtype=float)
    dt = np.array([b.dt for b in used], dtype=float)
    gaps = np.array([b.dkappa for b in used], dtype=float)
    z_sq = (dx - dt * nu) ** 2
    value = float(z_sq.mean() / (mean_eta0 * gaps.mean()))
    rng = rng if rng is not None else np.random.default_rng(0)
    picks = rng.integers(0, len(used), size=(resamples, len(used)))
    boot = z_sq[picks].mean(axis=1) / (mean_eta0 * gaps[picks].mean(axis=1))
    return BlockVarianceEstimate(value=value, standard_error=float(boot.std(ddof=1)), blocks_used=len(used))


def _require_bias(beta: float) -> None:
    if not beta > 1:
        raise DomainError(f"Centring needs beta > 1, got {beta}.")


def quenched_centring_G(env: Environment, beta: float, t: float, nu: float, mean_eta0: float) -> float:
    _require_bias(beta)
    count = math.floor(nu * t)
    means = env.quenched_means(0, count)
    ratio = (beta + 1.0) / (beta - 1.0)
    return nu * t - nu * ratio * float(np.sum(means - mean_eta0))


def negative_truncation(beta: float) -> int:
    return math.ceil(40.0 / math.log(beta))


def hitting_centrings(env: Environment, beta: float, n: int) -> Tuple[float, float]:
    """(H, H_tilde): exact quenched mean of tau_n and its one-sided surrogate."""
    _require_bias(beta)
    if n < 1:
        raise ValueError("Hitting level must be positive.")
    k = negative_truncation(beta)
    sites = np.arange(-k, n)
    means = env.quenched_means(-k, n)
    exact = float(np.dot(expected_local_times(beta, sites, n), means))
    surrogate = (beta + 1.0) / (beta - 1.0) * float(means[k:].sum())
    return exact, surrogate


def correction_sum_J(env: Environment, n: int, mean_eta0: float) -> float:
    return float(np.sum(env.quenched_means(0, n) - mean_eta0))


def blocks_to_csv(rows: Iterable[Tuple[int, Sequence[RegenerationBlock]]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["replica", "kappa_index", "dx", "dt"])
    for replica, blocks in rows:
        for index, block in enumerate(blocks, start=1):
            writer.writerow([replica, index, block.dx, repr(float(block.dt))])
    return buffer.getvalue()


def environment_to_json(env: Environment) -> Dict[str, Any]:
    return {
        "model": env.model.describe(),
        "window": [env.lo, env.hi],
        "sites": {str(env.lo + i): env.model.site_to_json(param) for i, param in enumerate(env.params)},
    }
