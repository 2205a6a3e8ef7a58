"""Statistical checks and replica orchestration.

Replicas run in chunks. Each chunk is a picklable ``ReplicaTask`` handled by a
module-level worker that rebuilds its environment from seeds alone. The same
chunks go to the same streams whether they run inline or in a process pool,
so results do not depend on the number of workers.
"""

from __future__ import annotations

import asyncio
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from .bridge import (
    CouplingProfile,
    TreeExcursionTraps,
    coupling_profile,
    dyadic_horizons,
    einstein_limit,
    expected_eta0,
    quenched_tree_centring,
    simulate_tree_walk,
    tree_speed,
)
from .catalog import trap_model_from_config
from .errors import DomainError, TooFewBlocksError, TooSmallSampleError
from .models import ExperimentConfig, ResultRecord, TestReport
from .offspring import OffspringLaw
from .rtrw import (
    SITE_BLOCK,
    BlockVarianceEstimate,
    Environment,
    RecordOptions,
    TrapModel,
    correction_sum_J,
    hitting_centrings,
    quenched_centring_G,
    run_rtrw,
    sigma_sq_blocks,
    simulate_hitting_time,
    speed_formula,
)
from .streams import StreamNamespace, child_seed, derive_stream
from .tree_walk import excursion_probability
from .trees import BranchForest, KestenWindow, sample_kesten_window

logger = logging.getLogger(__name__)

KS_MIN_SAMPLE = 50
KS_SERIES_TOLERANCE = 1.1e-16
AD_CRITICAL_1PCT = 3.857
REPLICA_CHUNK = 25
CALIBRATION_CHUNK = 10
STREAM_SPAN = 2**32

# Stream ids inside the CALIBRATION and PROBE namespaces are purpose * STREAM_SPAN + index.
POSITION_CALIBRATION = 0
HITTING_CALIBRATION = 1
SCREENING = 2
JITTER = 3
SWEEP = 4
COUPLING = 5
SIZE_CHECK = 6
TREE_REFERENCE = 7


def _purpose_stream(seed: int, namespace: StreamNamespace, purpose: int, index: int = 0) -> np.random.Generator:
    return derive_stream(seed, purpose * STREAM_SPAN + index, namespace)


def _as_output(values: np.ndarray) -> Any:
    return float(values) if np.ndim(values) == 0 else values


# ---------------------------------------------------------------------------
# Distribution functions and goodness of fit
# ---------------------------------------------------------------------------


def normal_cdf(x: Any) -> Any:
    """Standard normal CDF via erfc, accurate in both tails."""
    return _as_output(0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0)))


def normal_quantile(p: Any) -> Any:
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("Normal quantile needs probabilities in (0, 1).")
    return _as_output(special.ndtri(p))


def half_normal_cdf(x: Any, scale: float = 1.0) -> Any:
    """CDF of |N(0, scale^2)|."""
    if not scale > 0:
        raise ValueError("Scale must be positive.")
    x = np.asarray(x, dtype=float)
    return _as_output(np.where(x > 0, special.erf(np.maximum(x, 0.0) / (scale * math.sqrt(2.0))), 0.0))


def kolmogorov_survival(y: float) -> float:
    """P(K > y) for the limiting Kolmogorov distribution."""
    if y < KS_SERIES_TOLERANCE:
        return 1.0
    if y < 1.0:
        # Jacobi form of the CDF; the alternating series is slow down here.
        total = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * y * y))
            total += term
            if term == 0.0 or term <= KS_SERIES_TOLERANCE * total:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / y * total))

    x = -2.0 * y * y
    sign = 1.0
    p = 0.0
    r = 1.0
    while True:
        t = math.exp(x * r * r)
        p += sign * t
        if t == 0.0:
            break
        r += 1.0
        sign = -sign
        if t / p <= KS_SERIES_TOLERANCE:
            break
    return min(1.0, max(0.0, p + p))


def _evaluate_cdf(cdf: Callable[..., Any], values: np.ndarray) -> np.ndarray:
    fitted = np.asarray(cdf(values), dtype=float)
    if fitted.shape != values.shape:
        fitted = np.array([float(cdf(v)) for v in values])
    return fitted


def ks_statistic(sample: Sequence[float], cdf: Callable[..., Any]) -> Tuple[float, int]:
    values = np.sort(np.asarray(sample, dtype=float).ravel())
    n = values.size
    fitted = _evaluate_cdf(cdf, values)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - fitted) if n else 0.0
    d_minus = np.max(fitted - (i - 1) / n) if n else 0.0
    return float(max(d_plus, d_minus)), n


def ks_test(sample: Sequence[float], cdf: Callable[..., Any], threshold: float = 0.01) -> TestReport:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value of sqrt(n) D_n."""
    statistic, n = ks_statistic(sample, cdf)
    if n < KS_MIN_SAMPLE:
        raise TooSmallSampleError(f"KS test needs at least {KS_MIN_SAMPLE} points, got {n}.")
    return TestReport(statistic=statistic, p_value=kolmogorov_survival(math.sqrt(n) * statistic), n=n, threshold=threshold)


@dataclass(frozen=True)
class AndersonDarlingReport:
    statistic: float
    critical_value: float
    n: int

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical_value


def anderson_darling(
    sample: Sequence[float],
    cdf: Callable[..., Any],
    critical_value: float = AD_CRITICAL_1PCT,
) -> AndersonDarlingReport:
    values = np.sort(np.asarray(sample, dtype=float).ravel())
    n = values.size
    if n < KS_MIN_SAMPLE:
        raise TooSmallSampleError(f"Anderson-Darling needs at least {KS_MIN_SAMPLE} points, got {n}.")
    eps = np.finfo(float).tiny
    fitted = np.clip(_evaluate_cdf(cdf, values), eps, 1.0 - 1e-16)
    i = np.arange(1, n + 1)
    a2 = -n - float(np.mean((2 * i - 1) * (np.log(fitted) + np.log1p(-fitted[::-1]))))
    return AndersonDarlingReport(statistic=a2, critical_value=critical_value, n=n)


def two_sample_ks(first: Sequence[float], second: Sequence[float], threshold: float = 0.01) -> TestReport:
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if min(a.size, b.size) < KS_MIN_SAMPLE:
        raise TooSmallSampleError(f"Two-sample KS needs at least {KS_MIN_SAMPLE} points per sample.")
    result = stats.ks_2samp(a, b)
    return TestReport(statistic=float(result.statistic), p_value=float(result.pvalue), n=min(a.size, b.size), threshold=threshold)


def geometric_mixture_pmf(p_ex: np.ndarray, support: int) -> np.ndarray:
    """P(N = k) for k < support when N is geometric on {0, 1, ...} with a per-trap continue probability."""
    p = np.asarray(p_ex, dtype=float)
    values, counts = np.unique(p, return_counts=True)
    k = np.arange(support)
    return (counts[:, None] * values[:, None] ** k * (1.0 - values[:, None])).sum(axis=0) / p.size


def excursion_count_gof(
    forest: BranchForest,
    returns: Sequence[int],
    beta: float,
    threshold: float = 0.01,
    min_expected: float = 5.0,
) -> TestReport:
    """Chi-square test of excursion counts against the geometric law with parameter 1 - p_ex per trap.

    Classes run from 0 upward while the expected count stays above
    ``min_expected``; the rest is pooled into one tail class.
    """
    counts = np.asarray(returns, dtype=np.int64)
    n = counts.size
    if n < KS_MIN_SAMPLE:
        raise TooSmallSampleError(f"Chi-square test needs at least {KS_MIN_SAMPLE} traps, got {n}.")
    buds = forest.out_degree[forest.roots]
    p_ex = excursion_probability(buds, beta)
    if np.all(p_ex == 0.0):
        raise TooSmallSampleError("Every trap is a bare root; excursion counts are all zero.")
    support = max(2, int(counts.max()) + 2)
    expected = n * geometric_mixture_pmf(p_ex, support)
    classes = int(np.argmax(expected < min_expected)) if np.any(expected < min_expected) else support
    classes = max(classes, 1)
    while classes > 1 and n - expected[:classes].sum() < min_expected:
        classes -= 1
    observed = np.bincount(np.minimum(counts, classes), minlength=classes + 1)[: classes + 1]
    pooled = np.append(expected[:classes], n - expected[:classes].sum())
    result = stats.chisquare(observed, pooled)
    return TestReport(statistic=float(result.statistic), p_value=float(result.pvalue), n=n, threshold=threshold)


def ks_size_calibration(
    seed: int,
    repetitions: int = 500,
    n: int = 2000,
    threshold: float = 0.01,
) -> ResultRecord:
    """Rejection rate of ``ks_test`` on synthetic standard normal samples, against the nominal level."""
    rng = _purpose_stream(seed, StreamNamespace.PROBE, SIZE_CHECK)
    rejections = sum(not ks_test(rng.standard_normal(n), normal_cdf, threshold).passed for _ in range(repetitions))
    rate = rejections / repetitions
    return ResultRecord(
        name="ks-size",
        estimate=rate,
        standard_error=math.sqrt(threshold * (1.0 - threshold) / repetitions),
        expected=threshold,
    )


def lattice_jitter(values: np.ndarray, spacing: float, rng: np.random.Generator) -> np.ndarray:
    """Spread lattice-valued samples uniformly over their cells before a continuous test."""
    values = np.asarray(values, dtype=float)
    return values + spacing * (rng.random(values.shape) - 0.5)


# ---------------------------------------------------------------------------
# Estimates against exact values
# ---------------------------------------------------------------------------


def compare_to_expected(name: str, samples: Sequence[float], expected: float, tolerance_z: float = 4.0) -> ResultRecord:
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise TooSmallSampleError(f"No samples for '{name}'.")
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return ResultRecord(name=name, estimate=float(values.mean()), standard_error=se, expected=expected, tolerance_z=tolerance_z)


def majority_pass(outcomes: Sequence[bool], required: Optional[int] = None) -> bool:
    """True when at least ``required`` outcomes pass; default is a strict majority (2 of 3)."""
    outcomes = list(outcomes)
    if not outcomes:
        return False
    needed = len(outcomes) // 2 + 1 if required is None else required
    return sum(bool(o) for o in outcomes) >= needed


@dataclass(frozen=True)
class TailFit:
    rate: float
    intercept: float
    points: int


def fit_exponential_tail(gaps: Sequence[float]) -> TailFit:
    """Least-squares fit of log P(G > g) = intercept - rate * g over the observed gap values."""
    values = np.sort(np.asarray(gaps, dtype=float))
    support = np.unique(values)[:-1]
    if support.size < 3:
        raise TooFewBlocksError("Tail fit needs at least four distinct gap values.")
    survival = 1.0 - np.searchsorted(values, support, side="right") / values.size
    slope, intercept = np.polyfit(support, np.log(survival), 1)
    return TailFit(rate=float(-slope), intercept=float(intercept), points=int(support.size))


# ---------------------------------------------------------------------------
# Replica orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicaTask:
    seed: int
    replica_ids: Tuple[int, ...]
    beta: float
    horizon: float
    model: Optional[TrapModel] = None
    law: Optional[OffspringLaw] = None
    environment_seed: Optional[int] = None
    window_length: int = 64
    inner: int = 0


def replica_tasks(seed: int, replicas: int, *, chunk: int = REPLICA_CHUNK, **fields: Any) -> List[ReplicaTask]:
    return [
        ReplicaTask(seed=seed, replica_ids=tuple(range(start, min(start + chunk, replicas))), **fields)
        for start in range(0, replicas, chunk)
    ]


def replica_environment_seed(seed: int, replica_id: int) -> int:
    return child_seed(derive_stream(seed, replica_id, StreamNamespace.ENVIRONMENT))


def environment_for(model: TrapModel, seed: int) -> Environment:
    """Lazily extending environment; tree traps get one stream per site."""
    block = 1 if isinstance(model, TreeExcursionTraps) else SITE_BLOCK
    return Environment(model=model, seed=seed, block_size=block)


def window_for(law: OffspringLaw, seed: int, length: int) -> KestenWindow:
    return sample_kesten_window(law, length, derive_stream(seed, 0, StreamNamespace.WINDOW))


def _position_worker(task: ReplicaTask) -> np.ndarray:
    shared = environment_for(task.model, task.environment_seed) if task.environment_seed is not None else None
    out = np.empty(len(task.replica_ids))
    for i, replica in enumerate(task.replica_ids):
        env = shared if shared is not None else environment_for(task.model, replica_environment_seed(task.seed, replica))
        rng = derive_stream(task.seed, replica)
        out[i] = run_rtrw(env, task.beta, task.horizon, rng, RecordOptions(regenerations=False)).final_position
    return out


def _hitting_worker(task: ReplicaTask) -> np.ndarray:
    shared = environment_for(task.model, task.environment_seed) if task.environment_seed is not None else None
    level = int(task.horizon)
    out = np.empty(len(task.replica_ids))
    for i, replica in enumerate(task.replica_ids):
        env = shared if shared is not None else environment_for(task.model, replica_environment_seed(task.seed, replica))
        out[i] = simulate_hitting_time(env, task.beta, level, derive_stream(task.seed, replica))
    return out


def _tree_walk_worker(task: ReplicaTask) -> np.ndarray:
    """Rows of (|X_n|, backbone level) at n = horizon."""
    shared = (
        window_for(task.law, task.environment_seed, task.window_length) if task.environment_seed is not None else None
    )
    steps = int(task.horizon)
    out = np.empty((len(task.replica_ids), 2), dtype=np.int64)
    for i, replica in enumerate(task.replica_ids):
        window = shared if shared is not None else window_for(task.law, replica_environment_seed(task.seed, replica), task.window_length)
        path = simulate_tree_walk(window, task.beta, steps, derive_stream(task.seed, replica))
        out[i] = (path.distance[-1], path.backbone[-1])
    return out


def _hitting_variance_worker(task: ReplicaTask) -> np.ndarray:
    out = np.empty(len(task.replica_ids))
    for i, outer in enumerate(task.replica_ids):
        rng = _purpose_stream(task.seed, StreamNamespace.CALIBRATION, HITTING_CALIBRATION, outer)
        env = environment_for(task.model, child_seed(rng))
        taus = np.array([simulate_hitting_time(env, task.beta, 1, rng) for _ in range(task.inner)])
        out[i] = taus.var(ddof=1)
    return out


async def run_replicas(
    worker: Callable[[ReplicaTask], np.ndarray],
    tasks: Sequence[ReplicaTask],
    threads: int = 1,
) -> np.ndarray:
    """Run ``worker`` on every task and concatenate the results in task order."""
    if not tasks:
        return np.zeros(0)
    if threads <= 1 or len(tasks) == 1:
        results = [worker(task) for task in tasks]
    else:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            results = await asyncio.gather(*(loop.run_in_executor(pool, worker, task) for task in tasks))
    return np.concatenate(results)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def _model_constants(model: TrapModel, beta: float) -> Tuple[float, float]:
    mean_eta0 = model.annealed_mean
    if not (math.isfinite(mean_eta0) and mean_eta0 > 0):
        raise DomainError(f"Trap model has no finite positive mean holding time at beta={beta}.")
    return mean_eta0, speed_formula(beta, mean_eta0)


def calibrate_position_scale(model: TrapModel, beta: float, horizon: float, seed: int) -> BlockVarianceEstimate:
    """Annealed position variance from the regeneration blocks of one long calibration run."""
    mean_eta0, nu = _model_constants(model, beta)
    rng = _purpose_stream(seed, StreamNamespace.CALIBRATION, POSITION_CALIBRATION)
    env = environment_for(model, child_seed(rng))
    trajectory = run_rtrw(env, beta, horizon, rng)
    estimate = sigma_sq_blocks(trajectory.blocks(), mean_eta0, nu, rng=rng)
    logger.info(
        "Position scale calibrated: varsigma^2=%.6g (se %.3g) from %d blocks",
        estimate.value,
        estimate.standard_error,
        estimate.blocks_used,
    )
    return estimate


@dataclass(frozen=True)
class NestedVarianceEstimate:
    value: float
    standard_error: float
    outer: int
    inner: int


async def estimate_hitting_variance(
    model: TrapModel,
    beta: float,
    seed: int,
    outer: int = 200,
    inner: int = 200,
    threads: int = 1,
) -> NestedVarianceEstimate:
    """E over environments of the quenched variance of tau_1, by nested Monte Carlo."""
    if outer < 2 or inner < 2:
        raise ValueError("Nested variance needs at least 2 outer and 2 inner samples.")
    tasks = replica_tasks(seed, outer, chunk=CALIBRATION_CHUNK, model=model, beta=beta, horizon=1.0, inner=inner)
    variances = await run_replicas(_hitting_variance_worker, tasks, threads)
    estimate = NestedVarianceEstimate(
        value=float(variances.mean()),
        standard_error=float(variances.std(ddof=1) / math.sqrt(outer)),
        outer=outer,
        inner=inner,
    )
    logger.info("Hitting variance calibrated: sigma^2=%.6g (se %.3g)", estimate.value, estimate.standard_error)
    return estimate


def screen_environment(
    model: TrapModel,
    beta: float,
    horizon: float,
    seed: int,
    min_ratio: float = 1.0,
    attempts: int = 200,
) -> Tuple[int, float]:
    """First environment seed whose |J(floor(nu T))| exceeds min_ratio * sqrt(Var * floor(nu T))."""
    mean_eta0, nu = _model_constants(model, beta)
    count = math.floor(nu * horizon)
    if count < 1:
        raise DomainError("Horizon too short: floor(nu T) is 0, so there is no correction to screen.")
    rng = _purpose_stream(seed, StreamNamespace.CALIBRATION, SCREENING)
    site_var = float(np.var(model.quenched_means(model.sample_sites(rng, 4096)), ddof=1))
    if site_var == 0.0:
        raise DomainError("Quenched means are constant; the environment correction vanishes.")
    bound = min_ratio * math.sqrt(site_var * count)
    for attempt in range(attempts):
        env_seed = replica_environment_seed(seed, attempt)
        correction = correction_sum_J(environment_for(model, env_seed), count, mean_eta0)
        if abs(correction) > bound:
            logger.info("Screened environment %d: |J|=%.4g > %.4g", attempt, abs(correction), bound)
            return env_seed, correction
    raise DomainError(f"No environment with |J| > {bound:.4g} in {attempts} attempts.")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class CltOutcome:
    mode: str
    report: TestReport
    standardized: np.ndarray
    centring: float
    scale: float
    nu: float
    calibration: Any
    environment_seed: Optional[int] = None
    tree: Optional[TreeCentringOutcome] = None


async def clt_experiment(
    config: ExperimentConfig,
    *,
    environment_seed: Optional[int] = None,
    calibration: Any = None,
) -> CltOutcome:
    """Standardized replica sample of the configured CLT mode and its KS test against N(0, 1).

    ``calibration`` reuses an earlier variance estimate of the matching kind.
    """
    mode = config.resolved_mode
    model = trap_model_from_config(config)
    beta = config.beta
    mean_eta0, nu = _model_constants(model, beta)
    threads = config.resolved_threads
    calibration_seed = config.effective_calibration_seed
    horizon = config.horizon
    jitter = _purpose_stream(config.seed, StreamNamespace.PROBE, JITTER)
    tree: Optional[TreeCentringOutcome] = None

    if mode == "annealed-position":
        if calibration is None:
            calibration_horizon = config.calibration_horizon or 100.0 * horizon
            calibration = calibrate_position_scale(model, beta, calibration_horizon, calibration_seed)
        scale = math.sqrt(calibration.value * horizon)
        centring = nu * horizon
        tasks = replica_tasks(config.seed, config.replicas, model=model, beta=beta, horizon=horizon)
        positions = await run_replicas(_position_worker, tasks, threads)
        standardized = (lattice_jitter(positions, 1.0, jitter) - centring) / scale
    elif mode == "quenched-tree-position":
        if not isinstance(model, TreeExcursionTraps):
            raise DomainError("The quenched tree mode needs tree-excursion traps.")
        if calibration is None:
            calibration = await estimate_hitting_variance(
                model, beta, calibration_seed, config.calibration_outer, config.calibration_inner, threads
            )
        scale = math.sqrt(calibration.value) * nu**1.5 * math.sqrt(horizon)
        tree = await tree_centring_experiment(
            model.law,
            beta,
            int(horizon),
            config.replicas,
            config.seed,
            threads,
            window_length=config.window_length,
            windows=config.reference_windows,
            walks_per_window=config.reference_walks,
        )
        environment_seed = tree.fixed.environment_seed
        centring = nu * horizon + tree.start_shift
        if config.centring == "exact":
            centring += tree.fixed.correction
        standardized = (lattice_jitter(tree.distances, 2.0, jitter) - centring) / scale
    else:
        if environment_seed is None:
            environment_seed = replica_environment_seed(config.seed, 0)
        if calibration is None:
            calibration = await estimate_hitting_variance(
                model, beta, calibration_seed, config.calibration_outer, config.calibration_inner, threads
            )
        env = environment_for(model, environment_seed)
        shared = dict(model=model, beta=beta, environment_seed=environment_seed)
        if mode == "quenched-position":
            scale = math.sqrt(calibration.value) * nu**1.5 * math.sqrt(horizon)
            if config.centring == "deterministic":
                centring = nu * horizon
            else:
                centring = quenched_centring_G(env, beta, horizon, nu, mean_eta0)
            tasks = replica_tasks(config.seed, config.replicas, horizon=horizon, **shared)
            positions = await run_replicas(_position_worker, tasks, threads)
            standardized = (lattice_jitter(positions, 1.0, jitter) - centring) / scale
        else:
            level = int(config.level)
            scale = math.sqrt(calibration.value * level)
            if config.centring == "deterministic":
                centring = level * (beta + 1.0) / (beta - 1.0) * mean_eta0
            else:
                centring = hitting_centrings(env, beta, level)[0]
            tasks = replica_tasks(config.seed, config.replicas, horizon=float(level), **shared)
            times = await run_replicas(_hitting_worker, tasks, threads)
            standardized = (times - centring) / scale

    report = ks_test(standardized, normal_cdf, config.threshold)
    logger.info("%s (%s centring): D=%.4g p=%.4g", mode, config.centring, report.statistic, report.p_value)
    return CltOutcome(
        mode=mode,
        report=report,
        standardized=standardized,
        centring=centring,
        scale=scale,
        nu=nu,
        calibration=calibration,
        environment_seed=environment_seed,
        tree=tree,
    )


@dataclass(frozen=True)
class EinsteinRow:
    beta: float
    closed_form: float
    estimate: float
    standard_error: float
    einstein_limit: float

    def record(self) -> ResultRecord:
        return ResultRecord(
            name=f"einstein nu/(beta-1) beta={self.beta:g}",
            estimate=self.estimate,
            standard_error=self.standard_error,
            expected=self.closed_form,
        )

    def as_row(self) -> Dict[str, float]:
        record = self.record()
        return {
            "beta": self.beta,
            "closed_form": self.closed_form,
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "z_score": record.z_score,
            "einstein_limit": self.einstein_limit,
        }


async def einstein_sweep(
    law: OffspringLaw,
    betas: Sequence[float],
    horizon: float,
    replicas: int,
    seed: int,
    threads: int = 1,
) -> List[EinsteinRow]:
    """Closed-form and simulated nu_beta/(beta-1) for each bias, next to the beta -> 1 limit."""
    rows: List[EinsteinRow] = []
    if not betas:
        return rows
    limit = einstein_limit(law)
    for index, beta in enumerate(betas):
        sweep_seed = child_seed(_purpose_stream(seed, StreamNamespace.PROBE, SWEEP, index))
        model = TreeExcursionTraps(law, beta)
        tasks = replica_tasks(sweep_seed, replicas, model=model, beta=beta, horizon=horizon)
        positions = await run_replicas(_position_worker, tasks, threads)
        scaled = positions / (horizon * (beta - 1.0))
        se = float(scaled.std(ddof=1) / math.sqrt(scaled.size)) if scaled.size > 1 else 0.0
        rows.append(
            EinsteinRow(
                beta=beta,
                closed_form=tree_speed(law, beta) / (beta - 1.0),
                estimate=float(scaled.mean()),
                standard_error=se,
                einstein_limit=limit,
            )
        )
        logger.info("Einstein sweep beta=%g: closed %.6g, MC %.6g +- %.2g", beta, rows[-1].closed_form, rows[-1].estimate, se)
    return rows


@dataclass
class DiffusivityOutcome:
    walk: str
    upsilon: float
    report: TestReport
    sample: np.ndarray


async def diffusivity_experiment(
    law: OffspringLaw,
    horizon: int,
    replicas: int,
    seed: int,
    threads: int = 1,
    *,
    walk: Literal["tree", "rtrw"] = "tree",
    window_length: int = 64,
    threshold: float = 0.01,
) -> DiffusivityOutcome:
    """|X_n|/sqrt(n) of the unbiased walk against the half-normal law with variance 1/E[eta_0]."""
    upsilon = 1.0 / expected_eta0(law, 1.0)
    jitter = _purpose_stream(seed, StreamNamespace.PROBE, JITTER)
    if walk == "tree":
        tasks = replica_tasks(seed, replicas, law=law, beta=1.0, horizon=float(horizon), window_length=window_length)
        distances = (await run_replicas(_tree_walk_worker, tasks, threads))[:, 0]
        # Tree distances share the parity of n.
        values = np.abs(lattice_jitter(distances, 2.0, jitter))
    else:
        tasks = replica_tasks(seed, replicas, model=TreeExcursionTraps(law, 1.0), beta=1.0, horizon=float(horizon))
        positions = await run_replicas(_position_worker, tasks, threads)
        values = np.abs(lattice_jitter(positions, 1.0, jitter))
    sample = values / math.sqrt(horizon)
    scale = math.sqrt(upsilon)
    report = ks_test(sample, lambda x: half_normal_cdf(x, scale), threshold)
    return DiffusivityOutcome(walk=walk, upsilon=upsilon, report=report, sample=sample)


async def tree_walk_sample(
    law: OffspringLaw,
    beta: float,
    horizon: int,
    replicas: int,
    seed: int,
    threads: int = 1,
    *,
    window_length: int = 64,
    environment_seed: Optional[int] = None,
) -> np.ndarray:
    """(replicas, 2) array of |X_n| and backbone level at n = horizon."""
    tasks = replica_tasks(
        seed,
        replicas,
        law=law,
        beta=beta,
        horizon=float(horizon),
        window_length=window_length,
        environment_seed=environment_seed,
    )
    return await run_replicas(_tree_walk_worker, tasks, threads)


@dataclass(frozen=True)
class WindowOffset:
    """Offset of |X_t| from nu t on one fixed window, next to that window's G correction."""

    environment_seed: int
    correction: float
    mean_offset: float
    standard_error: float
    walks: int

    @property
    def residual(self) -> float:
        return self.mean_offset - self.correction


@dataclass
class TreeCentringOutcome:
    fixed: WindowOffset
    reference: List[WindowOffset]
    start_shift: float
    start_shift_se: float
    residual_spread: float
    explained: float
    record: ResultRecord
    distances: np.ndarray
    nu: float


async def window_offset(
    law: OffspringLaw,
    beta: float,
    horizon: int,
    walks: int,
    seed: int,
    environment_seed: int,
    threads: int = 1,
    *,
    window_length: int = 64,
) -> Tuple[WindowOffset, np.ndarray]:
    nu = tree_speed(law, beta)
    correction = quenched_tree_centring(window_for(law, environment_seed, window_length), beta, horizon) - nu * horizon
    distances = (
        await tree_walk_sample(
            law, beta, horizon, walks, seed, threads, window_length=window_length, environment_seed=environment_seed
        )
    )[:, 0].astype(float)
    offsets = distances - nu * horizon
    offset = WindowOffset(
        environment_seed=environment_seed,
        correction=float(correction),
        mean_offset=float(offsets.mean()),
        standard_error=float(offsets.std(ddof=1) / math.sqrt(walks)),
        walks=walks,
    )
    return offset, distances


async def tree_centring_experiment(
    law: OffspringLaw,
    beta: float,
    horizon: int,
    walks: int,
    seed: int,
    threads: int = 1,
    *,
    window_length: int = 64,
    windows: int = 8,
    walks_per_window: int = 100,
    tolerance_z: float = 4.0,
) -> TreeCentringOutcome:
    """Offset of |X_t| on one fixed window against its G correction.

    The walk starts at the reflecting root, so E|X_t| - G(t) carries a start-up
    shift that does not vanish with t. The shift and the window-to-window spread
    of the residual are estimated on independent reference windows; the fixed
    window's offset, less the shift, is compared to its correction with both in
    the standard error.
    """
    if windows < 2 or walks_per_window < 2:
        raise TooSmallSampleError("Tree centring needs at least 2 reference windows of 2 walks.")
    nu = tree_speed(law, beta)
    fixed, distances = await window_offset(
        law, beta, horizon, walks, seed, replica_environment_seed(seed, 0), threads, window_length=window_length
    )
    reference_seed = child_seed(_purpose_stream(seed, StreamNamespace.ENVIRONMENT, TREE_REFERENCE))
    reference: List[WindowOffset] = []
    for w in range(windows):
        offset, _ = await window_offset(
            law,
            beta,
            horizon,
            walks_per_window,
            child_seed(derive_stream(reference_seed, w)),
            replica_environment_seed(reference_seed, w),
            threads,
            window_length=window_length,
        )
        reference.append(offset)

    residuals = np.array([item.residual for item in reference])
    offsets = np.array([item.mean_offset for item in reference])
    walk_noise = float(np.mean([item.standard_error**2 for item in reference]))
    residual_var = float(residuals.var(ddof=1))
    start_shift = float(residuals.mean())
    start_shift_se = math.sqrt(residual_var / windows)
    residual_spread = math.sqrt(max(residual_var - walk_noise, 0.0))
    offset_var = float(offsets.var(ddof=1))
    explained = 1.0 - residual_var / offset_var if offset_var > 0 else math.nan

    record = ResultRecord(
        name=f"tree offset vs G correction beta={beta:g}",
        estimate=fixed.mean_offset - start_shift,
        standard_error=math.sqrt(fixed.standard_error**2 + start_shift_se**2 + residual_spread**2),
        expected=fixed.correction,
        tolerance_z=tolerance_z,
    )
    logger.info(
        "Tree centring: correction %.4g, offset %.4g, start shift %.4g (se %.3g), residual spread %.3g",
        fixed.correction,
        fixed.mean_offset,
        start_shift,
        start_shift_se,
        residual_spread,
    )
    return TreeCentringOutcome(
        fixed=fixed,
        reference=reference,
        start_shift=start_shift,
        start_shift_se=start_shift_se,
        residual_spread=residual_spread,
        explained=explained,
        record=record,
        distances=distances,
        nu=nu,
    )


async def rtrw_position_sample(
    model: TrapModel,
    beta: float,
    horizon: float,
    replicas: int,
    seed: int,
    threads: int = 1,
    *,
    environment_seed: Optional[int] = None,
) -> np.ndarray:
    tasks = replica_tasks(seed, replicas, model=model, beta=beta, horizon=horizon, environment_seed=environment_seed)
    return await run_replicas(_position_worker, tasks, threads)


@dataclass
class CouplingOutcome:
    profile: CouplingProfile
    report: TestReport


async def coupling_experiment(
    law: OffspringLaw,
    beta: float,
    horizon: int,
    replicas: int,
    seed: int,
    threads: int = 1,
    *,
    window_length: int = 64,
    profile_horizon: int = 10**6,
    threshold: float = 0.01,
) -> CouplingOutcome:
    """Deviation profile of one long tree walk, and tree-walk backbone levels against RTRW positions."""
    window = window_for(law, replica_environment_seed(seed, 0), window_length)
    path = simulate_tree_walk(window, beta, profile_horizon, _purpose_stream(seed, StreamNamespace.PROBE, COUPLING))
    profile = coupling_profile(path, dyadic_horizons(profile_horizon))

    tree = await tree_walk_sample(law, beta, horizon, replicas, seed, threads, window_length=window_length)
    rtrw_seed = child_seed(_purpose_stream(seed, StreamNamespace.PROBE, COUPLING, 1))
    positions = await rtrw_position_sample(TreeExcursionTraps(law, beta), beta, float(horizon), replicas, rtrw_seed, threads)
    report = two_sample_ks(tree[:, 1], positions, threshold)
    return CouplingOutcome(profile=profile, report=report)
