from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence

import numpy as np

from .bridge import (
    TreeExcursionTraps,
    build_tree_environment,
    divergence_probe,
    dyadic_horizons,
    einstein_limit,
    expected_eta0,
    expected_excursion_count,
    regime,
    sample_annealed_trap_times,
    simulate_tree_walk,
    tree_speed,
)
from .catalog import Catalog, law_from_config, trap_model_from_config
from .errors import ConfigError
from .harness import (
    TreeCentringOutcome,
    WindowOffset,
    calibrate_position_scale,
    clt_experiment,
    compare_to_expected,
    coupling_experiment,
    diffusivity_experiment,
    einstein_sweep,
    environment_for,
    excursion_count_gof,
    fit_exponential_tail,
    ks_size_calibration,
    majority_pass,
    replica_environment_seed,
    screen_environment,
    window_for,
)
from .models import CheckLine, ExperimentConfig, ResultRecord, SuiteResult
from .offspring import (
    OffspringLaw,
    cross_moment_Zn_Zm,
    estimate_c_mu,
    mean_Zn,
    second_moment_Zn,
    survival_ratios,
    third_moment_Zn,
)
from .rtrw import UnitTraps, hitting_centrings, run_rtrw, speed_formula
from .streams import StreamNamespace, child_seed, derive_stream
from .tree_walk import (
    KernelMode,
    WalkKernel,
    branching_escape_probability,
    expected_hitting_time,
    expected_local_times,
    expected_return_time_formula,
    gamblers_ruin,
    hitting_probability,
    sample_excursions,
    second_moment_return_time,
    segment_absorption_probability,
    segment_local_times,
    simulate_segment_walks,
    visit_product_bound,
    visit_product_matrix,
)
from .trees import RootedTree, sample_branch_forest, sample_generation_profiles, sample_gw_tree

logger = logging.getLogger(__name__)

ANALYTIC_BETAS = (1.1, 1.5, 2.0)
IDENTITY_TOLERANCE = 1e-8
CLOSED_FORM_TOLERANCE = 1e-10
BRIDGE_TOLERANCE = 1e-12
KS_SIZE_LIMIT = 0.03
EXPLAINED_SHARE = 0.5


def _offset_row(offset: WindowOffset) -> Dict[str, Any]:
    return {
        "environment_seed": offset.environment_seed,
        "correction": offset.correction,
        "mean_offset": offset.mean_offset,
        "se": offset.standard_error,
        "residual": offset.residual,
        "walks": offset.walks,
    }


@dataclass(frozen=True)
class SuiteSizes:
    """Sample sizes of checks whose size is not part of the experiment config."""

    gw_trees: int = 100_000
    moment_generations: int = 6
    segment_walkers: int = 1_000_000
    trap_samples: int = 1_000_000
    environment_sites: int = 20_000
    coupling_profile_horizon: int = 1_000_000
    size_repetitions: int = 500
    size_sample: int = 2000
    bound_tree_size: int = 60
    product_tree_size: int = 500


class VerificationPipeline:
    """Runs one suite and collects its checks, estimates and tables."""

    def __init__(
        self,
        config: ExperimentConfig,
        catalog: Optional[Catalog] = None,
        sizes: Optional[SuiteSizes] = None,
    ):
        self.config = config
        self.catalog = catalog or Catalog()
        self.sizes = sizes or SuiteSizes()
        self.law = law_from_config(config, self.catalog)
        self._suites: Dict[str, Callable[[SuiteResult], Awaitable[None]]] = {
            "verify-analytics": self.verify_analytics,
            "speed": self.speed,
            "annealed-clt": self.clt,
            "quenched-clt": self.clt,
            "quenched-hitting": self.clt,
            "einstein": self.einstein,
            "coupling": self.coupling,
            "necessity": self.necessity,
        }

    async def run(self) -> SuiteResult:
        result = SuiteResult(suite=self.config.suite, config=self.config)
        logger.info("Running suite %s (config %s)", self.config.suite, self.config.config_hash()[:12])
        await self._suites[self.config.suite](result)
        return result

    # -- helpers ---------------------------------------------------------

    def _require_law(self) -> OffspringLaw:
        if self.law is None:
            raise ConfigError(f"Suite '{self.config.suite}' needs an offspring law")
        return self.law

    def repeat_seeds(self) -> List[int]:
        """The config seed followed by derived seeds, one per repetition of a statistical check."""
        seeds = [self.config.seed]
        for index in range(1, self.config.seeds_per_check):
            seeds.append(child_seed(derive_stream(self.config.seed, index, StreamNamespace.PROBE)))
        return seeds

    @property
    def _threads(self) -> int:
        return self.config.resolved_threads

    @staticmethod
    def _check(result: SuiteResult, name: str, expected: Any, observed: Any, tolerance: str, passed: bool) -> None:
        result.checks.append(CheckLine(name=name, expected=expected, observed=observed, tolerance=tolerance, passed=bool(passed)))

    def _record(self, result: SuiteResult, record: ResultRecord) -> None:
        result.records.append(record)
        self._check(
            result,
            record.name,
            record.expected,
            record.estimate,
            f"|z|<={record.tolerance_z:g} (se={record.standard_error:.3g}, z={record.z_score:.3g})",
            record.passed,
        )

    def _majority(self, result: SuiteResult, name: str, p_values: Sequence[float], passes: Sequence[bool]) -> None:
        needed = len(passes) // 2 + 1
        self._check(
            result,
            name,
            f"p>{self.config.threshold:g} on >={needed} of {len(passes)}",
            [round(float(p), 6) for p in p_values],
            "majority",
            majority_pass(passes),
        )

    # -- verify-analytics -------------------------------------------------

    async def verify_analytics(self, result: SuiteResult) -> None:
        law = self._require_law()
        rng = derive_stream(self.config.seed, 0)
        trees = self._sample_trees(law, self.config.trees, rng)
        for beta in ANALYTIC_BETAS:
            self._tree_identities(result, trees, beta)
        self._escape_probabilities(result)
        for beta in ANALYTIC_BETAS:
            self._gamblers_ruin(result, beta)
        self._segment_monte_carlo(result, 1.5, derive_stream(self.config.seed, 1))
        self._generation_moments(result, law, derive_stream(self.config.seed, 2))
        self._excursion_counts(result, law, ANALYTIC_BETAS[0], derive_stream(self.config.seed, 3))
        self._bridge_identities(result, law)
        size = ks_size_calibration(self.config.seed, self.sizes.size_repetitions, self.sizes.size_sample)
        result.records.append(size)
        self._check(result, "ks size under the null", f"<={KS_SIZE_LIMIT}", size.estimate, "rejection rate", size.estimate <= KS_SIZE_LIMIT)

    @staticmethod
    def _sample_trees(law: OffspringLaw, count: int, rng: np.random.Generator) -> List[RootedTree]:
        trees: List[RootedTree] = []
        while len(trees) < count:
            tree = sample_gw_tree(law, rng)
            if tree.num_children(0) > 0:
                trees.append(tree)
        return trees

    def _tree_identities(self, result: SuiteResult, trees: Sequence[RootedTree], beta: float) -> None:
        worst_return = 0.0
        worst_second = 0.0
        violations = 0
        checked_pairs = 0
        for tree in trees:
            kernel = WalkKernel(beta, tree, KernelMode.ROOT_REFLECTING)
            closed = expected_return_time_formula(tree, beta)
            solved = expected_hitting_time(kernel, 0, 0, return_time=True)
            worst_return = max(worst_return, abs(closed - solved) / closed)
            if tree.size > self.sizes.product_tree_size:
                continue
            products = visit_product_matrix(tree, beta)
            second = second_moment_return_time(tree, beta)
            worst_second = max(worst_second, abs(float(products.sum()) - second) / second)
            if tree.size <= self.sizes.bound_tree_size:
                for x in range(tree.size):
                    for y in range(x, tree.size):
                        _, bound = visit_product_bound(tree, beta, x, y)
                        checked_pairs += 1
                        if products[x, y] > bound * (1.0 + 1e-12) + 1e-12:
                            violations += 1
        tolerance = f"rel<={IDENTITY_TOLERANCE:g}"
        self._check(result, f"return time formula vs solve beta={beta:g}", 0.0, worst_return, tolerance, worst_return <= IDENTITY_TOLERANCE)
        self._check(result, f"sum E[v_x v_y] vs second moment beta={beta:g}", 0.0, worst_second, tolerance, worst_second <= IDENTITY_TOLERANCE)
        self._check(result, f"visit product bounds beta={beta:g}", 0, violations, f"{checked_pairs} pairs", violations == 0)

    @staticmethod
    def _escape_tree(depth_w: int, depth_x: int, depth_y: int) -> tuple[RootedTree, int, int, int]:
        parents = [-1]
        for _ in range(depth_w):
            parents.append(len(parents) - 1)
        w = len(parents) - 1
        ends = []
        for depth in (depth_x, depth_y):
            tip = w
            for _ in range(depth - depth_w):
                parents.append(tip)
                tip = len(parents) - 1
            ends.append(tip)
        return RootedTree.from_parents(parents), w, ends[0], ends[1]

    def _escape_probabilities(self, result: SuiteResult) -> None:
        worst = 0.0
        for beta in (1.5, 2.0):
            for depths in ((1, 2, 3), (2, 4, 5), (1, 3, 3)):
                tree, w, x, y = self._escape_tree(*depths)
                solved = hitting_probability(WalkKernel(beta, tree, KernelMode.ROOT_REFLECTING), w, [0], [x, y])
                worst = max(worst, abs(solved - branching_escape_probability(beta, *depths)))
        self._check(result, "escape probability vs absorption solve", 0.0, worst, f"abs<={CLOSED_FORM_TOLERANCE:g}", worst <= CLOSED_FORM_TOLERANCE)

    def _gamblers_ruin(self, result: SuiteResult, beta: float) -> None:
        worst = 0.0
        for n in (5, 10, 20):
            for k in (-1, -3, -7, -15):
                worst = max(worst, abs(gamblers_ruin(beta, k, n) - segment_absorption_probability(beta, k, n)))
        self._check(result, f"gambler's ruin vs segment solve beta={beta:g}", 0.0, worst, f"abs<={CLOSED_FORM_TOLERANCE:g}", worst <= CLOSED_FORM_TOLERANCE)

        n = 20
        low = -math.ceil(36.0 / math.log(beta))
        sites, visits = segment_local_times(beta, low, n)
        keep = sites >= -10
        exact = expected_local_times(beta, sites[keep], n)
        rel = float(np.max(np.abs(exact - visits[keep]) / exact))
        self._check(result, f"local times vs segment solve beta={beta:g}", 0.0, rel, f"rel<={CLOSED_FORM_TOLERANCE:g}", rel <= CLOSED_FORM_TOLERANCE)

    def _segment_monte_carlo(self, result: SuiteResult, beta: float, rng: np.random.Generator) -> None:
        k, n = -3, 10
        hit_level, _ = simulate_segment_walks(beta, n, k, rng, self.sizes.segment_walkers)
        self._record(result, compare_to_expected(f"gambler's ruin MC beta={beta:g}", ~hit_level, gamblers_ruin(beta, k, n)))
        low = -math.ceil(36.0 / math.log(beta))
        _, at_zero = simulate_segment_walks(beta, n, low, rng, self.sizes.segment_walkers)
        self._record(result, compare_to_expected(f"local time at 0 MC beta={beta:g}", at_zero, float(expected_local_times(beta, np.array([0]), n)[0])))

    def _generation_moments(self, result: SuiteResult, law: OffspringLaw, rng: np.random.Generator) -> None:
        depth = self.sizes.moment_generations
        profiles = sample_generation_profiles(law, self.sizes.gw_trees, depth, rng).astype(float)
        for n in range(1, depth + 1):
            z = profiles[:, n]
            self._record(result, compare_to_expected(f"E[Z_{n}]", z, mean_Zn(law, n)))
            self._record(result, compare_to_expected(f"E[Z_{n}^2]", z**2, second_moment_Zn(law, n)))
            self._record(result, compare_to_expected(f"E[Z_{n}^3]", z**3, third_moment_Zn(law, n)))
            for m in range(n + 1, depth + 1):
                self._record(result, compare_to_expected(f"E[Z_{n} Z_{m}]", z * profiles[:, m], cross_moment_Zn_Zm(law, n, m)))
        ratios = survival_ratios(law, 60)
        increases = int(np.sum(np.diff(ratios) > 1e-12 * ratios[:-1]))
        self._check(result, "survival ratio non-increasing", 0, increases, "n<=60", increases == 0)
        c_mu, reached = estimate_c_mu(law)
        self._check(result, "survival ratio plateau", "0<c_mu<=1", c_mu, f"reached n={reached}", 0.0 < c_mu <= 1.0)

    def _excursion_counts(self, result: SuiteResult, law: OffspringLaw, beta: float, rng: np.random.Generator) -> None:
        forest = sample_branch_forest(law, self.sizes.trap_samples, rng)
        returns = sample_excursions(forest, beta, rng).returns
        report = excursion_count_gof(forest, returns, beta, self.config.threshold)
        self._check(result, f"excursion count geometric beta={beta:g}", f"p>{self.config.threshold:g}", report.p_value, "chi-square", report.passed)
        self._record(result, compare_to_expected(f"E[N] beta={beta:g}", returns, expected_excursion_count(law, beta)))

    def _bridge_identities(self, result: SuiteResult, law: OffspringLaw) -> None:
        if law.var_sigma2 > 0:
            limit = einstein_limit(law)
            via_eta = 1.0 / (2.0 * expected_eta0(law, 1.0))
            self._check(result, "einstein limit vs 1/(2E[eta_0]) at beta=1", limit, via_eta, f"abs<={BRIDGE_TOLERANCE:g}", abs(limit - via_eta) <= BRIDGE_TOLERANCE)
        worst = 0.0
        upper = 1.0 / law.mean_mu if law.mean_mu > 0 else math.inf
        grid = [b for b in (1.02, 1.05, 1.1, 1.2, 1.5, 2.0) if b < upper]
        for beta in grid:
            worst = max(worst, abs(tree_speed(law, beta) - speed_formula(beta, expected_eta0(law, beta))))
        self._check(result, "tree speed vs trapped-walk speed", 0.0, worst, f"abs<={BRIDGE_TOLERANCE:g}", worst <= BRIDGE_TOLERANCE)

    # -- speed --------------------------------------------------------------

    async def speed(self, result: SuiteResult) -> None:
        config = self.config
        model = trap_model_from_config(config, self.catalog)
        beta, horizon = config.beta, config.horizon
        mean_eta0 = model.annealed_mean
        nu = speed_formula(beta, mean_eta0)
        tree_model = isinstance(model, TreeExcursionTraps)
        if tree_model:
            closed = tree_speed(self.law, beta)
            self._check(result, "bridge identity nu_beta", closed, nu, f"abs<={BRIDGE_TOLERANCE:g}", abs(closed - nu) <= BRIDGE_TOLERANCE)

        calibration = calibrate_position_scale(
            model, beta, config.calibration_horizon or 100.0 * horizon, config.effective_calibration_seed
        )
        tolerance = 4.0 * math.sqrt(calibration.value) / math.sqrt(horizon)
        rows = []
        rtrw_passes = []
        tree_passes = []
        gaps: List[float] = []
        for index, seed in enumerate(self.repeat_seeds()):
            env = environment_for(model, replica_environment_seed(seed, 0))
            trajectory = run_rtrw(env, beta, horizon, derive_stream(seed, 0))
            estimate = trajectory.final_position / horizon
            rtrw_passes.append(abs(estimate - nu) <= tolerance)
            rows.append({"walk": "rtrw", "seed": seed, "estimate": estimate, "expected": nu, "tolerance": tolerance})
            if index == 0:
                gaps = [block.dkappa for block in trajectory.blocks()[1:]]
            if tree_model:
                window = window_for(self.law, replica_environment_seed(seed, 0), config.window_length)
                path = simulate_tree_walk(window, beta, int(horizon), derive_stream(seed, 1))
                tree_estimate = float(path.distance[-1]) / int(horizon)
                tree_passes.append(abs(tree_estimate - nu) <= tolerance)
                rows.append({"walk": "tree", "seed": seed, "estimate": tree_estimate, "expected": nu, "tolerance": tolerance})
        result.tables["speed"] = rows
        self._check(result, "trapped walk X_T/T", nu, [r["estimate"] for r in rows if r["walk"] == "rtrw"], f"|err|<=4*varsigma/sqrt(T)={tolerance:.3g}", majority_pass(rtrw_passes))
        if tree_model:
            self._check(result, "tree walk |X_n|/n", nu, [r["estimate"] for r in rows if r["walk"] == "tree"], f"|err|<=4*varsigma/sqrt(T)={tolerance:.3g}", majority_pass(tree_passes))
        if len(set(gaps)) >= 4:
            fit = fit_exponential_tail(gaps)
            result.tables["regeneration_tail"] = [{"rate": fit.rate, "intercept": fit.intercept, "points": fit.points, "blocks": len(gaps)}]

        if tree_model:
            rng = derive_stream(config.seed, 2)
            samples = sample_annealed_trap_times(self.law, beta, self.sizes.trap_samples, rng)
            self._record(result, compare_to_expected("E[eta_0] from fresh traps", samples, mean_eta0))
            env = build_tree_environment(self.law, beta, (0, self.sizes.environment_sites - 1), rng)
            self._record(result, compare_to_expected("mean of quenched site means", env.quenched_means(0, self.sizes.environment_sites), mean_eta0))

    # -- CLT suites -----------------------------------------------------------

    async def clt(self, result: SuiteResult) -> None:
        config = self.config
        mode = config.resolved_mode
        calibration = None
        rows = []
        outcomes = []
        for seed in self.repeat_seeds():
            outcome = await clt_experiment(config.model_copy(update={"seed": seed}), calibration=calibration)
            calibration = outcome.calibration
            outcomes.append(outcome)
            rows.append(
                {
                    "seed": seed,
                    "statistic": outcome.report.statistic,
                    "p_value": outcome.report.p_value,
                    "passed": outcome.report.passed,
                    "centring": outcome.centring,
                    "scale": outcome.scale,
                }
            )
        result.tables["ks"] = rows
        self._majority(result, f"{mode} KS vs normal ({config.centring} centring)", [o.report.p_value for o in outcomes], [o.report.passed for o in outcomes])

        model = trap_model_from_config(config, self.catalog)
        if mode == "annealed-position" and isinstance(model, UnitTraps):
            expected = 4.0 * config.beta / (config.beta + 1.0) ** 2
            self._record(result, ResultRecord("varsigma^2 block estimate", calibration.value, calibration.standard_error, expected))
        if mode == "quenched-position" and config.centring == "exact" and not isinstance(model, UnitTraps):
            await self._correction_necessity(result, model, calibration)
        if mode == "quenched-hitting":
            self._hitting_surrogate(result, model, outcomes[0].environment_seed)
        if mode == "quenched-tree-position":
            self._tree_centring(result, outcomes[0].tree)

    async def _correction_necessity(self, result: SuiteResult, model: Any, calibration: Any) -> None:
        config = self.config
        env_seed, correction = screen_environment(model, config.beta, config.horizon, config.seed)
        exact = await clt_experiment(config, environment_seed=env_seed, calibration=calibration)
        deterministic = await clt_experiment(
            config.model_copy(update={"centring": "deterministic"}), environment_seed=env_seed, calibration=calibration
        )
        result.tables["screened"] = [
            {"centring": "exact", "J": correction, "statistic": exact.report.statistic, "p_value": exact.report.p_value},
            {"centring": "deterministic", "J": correction, "statistic": deterministic.report.statistic, "p_value": deterministic.report.p_value},
        ]
        self._check(result, "screened environment, exact centring", f"p>{config.threshold:g}", exact.report.p_value, "KS", exact.report.passed)
        self._check(
            result,
            "screened environment, deterministic centring rejected",
            f"p<{config.threshold:g}",
            deterministic.report.p_value,
            "KS",
            not deterministic.report.passed,
        )
        offsets = deterministic.standardized
        self._record(
            result,
            ResultRecord(
                "uncentred offset vs G correction",
                float(offsets.mean()),
                float(offsets.std(ddof=1) / math.sqrt(len(offsets))),
                (exact.centring - deterministic.centring) / deterministic.scale,
            ),
        )

    def _tree_centring(self, result: SuiteResult, tree: TreeCentringOutcome) -> None:
        self._record(result, tree.record)
        self._check(
            result,
            "G correction explains window offsets",
            f">= {EXPLAINED_SHARE:g}",
            tree.explained,
            f"{len(tree.reference)} reference windows",
            tree.explained >= EXPLAINED_SHARE,
        )
        rows = [{"window": "fixed", **_offset_row(tree.fixed)}]
        rows += [{"window": f"reference-{i}", **_offset_row(item)} for i, item in enumerate(tree.reference)]
        result.tables["tree_windows"] = rows
        result.tables["tree_start_shift"] = [
            {"shift": tree.start_shift, "se": tree.start_shift_se, "residual_spread": tree.residual_spread, "explained": tree.explained}
        ]

    def _hitting_surrogate(self, result: SuiteResult, model: Any, environment_seed: int) -> None:
        env = environment_for(model, environment_seed)
        rows = []
        for n in dyadic_horizons(int(self.config.level)):
            exact, surrogate = hitting_centrings(env, self.config.beta, n)
            rows.append({"n": n, "H": exact, "H_tilde": surrogate, "scaled_gap": abs(surrogate - exact) / math.sqrt(n)})
        result.tables["hitting_centrings"] = rows
        if len(rows) < 2:
            return
        gaps = [row["scaled_gap"] for row in rows]
        half = len(gaps) // 2
        decays = gaps[-1] < gaps[0] and max(gaps[half:]) < max(gaps[:half])
        self._check(result, "|H_tilde - H|/sqrt(n) decays", f"< {gaps[0]:.4g}", gaps[-1], f"dyadic n {rows[0]['n']}..{rows[-1]['n']}", decays)

    # -- einstein ---------------------------------------------------------------

    async def einstein(self, result: SuiteResult) -> None:
        config = self.config
        law = self._require_law()
        betas = sorted(config.betas)
        rows = await einstein_sweep(law, betas, config.horizon, config.replicas, config.seed, self._threads)
        result.tables["einstein"] = [row.as_row() for row in rows]
        if rows:
            limit = rows[0].einstein_limit
            distances = [abs(row.closed_form - limit) for row in rows]
            monotone = all(b >= a for a, b in zip(distances, distances[1:]))
            self._check(result, "closed form monotone toward the limit", limit, [row.closed_form for row in rows], "|c - limit| non-decreasing in beta", monotone)
            if rows[0].beta <= 1.02:
                rel = abs(rows[0].closed_form - limit) / limit
                self._check(result, f"closed form within 5% of limit at beta={rows[0].beta:g}", limit, rows[0].closed_form, "rel<=0.05", rel <= 0.05)
            for row in rows:
                self._record(result, row.record())

        outcomes = []
        for seed in self.repeat_seeds():
            outcomes.append(
                await diffusivity_experiment(
                    law,
                    int(config.horizon),
                    config.replicas,
                    seed,
                    self._threads,
                    window_length=config.window_length,
                    threshold=config.threshold,
                )
            )
        self._majority(result, "unbiased tree walk vs half-normal", [o.report.p_value for o in outcomes], [o.report.passed for o in outcomes])

    # -- coupling -----------------------------------------------------------------

    async def coupling(self, result: SuiteResult) -> None:
        config = self.config
        law = self._require_law()
        outcomes = []
        for seed in self.repeat_seeds():
            outcomes.append(
                await coupling_experiment(
                    law,
                    config.beta,
                    int(config.horizon),
                    config.replicas,
                    seed,
                    self._threads,
                    window_length=config.window_length,
                    profile_horizon=self.sizes.coupling_profile_horizon,
                    threshold=config.threshold,
                )
            )
        profile = outcomes[0].profile
        result.tables["coupling_profile"] = [
            {"n": n, "max_deviation": d, "ratio_to_log": r}
            for n, d, r in zip(profile.horizons, profile.max_deviation, profile.ratio_to_log)
        ]
        bounded = []
        for outcome in outcomes:
            ratios = outcome.profile.ratio_to_log
            half = max(1, len(ratios) // 2)
            base = max(max(ratios[:half]), 1.0)
            bounded.append(max(ratios[half:] or ratios) <= 2.0 * base)
        self._check(result, "walk-to-backbone deviation / log n bounded", "ratio <= 2x early max", [max(o.profile.ratio_to_log) for o in outcomes], "dyadic n", majority_pass(bounded))
        self._majority(result, "tree walk backbone vs trapped walk (two-sample KS)", [o.report.p_value for o in outcomes], [o.report.passed for o in outcomes])

    # -- necessity ----------------------------------------------------------------

    def control_beta(self, law: OffspringLaw) -> float:
        if self.config.control_beta is not None:
            return self.config.control_beta
        return 1.0 + 0.85 * (1.0 / math.sqrt(law.mean_mu) - 1.0)

    async def necessity(self, result: SuiteResult) -> None:
        config = self.config
        law = self._require_law()
        report = regime(law, config.beta, config.delta)
        self._check(result, "regime flags necessity violation", True, report.necessity_violation, f"beta^2*mu={report.beta_sq_mu:.4g}", report.necessity_violation)
        scales = config.probe_scales
        truncation = config.probe_truncation
        probe = divergence_probe(law, config.beta, derive_stream(config.seed, 0), scales, truncation)
        control_beta = self.control_beta(law)
        control = divergence_probe(law, control_beta, derive_stream(config.seed, 1), scales, truncation)
        result.tables["divergence"] = [
            {
                "beta": run.beta,
                "beta_sq_mu": run.beta_sq_mu,
                "scale": scale,
                "cap": truncation * truncation * scale,
                "estimate": estimate,
            }
            for run in (probe, control)
            for scale, estimate in zip(run.scales, run.estimates)
        ]
        self._check(result, f"second moment grows without plateau beta={config.beta:g}", "strictly increasing", probe.estimates, "last change >= 10%", probe.divergence_consistent)
        self._check(result, f"second moment stabilizes beta={control_beta:.4g}", "stable", control.estimates, "last change < 10%", control.stable)
