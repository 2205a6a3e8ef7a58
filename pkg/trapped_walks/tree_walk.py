"""Biased walks on finite trees and on Z: kernels, exact solves, simulation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .errors import DegenerateTreeError, DomainError, SingularSystemError
from .trees import ANCESTOR, BranchForest, BranchTree, RootedTree, TreeArena, generation_sizes

DENSE_LIMIT = 2000
RESIDUAL_TOLERANCE = 1e-10


class KernelMode(str, Enum):
    ROOT_REFLECTING = "root-reflecting"
    ANCESTOR_ABSORBING = "ancestor-absorbing"


@dataclass(frozen=True, eq=False)
class WalkKernel:
    """Nearest-neighbour walk with parent weight 1 and child weight beta.

    In ancestor-absorbing mode the state space gains one extra state (index
    ``tree.size``) for the ancestor, addressed by the ``ANCESTOR`` vertex id.
    """

    beta: float
    tree: Union[RootedTree, BranchTree]
    mode: Optional[KernelMode] = None
    up_probability: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise DomainError(f"Bias must be positive, got {self.beta}.")
        mode = self.mode
        if mode is None:
            mode = KernelMode.ANCESTOR_ABSORBING if isinstance(self.tree, BranchTree) else KernelMode.ROOT_REFLECTING
        object.__setattr__(self, "mode", KernelMode(mode))
        arena = self.arena
        roots = np.zeros(arena.size, dtype=bool)
        roots[0] = True
        object.__setattr__(
            self,
            "up_probability",
            _up_probabilities(arena.out_degree, self.beta, roots, self.absorbing),
        )

    @property
    def arena(self) -> RootedTree:
        return self.tree.inner if isinstance(self.tree, BranchTree) else self.tree

    @property
    def absorbing(self) -> bool:
        return self.mode is KernelMode.ANCESTOR_ABSORBING

    @property
    def n_states(self) -> int:
        return self.arena.size + (1 if self.absorbing else 0)

    def state(self, vertex: int) -> int:
        if vertex == ANCESTOR:
            if not self.absorbing:
                raise ValueError("Root-reflecting kernels have no ancestor state.")
            return self.arena.size
        if not 0 <= vertex < self.arena.size:
            raise ValueError(f"Vertex {vertex} is not in the tree.")
        return int(vertex)

    def vertex(self, state: int) -> int:
        return ANCESTOR if self.absorbing and state == self.arena.size else int(state)


@dataclass
class HittingSolve:
    """Per-state solution of a first-step system; NaN where the state was not solved for."""

    values: np.ndarray
    residual: float


@dataclass
class ExcursionSample:
    times: np.ndarray
    returns: np.ndarray


def _up_probabilities(out_degree: np.ndarray, beta: float, roots: np.ndarray, absorbing: bool) -> np.ndarray:
    d = out_degree.astype(float)
    up = 1.0 / (1.0 + beta * d)
    if absorbing:
        up[roots] = (beta + 1.0) / (beta * (d[roots] + 1.0) + 1.0)
    else:
        up[roots] = 0.0
    return up


def transition_row(kernel: WalkKernel, x: int) -> List[Tuple[int, float]]:
    if x == ANCESTOR:
        kernel.state(x)
        return [(ANCESTOR, 1.0)]
    arena = kernel.arena
    kernel.state(x)
    children = arena.children(x)
    if x == 0 and not kernel.absorbing and children.size == 0:
        raise DegenerateTreeError("A single-vertex tree has no walk.")
    up = float(kernel.up_probability[x])
    row: List[Tuple[int, float]] = []
    if up > 0:
        row.append((int(arena.parent[x]) if x != 0 else ANCESTOR, up))
    if children.size:
        share = (1.0 - up) / children.size
        row.extend((int(c), share) for c in children)
    return row


def transition_matrix(kernel: WalkKernel) -> sparse.csr_matrix:
    arena = kernel.arena
    n = arena.size
    if n == 1 and not kernel.absorbing:
        raise DegenerateTreeError("A single-vertex tree has no walk.")
    up = kernel.up_probability
    degree = arena.out_degree
    vertices = np.arange(n)

    has_up = up > 0
    up_rows = vertices[has_up]
    up_cols = arena.parent[has_up].copy()
    up_cols[up_cols == ANCESTOR] = n

    child_cols = vertices[1:]
    child_rows = arena.parent[1:]
    child_vals = (1.0 - up[child_rows]) / degree[child_rows]

    rows = [up_rows, child_rows]
    cols = [up_cols, child_cols]
    vals = [up[has_up], child_vals]
    if kernel.absorbing:
        rows.append(np.array([n]))
        cols.append(np.array([n]))
        vals.append(np.array([1.0]))
    size = kernel.n_states
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )


def transition_rows_csv(kernel: WalkKernel) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["vertex", "target", "probability"])
    vertices = list(range(kernel.arena.size)) + ([ANCESTOR] if kernel.absorbing else [])
    for x in vertices:
        for y, p in transition_row(kernel, x):
            writer.writerow([_label(x), _label(y), repr(p)])
    return buffer.getvalue()


def _label(vertex: int) -> str:
    return "ancestor" if vertex == ANCESTOR else str(vertex)


def _solve(matrix: sparse.spmatrix, rhs: np.ndarray) -> Tuple[np.ndarray, float]:
    """Solve ``matrix @ x = rhs``; dense up to DENSE_LIMIT unknowns, sparse beyond."""
    size = matrix.shape[0]
    if size == 0:
        return np.zeros(0), 0.0
    try:
        if size <= DENSE_LIMIT:
            solution = np.linalg.solve(matrix.toarray(), rhs)
        else:
            solution = spsolve(sparse.csc_matrix(matrix), rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularSystemError(f"First-step system is singular: {exc}") from exc
    solution = np.atleast_1d(np.asarray(solution, dtype=float))
    if not np.all(np.isfinite(solution)):
        raise SingularSystemError("First-step system produced non-finite values.")
    residual = float(np.max(np.abs(matrix @ solution - rhs)))
    scale = max(1.0, float(np.max(np.abs(solution))))
    if residual > RESIDUAL_TOLERANCE * scale:
        raise SingularSystemError(f"Residual {residual:.3e} exceeds tolerance.")
    return solution, residual


def _reachable(matrix: sparse.csr_matrix, sources: Iterable[int]) -> np.ndarray:
    mask = np.zeros(matrix.shape[0], dtype=bool)
    for source in sources:
        if not mask[source]:
            order = csgraph.breadth_first_order(matrix, source, directed=True, return_predecessors=False)
            mask[order] = True
    return mask


def solve_hitting(kernel: WalkKernel, target: int, sources: Sequence[int]) -> HittingSolve:
    """Expected hitting times of ``target`` for every state reachable from ``sources``."""
    P = transition_matrix(kernel)
    t = kernel.state(target)
    source_states = [kernel.state(s) for s in sources]

    stopped = P.tolil()
    stopped.rows[t] = []
    stopped.data[t] = []
    stopped = stopped.tocsr()
    forward = _reachable(stopped, source_states)
    backward = _reachable(P.T.tocsr(), [t])
    if np.any(forward & ~backward):
        raise SingularSystemError(f"Target {target} is not hit almost surely from {list(sources)}.")

    unknown = np.flatnonzero(forward)
    unknown = unknown[unknown != t]
    values = np.full(kernel.n_states, np.nan)
    values[t] = 0.0
    Q = P[unknown][:, unknown]
    A = sparse.identity(unknown.size, format="csr") - Q
    solution, residual = _solve(A, np.ones(unknown.size))
    values[unknown] = solution
    return HittingSolve(values=values, residual=residual)


def expected_hitting_time(kernel: WalkKernel, start: int, target: int, *, return_time: bool = False) -> float:
    """E_start[tau_target]; with ``return_time`` and start == target, E[tau^+]."""
    if start == target and not return_time:
        kernel.state(start)
        return 0.0
    if not return_time:
        solve = solve_hitting(kernel, target, [start])
        return float(solve.values[kernel.state(start)])
    row = transition_row(kernel, start)
    neighbours = [y for y, _ in row if y != target]
    solve = solve_hitting(kernel, target, neighbours) if neighbours else None
    total = 1.0
    for y, p in row:
        if y != target:
            total += p * float(solve.values[kernel.state(y)])
    return total


def absorption_probabilities(kernel: WalkKernel, targets: Iterable[int], avoid: Iterable[int]) -> HittingSolve:
    """P_x(hit ``targets`` before ``avoid``) for every state x."""
    P = transition_matrix(kernel)
    target_states = np.array(sorted({kernel.state(v) for v in targets}), dtype=np.int64)
    avoid_states = np.array(sorted({kernel.state(v) for v in avoid}), dtype=np.int64)
    if np.intersect1d(target_states, avoid_states).size:
        raise ValueError("Targets and avoided vertices must be disjoint.")
    boundary = np.zeros(kernel.n_states, dtype=bool)
    boundary[target_states] = True
    boundary[avoid_states] = True
    unknown = np.flatnonzero(~boundary)
    values = np.zeros(kernel.n_states)
    values[target_states] = 1.0
    Q = P[unknown][:, unknown]
    rhs = np.asarray(P[unknown][:, target_states].sum(axis=1)).ravel()
    A = sparse.identity(unknown.size, format="csr") - Q
    solution, residual = _solve(A, rhs)
    values[unknown] = solution
    return HittingSolve(values=np.clip(values, 0.0, 1.0), residual=residual)


def hitting_probability(
    kernel: WalkKernel,
    start: int,
    targets: Iterable[int],
    avoid: Iterable[int],
) -> float:
    targets = list(targets)
    avoid = list(avoid)
    if start in targets:
        return 1.0
    if start in avoid:
        return 0.0
    solve = absorption_probabilities(kernel, targets, avoid)
    return float(solve.values[kernel.state(start)])


def _reflecting_blocks(tree: RootedTree, beta: float) -> Tuple[WalkKernel, np.ndarray, sparse.csr_matrix]:
    kernel = WalkKernel(beta, tree, KernelMode.ROOT_REFLECTING)
    if tree.num_children(0) == 0:
        raise DegenerateTreeError("Root has no children; the return time is undefined.")
    P = transition_matrix(kernel)
    alpha = np.asarray(P[0, 1:].todense()).ravel()
    Q = P[1:, 1:].tocsr()
    return kernel, alpha, Q


def visit_product_matrix(tree: RootedTree, beta: float) -> np.ndarray:
    """Matrix of E_rho[v_x v_y] for the walk from rho until its first return.

    ``v_rho`` is 1: the root is counted once, at the return time.
    """
    _, alpha, Q = _reflecting_blocks(tree, beta)
    n = tree.size
    m = n - 1
    fundamental, _ = _solve(sparse.identity(m, format="csr") - Q, np.eye(m))
    fundamental = fundamental.reshape(m, m)
    g = alpha @ fundamental
    inner = g[:, None] * fundamental
    inner = inner + inner.T - np.diag(g)
    product = np.empty((n, n))
    product[0, 0] = 1.0
    product[0, 1:] = g
    product[1:, 0] = g
    product[1:, 1:] = inner
    return product


def visit_covariance_exact(tree: RootedTree, beta: float, x: int, y: int) -> float:
    for v in (x, y):
        if not 0 <= v < tree.size:
            raise ValueError(f"Vertex {v} is not in the tree.")
    return float(visit_product_matrix(tree, beta)[x, y])


def second_moment_return_time(tree: RootedTree, beta: float) -> float:
    """E_rho[(tau^+_rho)^2] from the first- and second-moment hitting systems."""
    _, alpha, Q = _reflecting_blocks(tree, beta)
    A = sparse.identity(Q.shape[0], format="csr") - Q
    first, _ = _solve(A, np.ones(Q.shape[0]))
    second, _ = _solve(A, 1.0 + 2.0 * (Q @ first))
    return float(alpha @ (1.0 + 2.0 * first + second))


def expected_return_time_formula(tree: RootedTree, beta: float) -> float:
    sizes = generation_sizes(tree)
    if sizes.size < 2 or sizes[1] == 0:
        raise DegenerateTreeError("Return-time formula needs Z_1 > 0.")
    n = np.arange(1, sizes.size)
    return float(2.0 * np.sum(sizes[1:] * beta ** (n - 1.0)) / sizes[1])


def _require_transient(beta: float) -> None:
    if not beta > 1:
        raise DomainError(f"Closed form needs beta > 1, got {beta}.")


def gamblers_ruin(beta: float, k: int, n: int) -> float:
    """P_0(tau_k < tau_n) for the walk stepping +1 with probability beta/(beta+1)."""
    _require_transient(beta)
    if not k < 0 < n:
        raise DomainError("Gambler's ruin needs k < 0 < n.")
    # (beta^n - 1)/(beta^(n-k) - 1), rescaled by beta^-(n-k)
    return float(beta**k * (1.0 - beta ** (-n)) / (1.0 - beta ** (k - n)))


def gamblers_win(beta: float, k: int, n: int) -> float:
    """P_0(tau_n < tau_k) = (beta^(n-k) - beta^n)/(beta^(n-k) - 1)."""
    _require_transient(beta)
    if not k < 0 < n:
        raise DomainError("Gambler's ruin needs k < 0 < n.")
    return float((1.0 - beta**k) / (1.0 - beta ** (k - n)))


def expected_local_times(beta: float, ks: np.ndarray, n: int) -> np.ndarray:
    """E_0[L(k, tau_n)] for an array of sites k < n."""
    _require_transient(beta)
    ks = np.asarray(ks, dtype=float)
    if np.any(ks >= n):
        raise DomainError("Local time needs k < n.")
    ratio = (beta + 1.0) / (beta - 1.0)
    negative = beta**ks * (1.0 - beta ** (-float(n))) * ratio
    nonnegative = (1.0 - beta ** (ks - n)) * ratio
    return np.where(ks < 0, negative, nonnegative)


def expected_local_time(beta: float, k: int, n: int) -> float:
    if k >= n:
        raise DomainError(f"Local time needs k < n, got k={k}, n={n}.")
    return float(expected_local_times(beta, np.array([k]), n)[0])


def branching_escape_probability(beta: float, depth_w: int, depth_x: int, depth_y: int) -> float:
    """q_w(rho, {x, y}): from w, probability to hit rho before x or y."""
    _require_transient(beta)
    if not (depth_x > depth_w >= 1 and depth_y > depth_w):
        raise DomainError("Escape probability needs depth_x, depth_y > depth_w >= 1.")
    w, x, y = float(depth_w), float(depth_x), float(depth_y)
    numerator = (beta ** (y - w) - 1.0) * (beta ** (x - w) - 1.0)
    denominator = 2.0 * beta ** (y + x - w) - beta ** (y + x - 2 * w) - beta**x - beta**y + 1.0
    return float(numerator / denominator)


def branching_escape_limit(beta: float, depth_w: int) -> float:
    """Limit of the escape probability as both arms become infinite."""
    _require_transient(beta)
    return 1.0 / (2.0 * beta**depth_w - 1.0)


def segment_kernel(beta: float, low: int, high: int) -> Tuple[np.ndarray, np.ndarray]:
    """Interior sites and sub-stochastic kernel of the walk on [low, high] killed at both ends."""
    sites = np.arange(low + 1, high)
    up = beta / (beta + 1.0)
    size = sites.size
    Q = sparse.diags([np.full(size - 1, up), np.full(size - 1, 1.0 - up)], [1, -1], shape=(size, size), format="csr")
    return sites, Q


def segment_absorption_probability(beta: float, k: int, n: int) -> float:
    """Brute-force P_0(tau_k < tau_n) by a linear solve on the interior of [k, n]."""
    if not k < 0 < n:
        raise DomainError("Segment solve needs k < 0 < n.")
    sites, Q = segment_kernel(beta, k, n)
    rhs = np.zeros(sites.size)
    rhs[0] = 1.0 / (beta + 1.0)
    solution, _ = _solve(sparse.identity(sites.size, format="csr") - Q, rhs)
    return float(solution[np.flatnonzero(sites == 0)[0]])


def segment_local_times(beta: float, low: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Brute-force E_0[L(k, tau_n)] for low < k < n, killing the walk at ``low``."""
    sites, Q = segment_kernel(beta, low, n)
    rhs = np.zeros(sites.size)
    rhs[np.flatnonzero(sites == 0)[0]] = 1.0
    # Row of the fundamental matrix at 0 solves x (I - Q) = e_0.
    visits, _ = _solve((sparse.identity(sites.size, format="csr") - Q).T.tocsr(), rhs)
    return sites, visits


def visit_product_bound(tree: RootedTree, beta: float, x: int, y: int) -> Tuple[str, float]:
    """Case label and explicit upper bound for E_rho[v_x v_y].

    Bound is C (|c(x)|beta + 1)(|c(y)|beta + 1) beta^(|x|+|y|) with the
    constant of the matching case.
    """
    _require_transient(beta)
    cx = tree.num_children(x)
    cy = tree.num_children(y)
    scale = (cx * beta + 1.0) * (cy * beta + 1.0) * beta ** float(tree.depth[x] + tree.depth[y])
    if x == 0 or y == 0:
        return "root", max(1.0, 1.0 / (beta - 1.0)) * scale
    w = tree.lowest_common_ancestor(x, y)
    if w == 0:
        return "disjoint", 0.0
    if x == y:
        return "case1", 2.0 / (beta - 1.0) ** 2 * scale
    if w in (x, y):
        return "case2", 2.0 * beta / (beta - 1.0) ** 3 * scale
    return "case3", 8.0 * beta**4 / (beta - 1.0) ** 6 * scale


def excursion_probability(buds: int, beta: float) -> float:
    """p_ex: chance that W leaves rho into the trap rather than to the ancestor."""
    return beta * buds / (beta * (buds + 1.0) + 1.0)


@dataclass(frozen=True)
class _Tables:
    parent: np.ndarray
    up: np.ndarray
    offsets: np.ndarray
    children: np.ndarray
    degree: np.ndarray


def _tables(arena: TreeArena, beta: float, roots: np.ndarray, absorbing: bool) -> _Tables:
    mask = np.zeros(arena.size, dtype=bool)
    mask[roots] = True
    degree = arena.out_degree
    return _Tables(
        parent=arena.parent,
        up=_up_probabilities(degree, beta, mask, absorbing),
        offsets=arena.child_offsets,
        children=arena.child_index,
        degree=degree,
    )


def _run_walkers(
    tables: _Tables,
    starts: np.ndarray,
    stop: int,
    rng: np.random.Generator,
    visits: Optional[np.ndarray] = None,
) -> ExcursionSample:
    """Advance all walkers in lock-step until each first steps onto ``stop``.

    ``stop`` is either ANCESTOR or a root id shared by every walker.
    """
    count = starts.size
    position = starts.astype(np.int64).copy()
    times = np.zeros(count, dtype=np.int64)
    returns = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    while active.size:
        here = position[active]
        u = rng.random(active.size)
        up_prob = tables.up[here]
        up = u < up_prob
        nxt = tables.parent[here].copy()
        down = ~up
        if down.any():
            at = here[down]
            frac = (u[down] - up_prob[down]) / (1.0 - up_prob[down])
            pick = np.minimum((frac * tables.degree[at]).astype(np.int64), tables.degree[at] - 1)
            nxt[down] = tables.children[tables.offsets[at] + pick]
        times[active] += 1
        position[active] = nxt
        returns[active] += nxt == starts[active]
        if visits is not None:
            inside = nxt != ANCESTOR
            np.add.at(visits, (active[inside], nxt[inside]), 1)
        active = active[nxt != stop]
    return ExcursionSample(times=times, returns=returns)


def sample_excursions(
    trap: Union[BranchTree, BranchForest],
    beta: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> ExcursionSample:
    """Absorption times of W started at rho, vectorized over walkers.

    A BranchTree runs ``size`` walkers on the same trap; a BranchForest runs
    one walker per trap. ``returns`` counts visits to rho after time 0.
    """
    if not beta > 0:
        raise DomainError(f"Bias must be positive, got {beta}.")
    if isinstance(trap, BranchTree):
        arena: TreeArena = trap.inner
        roots = np.array([0], dtype=np.int64)
        starts = np.zeros(1 if size is None else size, dtype=np.int64)
    else:
        arena = trap
        roots = trap.roots
        starts = trap.roots
    return _run_walkers(_tables(arena, beta, roots, absorbing=True), starts, ANCESTOR, rng)


def simulate_excursion(branch: BranchTree, beta: float, rng: np.random.Generator) -> int:
    return int(sample_excursions(branch, beta, rng, size=1).times[0])


def sample_return_visits(tree: RootedTree, beta: float, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return times and per-vertex visit counts of ``size`` root excursions."""
    if tree.num_children(0) == 0:
        raise DegenerateTreeError("Root has no children; the return time is undefined.")
    visits = np.zeros((size, tree.size), dtype=np.int64)
    tables = _tables(tree, beta, np.array([0]), absorbing=False)
    sample = _run_walkers(tables, np.zeros(size, dtype=np.int64), 0, rng, visits=visits)
    return sample.times, visits


def simulate_segment_walks(beta: float, level: int, low: int, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Run ``size`` walks from 0 until they hit ``level`` or ``low``.

    Returns (hit_level_first, visits to 0 before stopping) per walker.
    """
    position = np.zeros(size, dtype=np.int64)
    at_zero = np.ones(size, dtype=np.int64)
    active = np.arange(size)
    up_prob = beta / (beta + 1.0)
    while active.size:
        steps = np.where(rng.random(active.size) < up_prob, 1, -1)
        position[active] += steps
        at_zero[active] += position[active] == 0
        active = active[(position[active] < level) & (position[active] > low)]
    return position >= level, at_zero


def mean_excursion_count(buds: int, beta: float) -> float:
    """E[N] for a trap with ``buds`` children at rho: p_ex / (1 - p_ex)."""
    p = excursion_probability(buds, beta)
    return p / (1.0 - p) if p < 1 else math.inf
