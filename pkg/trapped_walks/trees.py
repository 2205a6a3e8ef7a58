"""Arena-based finite trees and Galton-Watson samplers.

Vertices are integer ids into flat arrays. Children of a vertex are the
slice ``child_index[child_offsets[v]:child_offsets[v + 1]]``; samplers emit
trees in breadth-first order so that slice is a contiguous id range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import CapExceededError, DegenerateTreeError, InvalidLawError
from .offspring import OffspringLaw, size_biased
from .streams import StreamNamespace, child_seed, derive_stream

logger = logging.getLogger(__name__)

ROOT_PARENT = -1
# The extra vertex above the root of a branch trap shares the root sentinel.
ANCESTOR = -1
DEFAULT_SIZE_CAP = 10**7


@dataclass(frozen=True, eq=False)
class TreeArena:
    parent: np.ndarray
    depth: np.ndarray
    child_offsets: np.ndarray
    child_index: np.ndarray

    @property
    def size(self) -> int:
        return int(self.parent.size)

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.child_offsets)

    @property
    def height(self) -> int:
        return int(self.depth.max())

    def children(self, x: int) -> np.ndarray:
        return self.child_index[self.child_offsets[x] : self.child_offsets[x + 1]]

    def num_children(self, x: int) -> int:
        return int(self.child_offsets[x + 1] - self.child_offsets[x])


@dataclass(frozen=True, eq=False)
class RootedTree(TreeArena):
    """Finite rooted tree with root 0."""

    @classmethod
    def from_parents(cls, parents: Sequence[int]) -> "RootedTree":
        parent = np.asarray(parents, dtype=np.int64)
        n = parent.size
        if n == 0 or parent[0] != ROOT_PARENT:
            raise DegenerateTreeError("Vertex 0 must be the root with no parent.")
        body = parent[1:]
        if np.any(body < 0) or np.any(body >= n):
            raise DegenerateTreeError("Parent ids must reference existing vertices.")
        counts = np.bincount(body, minlength=n)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        child_index = (np.argsort(body, kind="stable") + 1).astype(np.int64)

        depth = np.full(n, -1, dtype=np.int64)
        depth[0] = 0
        frontier = np.array([0], dtype=np.int64)
        while frontier.size:
            nxt = np.concatenate([child_index[offsets[v] : offsets[v + 1]] for v in frontier])
            if nxt.size and np.any(depth[nxt] >= 0):
                raise DegenerateTreeError("Parent array contains a cycle.")
            depth[nxt] = depth[parent[nxt]] + 1
            frontier = nxt
        if np.any(depth < 0):
            raise DegenerateTreeError("Parent array is not connected to the root.")
        return cls(parent, depth, offsets, child_index)

    def path_to_root(self, x: int) -> List[int]:
        path = [int(x)]
        while self.parent[path[-1]] != ROOT_PARENT:
            path.append(int(self.parent[path[-1]]))
        return path

    def lowest_common_ancestor(self, x: int, y: int) -> int:
        x, y = int(x), int(y)
        while self.depth[x] > self.depth[y]:
            x = int(self.parent[x])
        while self.depth[y] > self.depth[x]:
            y = int(self.parent[y])
        while x != y:
            x, y = int(self.parent[x]), int(self.parent[y])
        return x

    def subtree(self, x: int) -> "RootedTree":
        """Copy of the subtree rooted at ``x``, relabelled breadth-first."""
        order = [int(x)]
        head = 0
        while head < len(order):
            order.extend(int(c) for c in self.children(order[head]))
            head += 1
        relabel = {old: new for new, old in enumerate(order)}
        parents = [ROOT_PARENT] + [relabel[int(self.parent[v])] for v in order[1:]]
        return RootedTree.from_parents(parents)


@dataclass(frozen=True, eq=False)
class BranchTree:
    """Trap tree: ``inner`` rooted at rho, plus an absorbing ancestor above rho."""

    inner: RootedTree

    has_ancestor = True

    @property
    def size(self) -> int:
        return self.inner.size

    @property
    def buds(self) -> int:
        return self.inner.num_children(0)


@dataclass(frozen=True, eq=False)
class BranchForest(TreeArena):
    """Many independent branch traps stored in one arena; each root's parent is its own ancestor."""

    roots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _grow(
    law: OffspringLaw,
    rng: np.random.Generator,
    root_counts: np.ndarray,
    size_cap: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    roots = root_counts.size
    if roots > size_cap:
        raise CapExceededError(0, size_cap)
    parents = [np.full(roots, ROOT_PARENT, dtype=np.int64)]
    depths = [np.zeros(roots, dtype=np.int64)]
    counts = [root_counts.astype(np.int64)]
    frontier_ids = np.arange(roots, dtype=np.int64)
    frontier_counts = counts[0]
    total = roots
    generation = 0
    while True:
        born = int(frontier_counts.sum())
        if born == 0:
            break
        if total + born > size_cap:
            raise CapExceededError(total, size_cap)
        generation += 1
        parents.append(np.repeat(frontier_ids, frontier_counts))
        depths.append(np.full(born, generation, dtype=np.int64))
        frontier_ids = np.arange(total, total + born, dtype=np.int64)
        frontier_counts = law.sample(rng, born)
        counts.append(frontier_counts)
        total += born
    parent = np.concatenate(parents)
    depth = np.concatenate(depths)
    offsets = np.concatenate([[0], np.cumsum(np.concatenate(counts))]).astype(np.int64)
    child_index = np.arange(roots, total, dtype=np.int64)
    return parent, depth, offsets, child_index


def _require_subcritical(law: OffspringLaw) -> None:
    if not law.subcritical:
        raise InvalidLawError(f"Offspring law is not subcritical (mu = {law.mean_mu}).")


def sample_gw_tree(
    law: OffspringLaw,
    rng: np.random.Generator,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> RootedTree:
    _require_subcritical(law)
    if size_cap < 1:
        raise ValueError("size_cap must be positive.")
    parent, depth, offsets, child_index = _grow(law, rng, law.sample(rng, 1), size_cap)
    return RootedTree(parent, depth, offsets, child_index)


def sample_branch_tree(
    law: OffspringLaw,
    rng: np.random.Generator,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> BranchTree:
    _require_subcritical(law)
    buds = size_biased(law).sample(rng, 1) - 1
    parent, depth, offsets, child_index = _grow(law, rng, buds, size_cap)
    return BranchTree(RootedTree(parent, depth, offsets, child_index))


def sample_branch_forest(
    law: OffspringLaw,
    count: int,
    rng: np.random.Generator,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> BranchForest:
    _require_subcritical(law)
    buds = size_biased(law).sample(rng, count) - 1
    parent, depth, offsets, child_index = _grow(law, rng, buds, size_cap)
    return BranchForest(parent, depth, offsets, child_index, roots=np.arange(count, dtype=np.int64))


def generation_sizes(tree: TreeArena) -> np.ndarray:
    return np.bincount(tree.depth)


def sample_generation_profiles(
    law: OffspringLaw,
    count: int,
    generations: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(count, generations + 1) array of Z_0..Z_n for independent trees, without building them."""
    if count < 1 or generations < 0:
        raise ValueError("Need count >= 1 and generations >= 0.")
    profiles = np.zeros((count, generations + 1), dtype=np.int64)
    z = np.ones(count, dtype=np.int64)
    profiles[:, 0] = z
    owners = np.arange(count)
    for n in range(1, generations + 1):
        draws = law.sample(rng, int(z.sum()))
        z = np.bincount(np.repeat(owners, z), weights=draws, minlength=count).astype(np.int64)
        profiles[:, n] = z
    return profiles


def total_progeny(tree: TreeArena) -> int:
    return tree.size


def to_edge_list(tree: RootedTree) -> str:
    lines = [f"{int(tree.parent[v])} {v}" for v in range(1, tree.size)]
    return "\n".join(lines) + ("\n" if lines else "")


def from_edge_list(text: str) -> RootedTree:
    edges = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DegenerateTreeError(f"Line {number}: expected 'parent_id child_id'.")
        edges.append((int(parts[0]), int(parts[1])))
    size = 1 + max((child for _, child in edges), default=0)
    parents = [ROOT_PARENT] * size
    seen = set()
    for parent, child in edges:
        if child == 0 or child in seen:
            raise DegenerateTreeError(f"Vertex {child} has more than one parent.")
        seen.add(child)
        parents[child] = parent
    if len(seen) != size - 1:
        raise DegenerateTreeError("Edge list leaves vertices without a parent.")
    return RootedTree.from_parents(parents)


@dataclass(eq=False)
class KestenWindow:
    """Finite window rho_0..rho_L of the conditioned tree.

    ``traps[k]`` holds backbone vertex rho_k as its root together with the
    rho_k's non-backbone children and their subtrees. Site k is drawn from
    its own stream, so extending the window never changes existing sites.
    """

    law: OffspringLaw
    seed: int
    traps: List[BranchTree]
    size_cap: int = DEFAULT_SIZE_CAP
    quenched_means: Dict[Tuple[float, int], float] = field(default_factory=dict, repr=False)

    @property
    def length(self) -> int:
        return len(self.traps) - 1

    @property
    def backbone(self) -> List[int]:
        return list(range(len(self.traps)))

    def branches(self, k: int) -> List[RootedTree]:
        trap = self.traps[k].inner
        return [trap.subtree(int(bud)) for bud in trap.children(0)]

    def extend(self) -> None:
        old = len(self.traps)
        for k in range(old, 2 * old):
            self.traps.append(_window_site(self.law, self.seed, k, self.size_cap))
        logger.debug("Extended Kesten window from %d to %d sites", old, len(self.traps))

    def ensure(self, k: int) -> None:
        while k >= len(self.traps):
            self.extend()


def _window_site(law: OffspringLaw, seed: int, k: int, size_cap: int) -> BranchTree:
    return sample_branch_tree(law, derive_stream(seed, k, StreamNamespace.WINDOW), size_cap)


def sample_kesten_window(
    law: OffspringLaw,
    L: int,
    rng: np.random.Generator,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> KestenWindow:
    _require_subcritical(law)
    if L < 1:
        raise ValueError("Window length must be at least 1.")
    seed = child_seed(rng)
    traps = [_window_site(law, seed, k, size_cap) for k in range(L + 1)]
    return KestenWindow(law=law, seed=seed, traps=traps, size_cap=size_cap)


def branch_heights(window: KestenWindow) -> np.ndarray:
    """Height of the decoration at each backbone site (0 when it has no buds)."""
    return np.array([trap.inner.height for trap in window.traps], dtype=np.int64)
