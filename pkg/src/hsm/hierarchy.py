"""DAGs over disjoint parameter groups and the group structures they induce.

Nodes and coordinates are 0-based internally. The text format and the CLI
use 1-based indices and translate at the boundary.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Violation:
    """First broken invariant found by :func:`validate`."""

    kind: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


class HierarchyError(ValueError):
    """Raised when an operation needs a valid hierarchy and gets a bad one."""


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """DAG whose nodes are disjoint sets of coordinates.

    Parameters
    ----------
    p : int
        Total number of coordinates.
    nodes : tuple of ndarray
        ``nodes[i]`` holds the 0-based coordinates of node i.
    edges : tuple of (int, int)
        Directed edges ``(parent, child)`` between node positions.
    labels : tuple of str, optional
        Display names for the nodes (the ids used in hierarchy files).
    """

    p: int
    nodes: tuple
    edges: tuple = ()
    labels: Optional[tuple] = None

    @classmethod
    def from_lists(cls, p, nodes, edges=(), labels=None):
        """Build from plain Python sequences (0-based)."""
        arrs = tuple(np.asarray(sorted(s), dtype=np.int64) for s in nodes)
        eds = tuple((int(a), int(b)) for a, b in edges)
        labs = None if labels is None else tuple(str(x) for x in labels)
        return cls(int(p), arrs, eds, labs)

    @classmethod
    def path(cls, node_sizes):
        """Directed path s_1 -> s_2 -> ... over contiguous coordinate blocks."""
        sizes = [int(s) for s in node_sizes]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        nodes = [range(bounds[i], bounds[i + 1]) for i in range(len(sizes))]
        edges = [(i, i + 1) for i in range(len(sizes) - 1)]
        return cls.from_lists(int(bounds[-1]), nodes, edges)

    @classmethod
    def edgeless(cls, node_sizes):
        """Nodes over contiguous blocks with no edges."""
        h = cls.path(node_sizes)
        return cls(h.p, h.nodes, ())

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def node_sizes(self):
        return np.array([len(s) for s in self.nodes], dtype=np.int64)

    def label(self, i):
        return self.labels[i] if self.labels is not None else str(i + 1)

    @cached_property
    def children(self):
        out = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            out[a].append(b)
        return tuple(tuple(sorted(set(c))) for c in out)

    @cached_property
    def parents(self):
        out = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            out[b].append(a)
        return tuple(tuple(sorted(set(c))) for c in out)

    @cached_property
    def topological_order(self):
        """Kahn order, smallest ready node first; None if there is a cycle."""
        n = self.n_nodes
        indeg = [len(self.parents[i]) for i in range(n)]
        ready = [i for i in range(n) if indeg[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for c in self.children[u]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        return tuple(order) if len(order) == n else None

    @cached_property
    def _reach(self):
        order = self._checked_order()
        desc = [None] * self.n_nodes
        for u in reversed(order):
            s = {u}
            for c in self.children[u]:
                s |= desc[c]
            desc[u] = frozenset(s)
        anc = [None] * self.n_nodes
        for u in order:
            s = {u}
            for q in self.parents[u]:
                s |= anc[q]
            anc[u] = frozenset(s)
        return tuple(desc), tuple(anc)

    def _checked_order(self):
        bad = validate(self)
        if bad is not None:
            raise HierarchyError(str(bad))
        return self.topological_order


def validate(h: Hierarchy) -> Optional[Violation]:
    """Return the first broken invariant of ``h``, or None when it is valid.

    Checks, in order: positive p, non-empty nodes, index range, disjointness,
    edge endpoints and self-loops, acyclicity.
    """
    if h.p < 1:
        return Violation("invalid-p", f"p must be positive, got {h.p}")
    if h.n_nodes == 0:
        return Violation("empty-hierarchy", "at least one node is required")
    if h.labels is not None and len(h.labels) != h.n_nodes:
        return Violation("labels", "one label per node is required")
    owner = {}
    for i, s in enumerate(h.nodes):
        if len(s) == 0:
            return Violation("empty-node", f"node {h.label(i)} has no indices")
        for k in s.tolist():
            if k < 0 or k >= h.p:
                return Violation(
                    "out-of-range",
                    f"node {h.label(i)} index {k + 1} outside [1, {h.p}]")
            if k in owner:
                return Violation(
                    "overlap",
                    f"index {k + 1} in nodes {h.label(owner[k])} "
                    f"and {h.label(i)}")
            owner[k] = i
    for a, b in h.edges:
        if not (0 <= a < h.n_nodes and 0 <= b < h.n_nodes):
            return Violation("bad-edge", f"edge ({a}, {b}) names a missing node")
        if a == b:
            return Violation("cycle", f"self-loop at node {h.label(a)}")
    if h.topological_order is None:
        return Violation("cycle", "edges contain a directed cycle")
    return None


def _check_node(h, i):
    if not 0 <= i < h.n_nodes:
        raise IndexError(f"node {i} out of range for {h.n_nodes} nodes")


def descendants(h: Hierarchy, i: int) -> frozenset:
    """Nodes reachable from ``i``, including ``i``."""
    _check_node(h, i)
    return h._reach[0][i]


def ancestors(h: Hierarchy, j: int) -> frozenset:
    """Nodes from which ``j`` is reachable, including ``j``."""
    _check_node(h, j)
    return h._reach[1][j]


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Weighted groups of coordinates.

    ``groups[g]`` is a sorted 0-based index array, ``weights[g] > 0``.
    """

    p: int
    groups: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.groups),):
            raise ValueError("need exactly one weight per group")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("group weights must be finite and positive")
        for g in self.groups:
            if len(g) and (g.min() < 0 or g.max() >= self.p):
                raise ValueError("group index outside [0, p)")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.groups)

    @classmethod
    def from_lists(cls, p, groups, weights=None):
        arrs = tuple(np.asarray(sorted(g), dtype=np.int64) for g in groups)
        return cls(int(p), arrs, _resolve_weights(arrs, weights))

    def csr(self):
        """(indptr, indices) arrays for the kernels."""
        sizes = [len(g) for g in self.groups]
        indptr = np.zeros(len(sizes) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(sizes)
        if self.groups:
            indices = np.concatenate(self.groups).astype(np.int64)
        else:
            indices = np.empty(0, np.int64)
        return indptr, indices

    def norms(self, x):
        return np.array([np.linalg.norm(x[g]) for g in self.groups])

    def penalty(self, beta):
        """Sum of weighted group norms (the GL penalty)."""
        return float(np.dot(self.weights, self.norms(beta)))


WeightRule = Union[None, Callable, Sequence[float], np.ndarray]


def _resolve_weights(groups, rule: WeightRule):
    if rule is None:
        return np.sqrt([len(g) for g in groups]).astype(float)
    if callable(rule):
        return np.array([float(rule(g)) for g in groups])
    w = np.asarray(rule, dtype=float)
    if w.shape != (len(groups),):
        raise ValueError(f"expected {len(groups)} weights, got shape {w.shape}")
    return w


def _union(h, nodes):
    return np.sort(np.concatenate([h.nodes[i] for i in nodes]))


def group_structure_gl(h: Hierarchy, weights: WeightRule = None):
    """One group per node: the node plus all of its descendants.

    ``weights`` is None (sqrt of group size), a callable on the index array,
    or one value per node.
    """
    h._checked_order()
    groups = tuple(_union(h, descendants(h, i)) for i in range(h.n_nodes))
    return GroupStructure(h.p, groups, _resolve_weights(groups, weights))


def group_structure_log(h: Hierarchy, weights: WeightRule = None):
    """One group per node: the node plus all of its ancestors."""
    h._checked_order()
    groups = tuple(_union(h, ancestors(h, i)) for i in range(h.n_nodes))
    return GroupStructure(h.p, groups, _resolve_weights(groups, weights))


def path_order(h: Hierarchy):
    """Node sequence if ``h`` is a single directed path, else None."""
    h._checked_order()
    n = h.n_nodes
    if len(set(h.edges)) != n - 1:
        return None
    if any(len(c) > 1 for c in h.children) or any(len(q) > 1 for q in h.parents):
        return None
    roots = [i for i in range(n) if not h.parents[i]]
    if len(roots) != 1:
        return None
    seq = [roots[0]]
    while h.children[seq[-1]]:
        seq.append(h.children[seq[-1]][0])
    return tuple(seq) if len(seq) == n else None


def is_forest(h: Hierarchy):
    """True when every node has at most one parent."""
    h._checked_order()
    return all(len(q) <= 1 for q in h.parents)


@dataclass(frozen=True, eq=False)
class PathDecomposition:
    """Cover of the nodes by directed paths, plus the induced group partition.

    ``paths[l]`` is a tuple of node positions along an edge path.
    ``groups[l][j]`` is the ancestor group (sorted coordinates) of the j-th
    node on path l; together the ``groups[l]`` partition the ancestor
    groups of the DAG. ``segments[l][j]`` holds the coordinates that
    ``groups[l][j]`` adds to ``groups[l][j-1]``.
    """

    paths: tuple
    groups: tuple
    segments: tuple = field(repr=False, default=())

    @property
    def n_paths(self):
        return len(self.paths)

    @property
    def partition(self):
        return self.groups

    def supports(self):
        return tuple(g[-1] if g else np.empty(0, np.int64) for g in self.groups)


def _longest_uncovered(h, region):
    """Longest edge path inside ``region``; ties to the smallest sequence."""
    order = [u for u in reversed(h.topological_order) if u in region]
    best = {}
    for u in order:
        tails = [best[c] for c in h.children[u] if c in region]
        if tails:
            tail = min(tails, key=lambda t: (-len(t), t))
            best[u] = (u,) + tail
        else:
            best[u] = (u,)
    return min(best.values(), key=lambda t: (-len(t), t))


def path_decompose(h: Hierarchy) -> PathDecomposition:
    """Greedy longest-path cover of the DAG.

    Roots are visited in node order. While some descendant of the current
    root is uncovered, the longest directed path made only of uncovered
    descendants is taken, ties broken by the lexicographically smallest node
    sequence.
    """
    order = h._checked_order()
    covered = set()
    paths = []
    for root in order:
        if h.parents[root]:
            continue
        while True:
            region = set(descendants(h, root)) - covered
            if not region:
                break
            path = _longest_uncovered(h, region)
            paths.append(path)
            covered.update(path)
    groups = []
    segments = []
    for path in paths:
        gl, sl = [], []
        prev = np.empty(0, np.int64)
        for u in path:
            g = _union(h, ancestors(h, u))
            gl.append(g)
            sl.append(np.setdiff1d(g, prev, assume_unique=True))
            prev = g
        groups.append(tuple(gl))
        segments.append(tuple(sl))
    return PathDecomposition(tuple(paths), tuple(groups), tuple(segments))


def check_decomposition(h: Hierarchy, pd: PathDecomposition):
    """Return a Violation if ``pd`` is not a valid path cover of ``h``."""
    seen = {}
    edges = set(h.edges)
    for l, path in enumerate(pd.paths):
        for a, b in zip(path[:-1], path[1:]):
            if (a, b) not in edges:
                return Violation("bad-path", f"path {l} uses non-edge {a}->{b}")
        for u in path:
            if u in seen:
                return Violation("overlap", f"node {h.label(u)} in two paths")
            seen[u] = l
    if len(seen) != h.n_nodes:
        return Violation("cover", "some nodes are not on any path")
    return None


def interaction_dag():
    """Three main effects and their pairwise interactions (six scalar nodes).

    Nodes 1-3 are main effects; 4, 5, 6 are the (1,2), (1,3), (2,3)
    interactions, each a child of its two main effects.
    """
    edges = [(0, 3), (1, 3), (0, 4), (2, 4), (1, 5), (2, 5)]
    return Hierarchy.from_lists(6, [[i] for i in range(6)], edges)


def random_dag(rng, n_nodes, edge_prob=0.3, max_size=3, max_p=None):
    """Random DAG over contiguous coordinate blocks.

    Edges i -> j (i < j in a random node permutation) appear independently
    with probability ``edge_prob``; node sizes are uniform on 1..max_size.
    """
    n_nodes = int(n_nodes)
    sizes = rng.integers(1, max_size + 1, n_nodes)
    if max_p is not None:
        while sizes.sum() > max_p:
            k = int(rng.integers(n_nodes))
            sizes[k] = max(1, sizes[k] - 1)
            if np.all(sizes == 1):
                break
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    nodes = [range(bounds[i], bounds[i + 1]) for i in range(n_nodes)]
    perm = rng.permutation(n_nodes)
    edges = [(int(perm[i]), int(perm[j])) for i in range(n_nodes)
             for j in range(i + 1, n_nodes) if rng.random() < edge_prob]
    return Hierarchy.from_lists(int(bounds[-1]), nodes, edges)
