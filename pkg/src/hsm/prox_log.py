"""Proximal operators for the latent overlapping group lasso (LOG).

The LOG penalty of ``beta`` is the smallest ``sum_g w_g ||v_g||`` over
latent vectors ``v_g`` supported on group g with ``sum_g v_g = beta``. With
ancestor groups on a DAG this yields supports closed under taking ancestors.

Three solvers are provided: cyclic BCD over the latents (any groups), an
exact finite-step algorithm for a directed path, and BCD over a path cover
of a DAG where each block is solved exactly by the path algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import TIE_RTOL
from .hierarchy import (GroupStructure, Hierarchy, PathDecomposition,
                        check_decomposition, group_structure_log,
                        path_decompose)
from .prox_gl import (_as_vector, _check_lam, _node_bounds, _split,
                      group_soft_threshold, node_sq_norms, soft_threshold)


@dataclass
class LogProxSolution:
    """Result of a LOG prox.

    Attributes
    ----------
    beta : ndarray
    latents : list of ndarray or None
        One vector per group, aligned with that group's index array.
    knots : ndarray or None
        Path solver only: increasing knot positions (node counts, 1-based).
    cycles : int
        Outer passes (1 for the path solver).
    converged : bool
    penalty : float
        LOG penalty of ``beta`` (weighted latent norms), without ``lam``.
    loops : int
        Path solver only: passes through the knot loop (knots + 1).
    f_evals : int
        Path solver only: number of knot statistic evaluations.
    fvals : ndarray or None
        Path solver only: the statistic at each knot.
    """

    beta: np.ndarray
    latents: Optional[list] = None
    knots: Optional[np.ndarray] = None
    cycles: int = 1
    converged: bool = True
    penalty: float = float("nan")
    loops: int = 0
    f_evals: int = 0
    fvals: Optional[np.ndarray] = None


def log_objective(y, sol: LogProxSolution, lam):
    """0.5 ||y - beta||^2 + lam * penalty."""
    r = np.asarray(y, dtype=float) - sol.beta
    return 0.5 * float(r @ r) + lam * sol.penalty


def prox_log_naive_bcd(y, gs: GroupStructure, lam, tol=1e-10,
                       max_cycles=100_000):
    """LOG prox by cyclic BCD over the latent vectors.

    Each block is set to ``S_G(y_g - beta_g + v_g, lam w_g)``. Stops when the
    max change of ``beta`` over a cycle is at most ``tol * (1 + ||y||_inf)``;
    ``converged`` is False if ``max_cycles`` ran out.
    """
    lam = _check_lam(lam)
    y = _as_vector(y, gs.p)
    indptr, indices = gs.csr()
    beta = np.zeros_like(y)
    v = np.zeros(indices.shape[0])
    cycles, ok = _kernels.log_naive_bcd(y, indptr, indices, gs.weights, lam,
                                        float(tol), int(max_cycles), beta, v)
    latents = _split(v, indptr)
    pen = float(sum(wg * np.linalg.norm(x) for wg, x in zip(gs.weights, latents)))
    return LogProxSolution(beta, latents, None, int(cycles), bool(ok), pen)


def _path_weights(sizes, w):
    if w is None:
        return np.sqrt(np.cumsum(sizes)).astype(float)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != sizes.shape:
        raise ValueError(f"expected {sizes.size} weights, got {w.size}")
    if np.any(w <= 0) or np.any(np.diff(w) <= 0):
        raise ValueError("path weights must be positive and strictly increasing")
    return w


def f_stat(j, k, y, w, node_sizes):
    """``||y_{s_{k+1..j}}|| / sqrt(w_j^2 - w_k^2)`` with ``w_0 = 0``.

    ``j`` and ``k`` count nodes from the start of the path (0 <= k < j <= D).
    """
    y = _as_vector(y)
    sizes, bounds = _node_bounds(node_sizes, y.shape[0])
    w = np.asarray(w, dtype=float)
    D = sizes.size
    if not (0 <= k < j <= D):
        raise ValueError(f"need 0 <= k < j <= {D}, got k={k}, j={j}")
    wk = 0.0 if k == 0 else w[k - 1]
    wj = w[j - 1]
    if wj <= wk:
        raise ValueError("weights must increase between k and j")
    seg = y[bounds[k]:bounds[j]]
    return float(np.linalg.norm(seg) / np.sqrt(wj * wj - wk * wk))


def _path_latents(y, bounds, knots, fvals, lam):
    """Latents on the prefix groups s_{1:l}; nonzero only at knots."""
    D = bounds.size - 1
    latents = [np.zeros(bounds[l + 1]) for l in range(D)]
    m = int(np.sum(fvals > lam))
    A = np.zeros(bounds[-1])
    start = 0
    for j in range(m):
        end = bounds[knots[j]]
        A[start:end] = y[start:end] / fvals[j]
        nxt = fvals[j + 1] if j + 1 < m else lam
        latents[knots[j] - 1] = A[:end] * (fvals[j] - nxt)
        start = end
    return latents


class LogPathKnots:
    """Knot chain of the path LOG prox, computed once and reused across lam.

    Knot locations do not depend on lam; lam only decides how many of them
    are active (those whose statistic exceeds lam). Build with the smallest
    lam of interest (0 keeps every knot).
    """

    def __init__(self, y, node_sizes, w=None, lam_min=0.0):
        self.y = _as_vector(y)
        self.sizes, self.bounds = _node_bounds(node_sizes, self.y.shape[0])
        self.w = _path_weights(self.sizes, w)
        self.lam_min = _check_lam(lam_min)
        z = node_sq_norms(self.y, self.bounds)
        self.knots, self.fvals, _l, _f = _kernels.log_path_knots(
            z, self.w ** 2, self.lam_min, TIE_RTOL)

    def n_active(self, lam):
        return int(np.sum(self.fvals > lam))

    def solve(self, lam, latents=False):
        lam = _check_lam(lam)
        if lam < self.lam_min:
            raise ValueError(f"knots were computed for lam >= {self.lam_min}")
        D = self.sizes.size
        scales = _kernels.knot_scales(D, self.knots, self.fvals, lam)
        m = self.n_active(lam)
        knots = self.knots[:m].copy()
        starts = np.concatenate([[0], knots])
        f_evals = int(np.sum(D - starts))
        pen = _kernels.knot_penalty(self.knots, self.fvals, self.w ** 2, lam)
        beta = self.y * np.repeat(scales, self.sizes)
        lat = (_path_latents(self.y, self.bounds, self.knots, self.fvals, lam)
               if latents else None)
        return LogProxSolution(beta, lat, knots, 1, True, float(pen), m + 1,
                               f_evals, self.fvals[:m].copy())


def prox_log_path(y, node_sizes, lam, w=None, latents=False):
    """Exact LOG prox on a directed path s_1 -> ... -> s_D.

    The groups are the prefixes s_{1:l} with strictly increasing weights
    ``w[l]`` (default ``sqrt(|s_{1:l}|)``). Starting from k = 0 the
    algorithm picks the largest maximizer K of the statistic
    ``f(j, k) = ||y_{s_{k+1..j}}|| / sqrt(w_j^2 - w_k^2)``, stops once
    ``f(K, k) <= lam`` and otherwise group-soft-thresholds the segment by
    ``lam * sqrt(w_K^2 - w_k^2)``. Coordinates after the last knot are 0.

    Set ``latents=True`` to also build a latent decomposition that
    certifies optimality (see :func:`verify_log_optimality`).
    """
    lam = _check_lam(lam)
    y = _as_vector(y)
    sizes, bounds = _node_bounds(node_sizes, y.shape[0])
    w = _path_weights(sizes, w)
    w2 = w ** 2
    z = node_sq_norms(y, bounds)
    knots, fvals, loops, f_evals = _kernels.log_path_knots(z, w2, lam, TIE_RTOL)
    scales = _kernels.knot_scales(sizes.size, knots, fvals, lam)
    pen = _kernels.knot_penalty(knots, fvals, w2, lam)
    beta = y * np.repeat(scales, sizes)
    lat = _path_latents(y, bounds, knots, fvals, lam) if latents else None
    return LogProxSolution(beta, lat, knots, 1, True, float(pen), int(loops),
                           int(f_evals), fvals)


def prox_log_pair(y, lam, w):
    """Closed-form LOG prox for groups {1} (weight w[0]) and {1, 2} (w[1])."""
    lam = _check_lam(lam)
    y = _as_vector(y, 2)
    w1, w2 = float(w[0]), float(w[1])
    if not 0 < w1 < w2:
        raise ValueError("need 0 < w[0] < w[1]")
    gap = np.sqrt(w2 * w2 - w1 * w1)
    if abs(y[1]) >= gap / w1 * abs(y[0]):
        return group_soft_threshold(y, lam * w2)
    return np.array([soft_threshold(y[:1], lam * w1)[0],
                     soft_threshold(y[1:], lam * gap)[0]])


@dataclass(frozen=True, eq=False)
class PathBlocks:
    """A path cover flattened into the arrays the kernels expect.

    Path l owns path-nodes ``path_ptr[l]:path_ptr[l+1]``; path-node j owns
    coordinates ``idx[node_ptr[j]:node_ptr[j+1]]`` and has squared group
    weight ``w2[j]``.
    """

    h: Hierarchy
    pd: PathDecomposition
    gs: GroupStructure
    path_ptr: np.ndarray
    node_ptr: np.ndarray
    idx: np.ndarray
    w2: np.ndarray

    @property
    def n_paths(self):
        return self.pd.n_paths

    def path_coords(self, l):
        """Coordinates covered by path l, in block order."""
        n0, n1 = self.path_ptr[l], self.path_ptr[l + 1]
        return self.idx[self.node_ptr[n0]:self.node_ptr[n1]]


def path_blocks(h: Hierarchy, pd: Optional[PathDecomposition] = None, w=None):
    """Validate a path cover of ``h`` and flatten it for the kernels.

    ``w`` is a weight rule for the ancestor groups (default sqrt size);
    weights must strictly increase along every path.
    """
    if pd is None:
        pd = path_decompose(h)
    bad = check_decomposition(h, pd)
    if bad is not None:
        raise ValueError(f"invalid path decomposition: {bad}")
    gs = group_structure_log(h, w)
    path_ptr = [0]
    node_ptr = [0]
    idx = []
    w2 = []
    for path, segs in zip(pd.paths, pd.segments):
        wp = gs.weights[list(path)]
        if np.any(np.diff(wp) <= 0):
            raise ValueError(
                "ancestor-group weights must strictly increase along each path")
        for u, seg in zip(path, segs):
            idx.append(seg)
            node_ptr.append(node_ptr[-1] + len(seg))
            w2.append(gs.weights[u] ** 2)
        path_ptr.append(path_ptr[-1] + len(path))
    idx = np.concatenate(idx).astype(np.int64) if idx else np.empty(0, np.int64)
    return PathBlocks(h, pd, gs, np.array(path_ptr, dtype=np.int64),
                      np.array(node_ptr, dtype=np.int64), idx,
                      np.array(w2, dtype=float))


def _block_latents(r, blocks: PathBlocks, l, lam, out):
    """Latents of path l's exact prox at target ``r`` (aligned with idx)."""
    n0, n1 = blocks.path_ptr[l], blocks.path_ptr[l + 1]
    q0, q1 = blocks.node_ptr[n0], blocks.node_ptr[n1]
    local = r[q0:q1]
    bounds = blocks.node_ptr[n0:n1 + 1] - q0
    z = node_sq_norms(local, bounds) if local.size else np.zeros(n1 - n0)
    knots, fvals, _l, _f = _kernels.log_path_knots(
        z, blocks.w2[n0:n1], lam, TIE_RTOL)
    lat = _path_latents(local, bounds, knots, fvals, lam)
    coords = blocks.idx[q0:q1]
    gs = blocks.gs
    for j, u in enumerate(blocks.pd.paths[l]):
        dense = np.zeros(gs.p)
        dense[coords[:bounds[j + 1]]] = lat[j]
        out[u] = dense[gs.groups[u]]


def prox_log_path_bcd(y, h: Hierarchy, pd: Optional[PathDecomposition] = None,
                      lam=0.0, w=None, tol=1e-10, max_cycles=100_000,
                      latents=False):
    """LOG prox on a DAG by BCD over a path cover.

    The ancestor groups split into one chain per path; each block update is
    the exact path prox of the current residual on that path's coordinates.
    A single path converges in one cycle.

    Parameters
    ----------
    pd : PathDecomposition, optional
        Defaults to :func:`path_decompose` of ``h``.
    w : weight rule, optional
        One weight per node for its ancestor group (default sqrt size);
        weights must strictly increase along every path of ``pd``.
    """
    blocks = path_blocks(h, pd, w)
    return solve_path_blocks(y, blocks, lam, tol, max_cycles, latents)


def solve_path_blocks(y, blocks: PathBlocks, lam, tol=1e-10, max_cycles=100_000,
                      latents=False):
    """Path-based BCD on a prepared :class:`PathBlocks`."""
    lam = _check_lam(lam)
    y = _as_vector(y, blocks.h.p)
    beta = np.zeros_like(y)
    state = np.zeros(blocks.idx.shape[0])
    pens = np.zeros(blocks.n_paths)
    cycles, ok = _kernels.log_path_bcd(
        y, blocks.path_ptr, blocks.node_ptr, blocks.idx, blocks.w2, lam,
        float(tol), int(max_cycles), beta, state, pens, TIE_RTOL)
    # rebuild the sum from the blocks so untouched coordinates are exact zeros
    beta = np.zeros_like(y)
    np.add.at(beta, blocks.idx, state)
    lat = None
    if latents:
        r = y[blocks.idx] - beta[blocks.idx] + state
        lat = [None] * blocks.h.n_nodes
        for l in range(blocks.n_paths):
            _block_latents(r, blocks, l, lam, lat)
    return LogProxSolution(beta, lat, None, int(cycles), bool(ok),
                           float(pens.sum()))


@dataclass(frozen=True)
class Certificate:
    ok: bool
    worst_violation: float


def verify_log_optimality(y, sol: LogProxSolution, gs: GroupStructure, lam,
                          tol=1e-8):
    """Check the latent optimality conditions of a LOG prox solution.

    For each group with ``v_g != 0`` the residual must satisfy
    ``(beta - y)_g = -lam w_g v_g / ||v_g||``; for ``v_g = 0`` it must satisfy
    ``||(beta - y)_g|| <= lam w_g``. Also checks ``beta = sum_g v_g``.
    """
    if sol.latents is None:
        raise ValueError("solution carries no latents; request them from the solver")
    if len(sol.latents) != len(gs):
        raise ValueError("one latent vector per group is required")
    y = np.asarray(y, dtype=float)
    beta = np.asarray(sol.beta, dtype=float)
    resid = beta - y
    total = np.zeros_like(beta)
    worst = 0.0
    for g, v, wg in zip(gs.groups, sol.latents, gs.weights):
        v = np.asarray(v, dtype=float)
        total[g] += v
        nv = np.linalg.norm(v)
        if nv > 0:
            gap = np.max(np.abs(resid[g] + lam * wg * v / nv))
        else:
            gap = np.linalg.norm(resid[g]) - lam * wg
        worst = max(worst, float(gap))
    worst = max(worst, float(np.max(np.abs(beta - total))) if beta.size else 0.0)
    return Certificate(bool(worst <= tol), worst)
