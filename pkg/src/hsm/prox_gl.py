"""Proximal operators for the hierarchical group lasso (GL) and its
modified-weight variant (mGL).

All operators solve

    min_b 0.5 * ||y - b||^2 + lam * Omega(b)

for a sum of weighted l2 norms Omega. Path operators take ``y`` laid out
node by node along the path, with ``node_sizes[i]`` coordinates per node.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .hierarchy import (GroupStructure, Hierarchy, HierarchyError,
                        group_structure_gl, is_forest)


@dataclass
class GlProxSolution:
    """Result of a GL-family prox.

    Attributes
    ----------
    beta : ndarray
        The prox output.
    dual_norms : ndarray or None
        Final ``||eta_g||`` per group (None for mGL).
    cycles : int
        Passes over the groups; 1 for the one-pass operators.
    converged : bool
    etas : list of ndarray, optional
        Dual blocks aligned with each group's index array.
    roots : ndarray, optional
        mGL only: the scalar root found at each node (0 where zeroed).
    """

    beta: np.ndarray
    dual_norms: Optional[np.ndarray]
    cycles: int = 1
    converged: bool = True
    etas: Optional[list] = None
    roots: Optional[np.ndarray] = None


def _check_lam(lam, name="lam"):
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"{name} must be a finite nonnegative number, got {lam}")
    return lam


def soft_threshold(y, mu):
    """Elementwise soft-thresholding, sign(y) * max(|y| - mu, 0)."""
    mu = _check_lam(mu, "mu")
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.maximum(np.abs(y) - mu, 0.0)


def group_soft_threshold(y, mu):
    """Scale ``y`` by (1 - mu / ||y||)_+; the zero vector maps to zero."""
    mu = _check_lam(mu, "mu")
    y = np.asarray(y, dtype=float)
    nrm = np.linalg.norm(y)
    if nrm <= mu:
        return np.zeros_like(y)
    return y * (1.0 - mu / nrm)


def _as_vector(y, p=None):
    y = np.array(y, dtype=float).ravel()
    if p is not None and y.shape[0] != p:
        raise ValueError(f"expected a vector of length {p}, got {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("input vector has non-finite entries")
    return y


def _split(flat, indptr):
    return [flat[indptr[g]:indptr[g + 1]].copy() for g in range(len(indptr) - 1)]


def prox_gl_dual_bcd(y, gs: GroupStructure, lam, tol=1e-10, max_cycles=100_000,
                     order=None):
    """GL prox by cyclic block coordinate descent on the dual.

    Each dual block is replaced by the projection of ``beta + eta_g`` onto
    the ball of radius ``lam * w_g``, and ``beta = y - sum(eta)``. Stops when
    the max change of ``beta`` over a cycle is at most
    ``tol * (1 + ||y||_inf)``.

    Parameters
    ----------
    order : sequence of int, optional
        Group visiting order; defaults to the order in ``gs``.

    Returns
    -------
    GlProxSolution
        ``converged`` is False if ``max_cycles`` ran out.
    """
    lam = _check_lam(lam)
    y = _as_vector(y, gs.p)
    if order is None:
        order = np.arange(len(gs))
    order = np.asarray(order, dtype=np.int64)
    sub = GroupStructure(gs.p, tuple(gs.groups[g] for g in order),
                         gs.weights[order])
    indptr, indices = sub.csr()
    beta = y.copy()
    eta = np.zeros(indices.shape[0])
    if lam == 0.0:
        cycles, ok = 1, True
    else:
        cycles, ok = _kernels.gl_dual_bcd(y, indptr, indices, sub.weights, lam,
                                          float(tol), int(max_cycles), beta, eta)
    blocks = _split(eta, indptr)
    etas = [None] * len(gs)
    for k, g in enumerate(order):
        etas[g] = blocks[k]
    norms = np.array([np.linalg.norm(e) for e in etas])
    return GlProxSolution(beta, norms, int(cycles), bool(ok), etas)


def prox_gl_tree(y, h: Hierarchy, lam, gs: Optional[GroupStructure] = None):
    """Exact GL prox on a forest in a single pass, children before parents.

    ``gs`` defaults to the descendant groups of ``h`` with sqrt-size weights.
    """
    if not is_forest(h):
        raise HierarchyError("one-pass GL prox needs a forest (one parent per node)")
    if gs is None:
        gs = group_structure_gl(h)
    if len(gs) != h.n_nodes:
        raise ValueError("expected one group per node")
    order = list(reversed(h.topological_order))
    sol = prox_gl_dual_bcd(y, gs, lam, tol=0.0, max_cycles=1, order=order)
    sol.converged = True
    return sol


def _node_bounds(node_sizes, p):
    sizes = np.asarray(node_sizes, dtype=np.int64).ravel()
    if sizes.size == 0:
        raise ValueError("need at least one node")
    if np.any(sizes < 1):
        raise ValueError("node sizes must be positive")
    bounds = np.zeros(sizes.size + 1, dtype=np.int64)
    bounds[1:] = np.cumsum(sizes)
    if bounds[-1] != p:
        raise ValueError(f"node sizes sum to {bounds[-1]}, vector has length {p}")
    return sizes, bounds


def node_sq_norms(y, bounds):
    """``||y_{s_i}||^2`` for contiguous nodes delimited by ``bounds``."""
    return np.add.reduceat(y * y, bounds[:-1])


def _expand(scales, sizes):
    return np.repeat(scales, sizes)


def prox_gl_path(y, node_sizes, lam, w=None):
    """GL prox on a directed path in O(p + D).

    ``w[l]`` weighs the group made of node l and every node after it; the
    default is the square root of that group's size.
    """
    lam = _check_lam(lam)
    y = _as_vector(y)
    sizes, bounds = _node_bounds(node_sizes, y.shape[0])
    if w is None:
        w = np.sqrt(np.cumsum(sizes[::-1])[::-1]).astype(float)
    w = np.asarray(w, dtype=float)
    if w.shape != sizes.shape or np.any(w <= 0):
        raise ValueError("need one positive weight per node")
    z = node_sq_norms(y, bounds)
    scales, a = _kernels.gl_path_scales(z, w, lam)
    beta = y * _expand(scales, sizes)
    return GlProxSolution(beta, np.minimum(lam * w, np.sqrt(a)), 1, True)


def prox_gl_pair(y, lam, w):
    """Closed-form GL prox for groups {1, 2} (weight w[0]) and {2} (w[1])."""
    lam = _check_lam(lam)
    y = _as_vector(y, 2)
    inner = np.array([y[0], soft_threshold(y[1:], lam * w[1])[0]])
    return group_soft_threshold(inner, lam * w[0])


@dataclass(frozen=True, eq=False)
class MglWeights:
    """Weights ``table[l, m]`` (0-based, m >= l) of node m in the group at l."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] == 0:
            raise ValueError("weight table must be a non-empty square array")
        if np.any(t[np.triu_indices(t.shape[0])] <= 0):
            raise ValueError("weights on and above the diagonal must be positive")
        object.__setattr__(self, "table", np.triu(t))

    @property
    def depth(self):
        return self.table.shape[0]

    @classmethod
    def uniform(cls, c):
        """``w[l, m] = c[l]`` for every m >= l."""
        c = np.asarray(c, dtype=float)
        return cls(np.triu(np.repeat(c[:, None], c.size, axis=1)))


def mgl_weights(node_sizes):
    """``w[l, m] = sqrt(|s_l|) / (m - l + 1)`` for m >= l."""
    sizes = np.asarray(node_sizes, dtype=float).ravel()
    if sizes.size == 0:
        raise ValueError("need at least one node")
    if np.any(sizes < 1):
        raise ValueError("node sizes must be positive")
    D = sizes.size
    lag = np.arange(D)[None, :] - np.arange(D)[:, None]
    table = np.where(lag >= 0, np.sqrt(sizes)[:, None] / np.maximum(lag + 1.0, 1.0), 0.0)
    return MglWeights(table)


def mgl_penalty(beta, node_sizes, mw: MglWeights):
    """sum_l sqrt(sum_{m >= l} w[l, m]^2 ||beta_{s_m}||^2)."""
    beta = np.asarray(beta, dtype=float)
    _sizes, bounds = _node_bounds(node_sizes, beta.shape[0])
    z = node_sq_norms(beta, bounds)
    return float(np.sum(np.sqrt((mw.table ** 2) @ z)))


def prox_mgl_path(y, node_sizes, lam, mw: Optional[MglWeights] = None,
                  max_newton=200, tol=1e-12, max_passes=10_000):
    """mGL prox on a directed path by backward sweeps with one scalar root
    per node.

    At node i the group is zeroed outright when
    ``lam^2 >= sum_m ||r_m||^2 / w[i, m]^2``; otherwise the root ``v`` of
    ``sum_m w^2 ||r_m||^2 / (w^2 + v)^2 = lam^2`` is found by safeguarded
    Newton and every later node is scaled by ``v / (w[i, m]^2 + v)``. Here
    ``r`` is the current iterate with group i's dual block added back.

    One sweep is exact when each group's weights are constant over its
    nodes. With weights that vary inside a group, such as the default
    ``mgl_weights``, one sweep only approximates the prox, so sweeps are
    repeated as dual block coordinate descent. Every few sweeps the support
    is polished by Newton on the per-node roots. Iteration stops when the
    duality gap is at most ``tol * (1 + 0.5 * ||y||^2)``; the returned beta
    then satisfies ``||beta - prox||^2 <= 2 * gap``. ``max_passes=1`` gives
    the single sweep, whose all-zero output is always exact.

    Returns
    -------
    GlProxSolution
        ``cycles`` is the number of sweeps; ``roots`` holds the root per node
        at the returned point (0 for zeroed groups); ``converged`` is False
        when ``max_passes`` was reached first.
    """
    lam = _check_lam(lam)
    y = _as_vector(y)
    sizes, bounds = _node_bounds(node_sizes, y.shape[0])
    if mw is None:
        mw = mgl_weights(sizes)
    if mw.depth != sizes.size:
        raise ValueError("weight table depth does not match the number of nodes")
    if int(max_passes) < 1:
        raise ValueError("max_passes must be at least 1")
    if lam == 0.0:
        return GlProxSolution(y.copy(), None, 1, True, roots=np.zeros(sizes.size))
    z = node_sq_norms(y, bounds)
    t, roots, passes, ok = _kernels.mgl_path_scales(z, mw.table, lam, int(max_newton),
                                                    float(tol), int(max_passes))
    beta = y * _expand(t, sizes)
    return GlProxSolution(beta, None, int(passes), bool(ok), roots=roots)


def gl_objective(y, beta, gs: GroupStructure, lam):
    beta = np.asarray(beta, dtype=float)
    return 0.5 * float(np.sum((np.asarray(y) - beta) ** 2)) + lam * gs.penalty(beta)


def verify_gl_optimality(y, sol: GlProxSolution, gs: GroupStructure, lam,
                         tol=1e-8):
    """Check a dual certificate for the GL prox.

    Requires ``sol.etas``. Checks ``y - beta = sum eta``, ``||eta_g|| <=
    lam w_g`` and ``eta_g = lam w_g beta_g / ||beta_g||`` where
    ``||beta_g|| > tol``.

    Returns
    -------
    (bool, float)
        Whether every check holds within ``tol`` and the worst violation.
    """
    if sol.etas is None:
        raise ValueError("solution carries no dual blocks")
    y = np.asarray(y, dtype=float)
    beta = sol.beta
    total = np.zeros_like(y)
    worst = 0.0
    for g, e, wg in zip(gs.groups, sol.etas, gs.weights):
        total[g] += e
        bound = lam * wg
        worst = max(worst, np.linalg.norm(e) - bound)
        bn = np.linalg.norm(beta[g])
        # groups at rounding level count as zero; only the ball bound applies
        if bn > tol:
            worst = max(worst, float(np.max(np.abs(e - bound * beta[g] / bn))))
    worst = max(worst, float(np.max(np.abs(y - beta - total))))
    return worst <= tol, worst
