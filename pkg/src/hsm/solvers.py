"""Penalized least squares with hierarchical penalties.

``proximal_gradient`` pairs any smooth loss with any prox in this package;
``admm_regression`` solves LOG-penalized least squares by splitting the
coefficient vector along a path cover of the DAG.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from ._kernels import TIE_RTOL
from .hierarchy import (Hierarchy, PathDecomposition, group_structure_gl,
                        is_forest)
from .prox_gl import prox_gl_dual_bcd, prox_gl_tree
from .prox_log import PathBlocks, path_blocks, solve_path_blocks


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""


def power_iteration(A, n_iter=20, seed=0):
    """Largest eigenvalue estimate of the PSD matrix ``A``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        u = A @ v
        est = np.linalg.norm(u)
        if est == 0.0:
            return 0.0
        v = u / est
    return float(v @ (A @ v))


class LeastSquares:
    """F(b) = 0.5 ||y - X b||^2. ``X=None`` means the identity.

    Parameters
    ----------
    lipschitz : float, optional
        Gradient Lipschitz constant. Estimated by 20 power iterations on
        X^T X, inflated by 5%, when not given.
    """

    def __init__(self, X, y, lipschitz=None):
        self.y = np.asarray(y, dtype=float).ravel()
        if X is None:
            self.X = None
            self.p = self.y.shape[0]
        else:
            self.X = np.asarray(X, dtype=float)
            if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
                raise ValueError("X must be n x p with n = len(y)")
            self.p = self.X.shape[1]
        self._L = lipschitz

    @property
    def lipschitz(self):
        if self._L is None:
            if self.X is None:
                self._L = 1.0
            else:
                self._L = 1.05 * power_iteration(self.X.T @ self.X)
        return self._L

    def residual(self, beta):
        fit = beta if self.X is None else self.X @ beta
        return self.y - fit

    def value(self, beta):
        r = self.residual(beta)
        return 0.5 * float(r @ r)

    def value_and_grad(self, beta):
        r = self.residual(beta)
        g = -r if self.X is None else -(self.X.T @ r)
        return 0.5 * float(r @ r), g


class GlPenalty:
    """GL penalty on the descendant groups of a DAG.

    ``prox(v, t)`` returns the prox of ``t * Omega`` at ``v`` and the penalty
    value at the output. Forests use the exact one-pass operator.
    """

    def __init__(self, h: Hierarchy, weights=None, tol=1e-13):
        self.h = h
        self.gs = group_structure_gl(h, weights)
        self.tree = is_forest(h)
        self.tol = tol

    def value(self, beta):
        return self.gs.penalty(beta)

    def prox(self, v, t):
        if self.tree:
            beta = prox_gl_tree(v, self.h, t, self.gs).beta
        else:
            beta = prox_gl_dual_bcd(v, self.gs, t, tol=self.tol).beta
        return beta, self.gs.penalty(beta)


class LogPenalty:
    """LOG penalty on the ancestor groups of a DAG.

    The penalty value returned by ``prox`` is the weighted norm sum of the
    latent decomposition built by the path solver.
    """

    def __init__(self, h: Hierarchy, weights=None, pd=None, tol=1e-13,
                 max_cycles=100_000):
        self.blocks = path_blocks(h, pd, weights)
        self.tol = tol
        self.max_cycles = max_cycles

    @property
    def gs(self):
        return self.blocks.gs

    def prox(self, v, t):
        sol = solve_path_blocks(v, self.blocks, t, self.tol, self.max_cycles)
        return sol.beta, sol.penalty


@dataclass
class PGResult:
    beta: np.ndarray
    objective: np.ndarray
    n_iter: int
    converged: bool


def _prox_call(prox, v, t):
    if hasattr(prox, "prox"):
        return prox.prox(v, t)
    return prox(v, t)


def proximal_gradient(loss, prox, lam, beta0=None, tol=1e-12, max_iters=10_000,
                      accelerate=False):
    """Proximal gradient descent, optionally with FISTA momentum.

    Iterates ``b <- prox(b - grad F(b) / L; lam / L)`` and stops when the
    objective changes by at most ``tol`` relative to its current value.

    Parameters
    ----------
    loss : object
        Provides ``value_and_grad(beta)``, ``value(beta)`` and ``lipschitz``.
    prox : object or callable
        ``prox(v, t) -> (beta, penalty_value)``.
    lam : float
    beta0 : ndarray, optional
        Starting point, zeros by default.

    Returns
    -------
    PGResult
        ``objective[k]`` is the objective after iteration k + 1.
    """
    L = float(loss.lipschitz)
    if not L > 0:
        raise ValueError("Lipschitz constant must be positive")
    lam = float(lam)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    beta = np.zeros(loss.p) if beta0 is None else np.array(beta0, dtype=float)
    z = beta.copy()
    tk = 1.0
    trace = []
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        _f, g = loss.value_and_grad(z)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at iteration {it}")
        new, pen = _prox_call(prox, z - g / L, lam / L)
        obj = loss.value(new) + lam * pen
        trace.append(obj)
        if accelerate:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            z = new + ((tk - 1.0) / tn) * (new - beta)
            tk = tn
        else:
            z = new
        beta = new
        if prev is not None and abs(prev - obj) <= tol * max(abs(obj), 1e-300):
            converged = True
            break
        prev = obj
    if not converged:
        warnings.warn(f"proximal gradient hit max_iters={max_iters}",
                      ConvergenceWarning, stacklevel=2)
    return PGResult(beta, np.array(trace), it, converged)


@dataclass
class AdmmState:
    """Final ADMM variables and per-iteration residuals.

    ``beta``, ``gamma`` and ``u`` are stacked over paths and aligned with
    ``blocks.idx``; :meth:`block` scatters path l into a length-p vector.
    """

    blocks: PathBlocks
    beta: np.ndarray
    gamma: np.ndarray
    u: np.ndarray
    rho: float
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    objective: float = float("nan")
    n_iter: int = 0
    converged: bool = False

    def _scatter(self, stacked, l):
        b = self.blocks
        n0, n1 = b.path_ptr[l], b.path_ptr[l + 1]
        q0, q1 = b.node_ptr[n0], b.node_ptr[n1]
        out = np.zeros(b.h.p)
        out[b.idx[q0:q1]] = stacked[q0:q1]
        return out

    def block(self, l):
        return self._scatter(self.beta, l)

    def gamma_block(self, l):
        return self._scatter(self.gamma, l)


def admm_regression(y, X, h: Hierarchy, pd: Optional[PathDecomposition] = None,
                    lam=0.0, w=None, rho=1.0, tol=1e-10, max_iters=100_000):
    """LOG-penalized least squares by ADMM over a path cover.

    Minimizes ``0.5 ||y - X sum_l b_l||^2 + lam sum_l Omega_l(b_l)`` where
    ``b_l`` lives on the coordinates of path l and ``Omega_l`` is the LOG
    penalty of that path's ancestor groups. Each iteration

    1. updates the split copies ``gamma_l`` through one n x n solve with
       the fixed matrix ``I + (1/rho) sum_l X_l X_l^T`` (factored once),
    2. sets ``b_l`` to the exact path prox of ``gamma_l - u_l / rho`` at
       threshold ``lam / rho``,
    3. takes the dual step ``u_l += rho (b_l - gamma_l)``.

    Stops when the primal residual ``||gamma - b||`` and the dual residual
    ``rho ||b_new - b_old||`` are both at most ``tol * (1 + ||y||)``.

    Returns
    -------
    beta : ndarray
        ``sum_l b_l``.
    state : AdmmState
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[1] != h.p:
        raise ValueError(f"X must be {y.shape[0]} x {h.p}")
    lam = float(lam)
    rho = float(rho)
    if lam < 0 or not rho > 0:
        raise ValueError("need lam >= 0 and rho > 0")
    blocks = path_blocks(h, pd, w)
    n = X.shape[0]
    Xs = X[:, blocks.idx]
    M = np.eye(n) + (Xs @ Xs.T) / rho
    factor = cho_factor(M, lower=True)
    Xty = Xs.T @ y
    XXty = Xs @ Xty
    P = blocks.idx.shape[0]
    beta = np.zeros(P)
    gamma = np.zeros(P)
    u = np.zeros(P)
    pens = np.zeros(blocks.n_paths)
    scale = tol * (1.0 + np.linalg.norm(y))
    state = AdmmState(blocks, beta, gamma, u, rho)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        c = beta + u / rho
        delta = cho_solve(factor, Xs @ c + XXty / rho)
        gamma = c + (Xty - Xs.T @ delta) / rho
        new = np.empty(P)
        _kernels.log_paths_prox(gamma - u / rho, blocks.path_ptr,
                                blocks.node_ptr, blocks.w2, lam / rho, new,
                                pens, TIE_RTOL)
        u = u + rho * (new - gamma)
        r_primal = float(np.linalg.norm(gamma - new))
        r_dual = rho * float(np.linalg.norm(new - beta))
        beta = new
        state.primal_residuals.append(r_primal)
        state.dual_residuals.append(r_dual)
        if not (np.isfinite(r_primal) and np.isfinite(r_dual)):
            raise FloatingPointError(f"ADMM diverged at iteration {it}")
        if r_primal <= scale and r_dual <= scale:
            converged = True
            break
    if not converged:
        warnings.warn(f"ADMM hit max_iters={max_iters}", ConvergenceWarning,
                      stacklevel=2)
    total = np.zeros(h.p)
    np.add.at(total, blocks.idx, beta)
    state.beta, state.gamma, state.u = beta, gamma, u
    state.n_iter, state.converged = it, converged
    r = y - X @ total
    state.objective = 0.5 * float(r @ r) + lam * float(pens.sum())
    return total, state


def regression_objective(y, X, beta, lam, penalty_value):
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ beta
    return 0.5 * float(r @ r) + lam * penalty_value
