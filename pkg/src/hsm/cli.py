"""Command-line entry point: ``hsm prox|covband|decompose|simulate``.

Exit codes: 0 success, 1 usage error, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import __version__
from .covband import (bandwidth, check_symmetric, estimate, lambda_grid,
                      min_eigenvalue, sample_covariance)
from .harness import ConfigError, ExperimentConfig, parse_config, run
from .hierarchy import (Hierarchy, HierarchyError, ancestors,
                        group_structure_gl, group_structure_log, is_forest,
                        path_decompose, path_order)
from .io import (FormatError, Table, format_matrix, format_vector,
                 read_hierarchy, read_matrix, read_vector)
from .prox_gl import (GlProxSolution, mgl_penalty, mgl_weights,
                      prox_gl_dual_bcd, prox_gl_path, prox_gl_tree,
                      prox_mgl_path, verify_gl_optimality)
from .prox_log import (prox_log_naive_bcd, prox_log_path, prox_log_path_bcd,
                       verify_log_optimality)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


# prox

def _path_layout(h, order):
    perm = np.concatenate([h.nodes[i] for i in order])
    sizes = np.array([len(h.nodes[i]) for i in order])
    return perm, sizes


def _prox_log(y, h, lam, w, algorithm, tol):
    order = path_order(h)
    if algorithm == "auto":
        algorithm = "path" if order is not None else "bcd"
    if algorithm == "dual":
        raise InputError("the dual algorithm applies to --reg gl only")
    gs = group_structure_log(h, w)
    if algorithm == "path":
        if order is None:
            raise InputError("--algorithm path needs a path hierarchy")
        perm, sizes = _path_layout(h, order)
        wp = None if w is None else np.asarray(w, dtype=float)[list(order)]
        sol = prox_log_path(y[perm], sizes, lam, wp, latents=True)
        gs_p = group_structure_log(Hierarchy.path(sizes), wp)
        cert = verify_log_optimality(y[perm], sol, gs_p, lam)
        beta = np.empty_like(y)
        beta[perm] = sol.beta
        knots = " ".join(str(int(k)) for k in sol.knots) or "none"
        return beta, knots, sol.cycles, sol.converged, cert.worst_violation
    if algorithm == "naive":
        sol = prox_log_naive_bcd(y, gs, lam, tol)
    else:
        sol = prox_log_path_bcd(y, h, None, lam, w, tol, latents=True)
    cert = verify_log_optimality(y, sol, gs, lam, tol=np.inf)
    return sol.beta, "n/a", sol.cycles, sol.converged, cert.worst_violation


def _prox_gl(y, h, lam, w, algorithm, tol):
    gs = group_structure_gl(h, w)
    forest = is_forest(h)
    if algorithm == "auto":
        algorithm = "tree" if forest else "dual"
    if algorithm == "naive":
        raise InputError("the naive algorithm applies to --reg log only")
    if algorithm == "path":
        order = path_order(h)
        if order is None:
            raise InputError("--algorithm path needs a path hierarchy")
        perm, sizes = _path_layout(h, order)
        wp = None if w is None else np.asarray(w, dtype=float)[list(order)]
        out = prox_gl_path(y[perm], sizes, lam, wp)
        beta = np.empty_like(y)
        beta[perm] = out.beta
        # the one-pass dual blocks certify any optimal primal point
        etas = prox_gl_tree(y, h, lam, gs).etas
        sol = GlProxSolution(beta, None, 1, True, etas)
    elif algorithm == "tree":
        if not forest:
            raise InputError("the tree algorithm needs a forest hierarchy")
        sol = prox_gl_tree(y, h, lam, gs)
    else:
        sol = prox_gl_dual_bcd(y, gs, lam, tol)
    _ok, worst = verify_gl_optimality(y, sol, gs, lam)
    return sol.beta, "n/a", sol.cycles, sol.converged, worst


def _mgl_check(y, beta, sizes, lam, mw, n=1000, eps=1e-4, seed=0):
    """Largest objective decrease over random perturbations of ``beta``."""
    def obj(b):
        return 0.5 * float(np.sum((y - b) ** 2)) + lam * mgl_penalty(b, sizes, mw)
    rng = np.random.default_rng(seed)
    base = obj(beta)
    worst = 0.0
    for _ in range(n):
        worst = max(worst, base - obj(beta + eps * rng.uniform(-1, 1, beta.size)))
    return worst


def _prox_mgl(y, h, lam, w, algorithm, tol):
    if w is not None:
        raise InputError("--weights is not supported with --reg mgl")
    if algorithm not in ("auto", "path"):
        raise InputError("--reg mgl supports --algorithm auto or path only")
    order = path_order(h)
    if order is None:
        raise InputError("--reg mgl needs a path hierarchy")
    perm, sizes = _path_layout(h, order)
    mw = mgl_weights(sizes)
    sol = prox_mgl_path(y[perm], sizes, lam, mw)
    beta = np.empty_like(y)
    beta[perm] = sol.beta
    worst = _mgl_check(y[perm], sol.beta, sizes, lam, mw)
    return beta, "n/a", sol.cycles, sol.converged, worst


def cmd_prox(args):
    h = read_hierarchy(args.hierarchy)
    y = read_vector(args.vector)
    if y.size != h.p:
        raise InputError(f"vector has {y.size} entries, hierarchy has p={h.p}")
    lam = _nonneg(args.lam, "--lambda")
    w = None
    if args.weights:
        w = read_vector(args.weights)
        if w.size != h.n_nodes or np.any(w <= 0):
            raise InputError(f"need {h.n_nodes} positive weights, one per group")
    solver = {"gl": _prox_gl, "log": _prox_log, "mgl": _prox_mgl}[args.reg]
    beta, knots, cycles, converged, worst = solver(y, h, lam, w, args.algorithm,
                                                   args.tol)
    if not converged:
        raise NumericalError(f"solver stopped after {cycles} cycles without converging")
    label = "max_kkt_violation" if args.reg != "mgl" else "max_objective_decrease"
    notes = [f"reg: {args.reg}", f"lambda: {lam!r}", f"knots: {knots}",
             f"cycles: {cycles}", f"{label}: {float(worst)!r}"]
    _write(format_vector(beta, notes), args.out)


# covband

def _nonneg(x, name):
    if not np.isfinite(x) or x < 0:
        raise InputError(f"{name} must be a finite nonnegative number")
    return float(x)


def _parse_grid(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad lambda grid {text!r}") from None
    if not vals or any(not np.isfinite(v) or v < 0 for v in vals):
        raise InputError("lambda grid must be a non-empty list of nonnegative numbers")
    return vals


def cmd_covband(args):
    if args.matrix:
        S = read_matrix(args.matrix)
        try:
            S = check_symmetric(S)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        S = sample_covariance(read_matrix(args.data))
    if args.lam is not None:
        lam = _nonneg(args.lam, "--lambda")
        est = estimate(S, lam, args.estimator)
        notes = [f"estimator: {args.estimator}", f"lambda: {lam!r}",
                 f"bandwidth: {bandwidth(est.sigma_hat)}",
                 f"min_eigenvalue: {min_eigenvalue(est.sigma_hat)!r}"]
        _write(format_matrix(est.sigma_hat, notes), args.out)
        return
    if args.lambda_grid is not None:
        grid = _parse_grid(args.lambda_grid)
    else:
        if args.n_lambda < 1:
            raise InputError("--n-lambda must be at least 1")
        try:
            grid = [float(x) for x in lambda_grid(S, args.estimator, args.n_lambda)]
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if not args.out_dir:
        raise UsageError("a lambda grid needs --out-dir")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {args.out_dir}: {exc.strerror}") from None
    rows = []
    for i, lam in enumerate(grid):
        est = estimate(S, lam, args.estimator).sigma_hat
        name = f"estimate_{i:03d}.csv"
        bw = bandwidth(est)
        me = min_eigenvalue(est)
        _write(format_matrix(est, [f"estimator: {args.estimator}",
                                   f"lambda: {lam!r}", f"bandwidth: {bw}",
                                   f"min_eigenvalue: {me!r}"]),
               os.path.join(args.out_dir, name))
        rows.append((lam, bw, me, float(np.linalg.norm(est - S)), name))
    t = Table(["lambda", "bandwidth", "min_eigenvalue", "frobenius_distance",
               "file"], rows, {"estimator": args.estimator, "p": S.shape[0]})
    _write(t.to_csv(), os.path.join(args.out_dir, "summary.csv"))


# decompose

def cmd_decompose(args):
    h = read_hierarchy(args.hierarchy)
    pd = path_decompose(h)
    lines = ["# paths"]
    for l, path in enumerate(pd.paths, start=1):
        lines.append(f"path {l}: " + " ".join(h.label(i) for i in path))
    lines.append("# induced partition: one ancestor group per node")
    for l, path in enumerate(pd.paths, start=1):
        lines.append(f"partition {l}:")
        for i, grp in zip(path, pd.groups[l - 1]):
            nodes = " ".join(h.label(j) for j in sorted(ancestors(h, i)))
            coords = " ".join(str(int(k) + 1) for k in grp)
            lines.append(f"  group {h.label(i)}: nodes {nodes}; indices {coords}")
    _write("\n".join(lines) + "\n", args.out)


# simulate

def _config_help():
    out = ["config keys (key = value, lists comma separated):"]
    for f in dataclasses.fields(ExperimentConfig):
        default = "required" if f.default is dataclasses.MISSING else f.default
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
            if len(default) > 40:
                default = default[:37] + "..."
        out.append(f"  {f.name} (default: {default})")
    return "\n".join(out)


def cmd_simulate(args):
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {args.config}: {exc.strerror}") from None
    cfg = parse_config(text, seed=args.seed,
                       timing=True if args.timing else None,
                       output=args.output)
    table = run(cfg)
    _write(table.to_csv(), cfg.output or None)


def build_parser():
    p = _Parser(prog="hsm", description="Hierarchical sparse modeling tools.")
    p.add_argument("--version", action="version", version=f"hsm {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("prox", help="evaluate a proximal operator")
    q.add_argument("--reg", choices=["gl", "log", "mgl"], required=True)
    q.add_argument("--hierarchy", required=True, help="hierarchy file")
    q.add_argument("--vector", required=True, help="input vector file")
    q.add_argument("--lambda", dest="lam", type=float, required=True)
    q.add_argument("--weights", help="one weight per group, in node order")
    q.add_argument("--algorithm", default="auto",
                   choices=["auto", "naive", "path", "dual", "tree"])
    q.add_argument("--tol", type=float, default=1e-12)
    q.add_argument("--out", help="output file (default stdout)")
    q.set_defaults(func=cmd_prox)

    c = sub.add_parser("covband", help="banded covariance estimation")
    c.add_argument("--estimator", choices=["gl", "mgl", "log"], default="log")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="symmetric matrix CSV")
    src.add_argument("--data", help="n x p data CSV")
    lam = c.add_mutually_exclusive_group(required=True)
    lam.add_argument("--lambda", dest="lam", type=float)
    lam.add_argument("--lambda-grid", help="comma-separated lambda values")
    lam.add_argument("--n-lambda", type=int,
                     help="log-spaced grid of this size up to lambda_max")
    c.add_argument("--out", help="estimate file for a single lambda (default stdout)")
    c.add_argument("--out-dir", help="directory for grid outputs and summary.csv")
    c.set_defaults(func=cmd_covband)

    d = sub.add_parser("decompose", help="path decomposition of a hierarchy")
    d.add_argument("hierarchy")
    d.add_argument("--out")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="run a harness experiment",
                       epilog=_config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("config", help="experiment config file")
    s.add_argument("--output", help="CSV path (overrides the config)")
    s.add_argument("--seed", type=int, help="base seed (overrides the config)")
    s.add_argument("--timing", action="store_true",
                   help="record wall times in prox-benchmark (not reproducible)")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FormatError, ConfigError, HierarchyError,
            OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
