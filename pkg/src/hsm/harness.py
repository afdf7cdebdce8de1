"""Experiment runner: shrinkage profiles, covariance studies, prox benchmark.

Every experiment is a pure function of its config (including the base
seed) and returns a :class:`~hsm.io.Table`; replicate i always draws from
``numpy.random.default_rng(seed + i)``. Rows are sorted before they are
returned, so thread scheduling never changes the output.
"""
from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covband import (ReplicateStats, _lambda_max_z, bandwidth,
                      gen_moving_average, gen_stair, is_psd, lambda_best,
                      lambda_theory, min_eigenvalue, estimate,
                      sample_covariance, sample_gaussian)
from .hierarchy import (Hierarchy, group_structure_log, path_decompose,
                        random_dag)
from .io import Table
from .prox_gl import mgl_weights, prox_gl_path, prox_mgl_path
from .prox_log import prox_log_naive_bcd, prox_log_path, prox_log_path_bcd

KINDS = ("shrinkage-profile", "rate-check", "mse-comparison",
         "psd-diagnostics", "prox-benchmark")

PATTERNS = {"moving-average": gen_moving_average, "stair": gen_stair}


class ConfigError(ValueError):
    """Bad experiment configuration."""


@dataclass
class ExperimentConfig:
    """Parameters shared by all experiments; each uses the ones it needs.

    ``K`` is the generator parameter of the covariance patterns; both
    patterns put their last nonzero entry at lag K - 1.
    """

    experiment: str
    seed: int = 0
    replicates: int = 50
    n: int = 50
    p: tuple = (100,)
    K: tuple = tuple(range(10, 101, 10))
    D: int = 50
    lambdas: tuple = tuple(float(x) for x in np.linspace(0.0, 1.0, 10))
    lambda_rule: str = "best"
    n_lambda: int = 50
    lambda_ratio: float = 1e-4
    patterns: tuple = ("moving-average", "stair")
    estimators: tuple = ("gl", "mgl", "log")
    sigma: float = 0.0
    instances: int = 100
    max_p: int = 200
    max_nodes: int = 40
    edge_prob: float = 0.3
    lambda_scale: float = 0.3
    tol: float = 1e-10
    timing: bool = False
    output: str = ""

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose from {', '.join(KINDS)}")
        if self.replicates < 1 or self.instances < 1:
            raise ConfigError("replicates and instances must be at least 1")
        for name in ("n", "D", "n_lambda", "max_p", "max_nodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("p", "K"):
            vals = getattr(self, name)
            if not vals or any(v < 1 for v in vals):
                raise ConfigError(f"{name} grid must be non-empty and positive")
        if any(x < 0 for x in self.lambdas):
            raise ConfigError("lambdas must be nonnegative")
        if not 0 < self.lambda_ratio < 1:
            raise ConfigError("lambda_ratio must lie in (0, 1)")
        if self.lambda_rule not in ("best", "theory", "grid"):
            raise ConfigError("lambda_rule must be best, theory or grid")
        for pat in self.patterns:
            if pat not in PATTERNS:
                raise ConfigError(f"unknown pattern {pat!r}")
        for est in self.estimators:
            if est not in ("gl", "mgl", "log"):
                raise ConfigError(f"unknown estimator {est!r}")
        if not 0 <= self.edge_prob <= 1:
            raise ConfigError("edge_prob must lie in [0, 1]")
        if self.sigma < 0 or self.tol <= 0 or self.lambda_scale <= 0:
            raise ConfigError("sigma >= 0, tol > 0 and lambda_scale > 0 required")

    def describe(self):
        parts = []
        for f in dataclasses.fields(self):
            if f.name == "output":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            parts.append(f"{f.name}={v}")
        return "; ".join(parts)


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_LISTS = ("p", "K")
_FLOAT_LISTS = ("lambdas",)
_STR_LISTS = ("patterns", "estimators")


def _convert(key, raw):
    try:
        if key in _INT_LISTS:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if key in _FLOAT_LISTS:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if key in _STR_LISTS:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        default = _FIELD_TYPES[key].default
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text, **overrides):
    """Parse ``key = value`` lines (``#`` comments allowed) into a config.

    Lists are comma separated. Unknown keys are errors. Keyword
    ``overrides`` win over file values.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, val.strip())
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in values:
        raise ConfigError("config must set 'experiment'")
    return make_config(**values)


def make_config(experiment, **kw):
    """Config with per-experiment defaults filled in."""
    base = dict(_DEFAULTS.get(experiment, {}))
    base.update(kw)
    return ExperimentConfig(experiment=experiment, **base)


_DEFAULTS = {
    "rate-check": {"p": (100, 200, 400), "lambda_rule": "theory",
                   "patterns": ("moving-average",), "estimators": ("log",)},
    "psd-diagnostics": {"patterns": ("moving-average",)},
}


def worker_count():
    """Thread cap from ``HSM_THREADS`` (default: CPU count)."""
    env = os.environ.get("HSM_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"HSM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("HSM_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def _pmap(fn, items):
    items = list(items)
    k = min(worker_count(), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def _meta(cfg, **extra):
    meta = {"experiment": cfg.experiment, "seed": cfg.seed,
            "config": cfg.describe()}
    meta.update(extra)
    return meta


# shrinkage profiles on a path with one coordinate per node

def shrinkage_patterns(D):
    i = np.arange(1, D + 1)
    return {
        "linear": 1.0 - (i - 1) / D,
        "step": np.where(i <= D / 2, 1.0, 0.5),
    }


def profile_estimates(y, lam):
    """GL (unit weights), LOG (sqrt(i) weights) and mGL (1/(m-l+1)) outputs."""
    D = y.size
    ones = np.ones(D, dtype=np.int64)
    return {
        "gl": prox_gl_path(y, ones, lam, np.ones(D)).beta,
        "log": prox_log_path(y, ones, lam, np.sqrt(np.arange(1, D + 1))).beta,
        "mgl": prox_mgl_path(y, ones, lam, mgl_weights(ones)).beta,
    }


def run_shrinkage_profile(cfg: ExperimentConfig):
    """Prox outputs along a path for two noiseless (or noisy) signals.

    Columns: pattern, regularizer, lambda, index (1-based), value.
    """
    rows = []
    rng = np.random.default_rng(cfg.seed)
    for name, beta in shrinkage_patterns(cfg.D).items():
        y = beta + cfg.sigma * rng.standard_normal(cfg.D) if cfg.sigma else beta
        for lam in cfg.lambdas:
            for reg, out in profile_estimates(y, lam).items():
                for i, v in enumerate(out, start=1):
                    rows.append((name, reg, float(lam), i, float(v)))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return Table(["pattern", "regularizer", "lambda", "index", "value"], rows,
                 _meta(cfg))


# covariance studies

def _sigma(pattern, p, K):
    return PATTERNS[pattern](p, K)


def _stats(sigma, n, seeds):
    def one(seed):
        return ReplicateStats(sample_covariance(sample_gaussian(sigma, n, seed)),
                              sigma)
    return _pmap(one, seeds)


def _error_table(stats, estimator, lams):
    """errors[i, r] = ||estimate(lam_i) - sigma*||_F^2 / p on replicate r."""
    p = stats[0].p
    mw = mgl_weights(2 * (p - np.arange(1, p))) if estimator == "mgl" else None

    def one(st):
        return [st.sq_error(st.scales(estimator, lam, mw)) / p for lam in lams]
    return np.array(_pmap(one, stats)).T


def best_lambda_study(pattern, p, K, cfg: ExperimentConfig, estimator):
    """Grid, per-replicate errors and the index of lambda_best.

    The grid spans ``[lambda_ratio * lambda_max, lambda_max]`` on a log
    scale, lambda_max being the smallest lambda that gives a diagonal
    estimate on replicate 0; lambda_best minimizes the mean error.
    """
    sigma = _sigma(pattern, p, K)
    seeds = [cfg.seed + r for r in range(cfg.replicates)]
    stats = _stats(sigma, cfg.n, seeds)
    top = _lambda_max_z(stats[0].z, p, estimator)
    grid = np.geomspace(cfg.lambda_ratio * top, top, cfg.n_lambda)
    errors = _error_table(stats, estimator, grid)
    best = lambda_best(grid, errors.mean(axis=1))
    ib = int(np.flatnonzero(grid == best)[0])
    return grid, errors, ib


def run_rate_check(cfg: ExperimentConfig):
    """LOG error at lambda_theory = 2 sqrt(log p / n) across (p, K).

    Columns: p, K, bandwidth, lambda, mse_mean, mse_median, and both
    divided by log p.
    """
    rows = []
    for p in cfg.p:
        lam = lambda_theory(p, cfg.n)
        for K in cfg.K:
            if K > p:
                raise ConfigError(f"K={K} exceeds p={p}")
            sigma = gen_moving_average(p, K)
            stats = _stats(sigma, cfg.n, [cfg.seed + r for r in range(cfg.replicates)])
            err = _error_table(stats, "log", [lam])[0]
            mean, med = float(err.mean()), float(np.median(err))
            rows.append((p, K, bandwidth(sigma), lam, mean, med,
                         mean / np.log(p), med / np.log(p)))
    rows.sort(key=lambda r: (r[0], r[1]))
    cols = ["p", "K", "bandwidth", "lambda", "mse_mean", "mse_median",
            "mse_mean_over_logp", "mse_median_over_logp"]
    return Table(cols, rows, _meta(cfg, note="bandwidth is the last nonzero lag"))


def run_mse_comparison(cfg: ExperimentConfig):
    """Error at lambda_best for each (pattern, estimator, K).

    Columns: pattern, estimator, p, K, bandwidth, lambda_best, best_index,
    lambda_max, mse_mean (the criterion lambda_best minimizes) and
    mse_median (median over replicates at lambda_best).
    """
    rows = []
    p = cfg.p[0]
    for pattern in cfg.patterns:
        for K in cfg.K:
            bw = bandwidth(_sigma(pattern, p, K))
            for est in cfg.estimators:
                grid, errors, ib = best_lambda_study(pattern, p, K, cfg, est)
                rows.append((pattern, est, p, K, bw, float(grid[ib]), ib,
                             float(grid[-1]), float(errors[ib].mean()),
                             float(np.median(errors[ib]))))
    rows.sort(key=lambda r: (r[0], r[1], r[3]))
    cols = ["pattern", "estimator", "p", "K", "bandwidth", "lambda_best",
            "best_index", "lambda_max", "mse_mean", "mse_median"]
    return Table(cols, rows, _meta(cfg))


def run_psd_diagnostics(cfg: ExperimentConfig):
    """How often each estimate is PSD, with minimum-eigenvalue summaries.

    ``lambda_rule`` "best" evaluates at lambda_best (as in the comparison
    study); "grid" evaluates at every value in ``lambdas``.
    """
    rows = []
    p = cfg.p[0]
    seeds = [cfg.seed + r for r in range(cfg.replicates)]
    for pattern in cfg.patterns:
        for K in cfg.K:
            sigma = _sigma(pattern, p, K)
            for est in cfg.estimators:
                if cfg.lambda_rule == "best":
                    grid, _e, ib = best_lambda_study(pattern, p, K, cfg, est)
                    lams = [float(grid[ib])]
                elif cfg.lambda_rule == "theory":
                    lams = [lambda_theory(p, cfg.n)]
                else:
                    lams = [float(x) for x in cfg.lambdas]
                for lam in lams:
                    def one(seed, lam=lam, est=est):
                        S = sample_covariance(sample_gaussian(sigma, cfg.n, seed))
                        E = estimate(S, lam, est).sigma_hat
                        return min_eigenvalue(E), is_psd(E)
                    res = _pmap(one, seeds)
                    eig = np.array([r[0] for r in res])
                    frac = float(np.mean([r[1] for r in res]))
                    rows.append((pattern, est, p, K, cfg.lambda_rule, lam, frac,
                                 float(eig.mean()), float(np.median(eig)),
                                 float(eig.min()), float(eig.max())))
    rows.sort(key=lambda r: (r[0], r[1], r[3], r[5]))
    cols = ["pattern", "estimator", "p", "K", "lambda_rule", "lambda",
            "psd_fraction", "min_eig_mean", "min_eig_median", "min_eig_min",
            "min_eig_max"]
    return Table(cols, rows, _meta(cfg))


# prox benchmark

def _timed(fn, enabled):
    if not enabled:
        return fn(), ""
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _dag_instance(cfg, i):
    rng = np.random.default_rng(cfg.seed + i)
    N = int(rng.integers(4, cfg.max_nodes + 1))
    h = random_dag(rng, N, cfg.edge_prob, max_size=5, max_p=cfg.max_p)
    y = rng.standard_normal(h.p)
    lam = cfg.lambda_scale * float(np.max(np.abs(y)))
    gs = group_structure_log(h)
    naive, tn = _timed(lambda: prox_log_naive_bcd(y, gs, lam, cfg.tol), cfg.timing)
    path, tp = _timed(lambda: prox_log_path_bcd(y, h, None, lam, tol=cfg.tol),
                      cfg.timing)
    n_paths = path_decompose(h).n_paths
    diff = float(np.max(np.abs(naive.beta - path.beta)))
    return ("dag", i, h.p, h.n_nodes, n_paths, lam, naive.cycles, path.cycles,
            diff, "", "", "", tn, tp)


def _path_instance(cfg, i):
    rng = np.random.default_rng(cfg.seed + 100_000 + i)
    D = int(rng.integers(2, 61))
    sizes = rng.integers(1, 6, D)
    h = Hierarchy.path(sizes)
    y = rng.standard_normal(h.p)
    lam = cfg.lambda_scale * float(np.max(np.abs(y)))
    gs = group_structure_log(h)
    naive, tn = _timed(lambda: prox_log_naive_bcd(y, gs, lam, cfg.tol), cfg.timing)
    closed, tp = _timed(lambda: prox_log_path(y, sizes, lam), cfg.timing)
    bcd = prox_log_path_bcd(y, h, None, lam, tol=cfg.tol)
    diff = float(np.max(np.abs(naive.beta - closed.beta)))
    return ("path", i, h.p, D, 1, lam, naive.cycles, bcd.cycles, diff,
            len(closed.knots), closed.loops, closed.f_evals, tn, tp)


def run_prox_benchmark(cfg: ExperimentConfig):
    """Naive latent BCD against path-based BCD and the closed-form path prox.

    One row per instance: ``instances`` random DAGs and as many random
    paths. Wall times are only filled in when ``timing`` is on (they make
    the CSV non-reproducible).
    """
    rows = _pmap(lambda i: _dag_instance(cfg, i), range(cfg.instances))
    rows += _pmap(lambda i: _path_instance(cfg, i), range(cfg.instances))
    rows.sort(key=lambda r: (r[0], r[1]))
    cols = ["kind", "instance", "p", "n_nodes", "n_paths", "lambda",
            "cycles_naive", "cycles_path", "max_abs_diff", "knots", "loops",
            "f_evals", "time_naive_s", "time_path_s"]
    return Table(cols, rows, _meta(cfg))


RUNNERS = {
    "shrinkage-profile": run_shrinkage_profile,
    "rate-check": run_rate_check,
    "mse-comparison": run_mse_comparison,
    "psd-diagnostics": run_psd_diagnostics,
    "prox-benchmark": run_prox_benchmark,
}


def run(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](cfg)
