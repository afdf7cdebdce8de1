import numpy as np
import pytest

from hsm.harness import (ConfigError, make_config, parse_config, run,
                         shrinkage_patterns, worker_count)


def gl_ratio_violations(y, b, lam):
    """Pairs breaking |b_{d+h}|/|b_d| <= |y_{d+h}|/|y_d| exp(-lam h / tail_d)."""
    D = y.size
    bad = []
    support = np.flatnonzero(y)
    K = support[-1] + 1
    for d in range(K - 1):
        if b[d] == 0:
            continue
        tail = np.sqrt(np.sum(y[d + 1:K] ** 2))
        for h in range(1, K - d):
            lhs = abs(b[d + h]) / abs(b[d])
            rhs = abs(y[d + h]) / abs(y[d]) * np.exp(-lam * h / tail)
            if lhs > rhs * (1 + 1e-12):
                bad.append((d, h))
    return bad


def log_ratio_violations(y, b):
    bad = []
    for d in range(y.size - 1):
        if b[d] == 0:
            continue
        for h in range(1, y.size - d):
            if abs(b[d + h]) / abs(b[d]) > abs(y[d + h]) / abs(y[d]) * (1 + 1e-12):
                bad.append((d, h))
    return bad


def _profile(table, pattern, reg, lam):
    rows = [r for r in table.records() if r["pattern"] == pattern
            and r["regularizer"] == reg and r["lambda"] == lam]
    rows.sort(key=lambda r: r["index"])
    return np.array([r["value"] for r in rows])


def test_parse_config_lists_and_overrides():
    cfg = parse_config("experiment = rate-check  # comment\np = 100, 200\nK=10,20\n"
                       "replicates = 3\n", seed=7)
    assert cfg.p == (100, 200) and cfg.K == (10, 20) and cfg.replicates == 3
    assert cfg.seed == 7 and cfg.lambda_rule == "theory"


@pytest.mark.parametrize("text", [
    "experiment = rate-check\nbogus = 1\n",
    "p = 100\n",
    "experiment = nope\n",
    "experiment = rate-check\nreplicates = 0\n",
    "experiment = rate-check\np = 100, -5\n",
    "experiment = rate-check\nn = abc\n",
    "experiment = rate-check\njust words\n",
    "experiment = mse-comparison\npatterns = zigzag\n",
])
def test_parse_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("HSM_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("HSM_THREADS", "0")
    with pytest.raises(ConfigError):
        worker_count()


def test_shrinkage_profile_shape_and_lambda_zero():
    cfg = make_config("shrinkage-profile")
    t = run(cfg)
    assert len(t) == 3 * 2 * 10 * 50
    assert t.columns == ["pattern", "regularizer", "lambda", "index", "value"]
    for name, beta in shrinkage_patterns(50).items():
        for reg in ("gl", "log", "mgl"):
            np.testing.assert_array_equal(_profile(t, name, reg, 0.0), beta)


def test_shrinkage_profile_ratio_bounds():
    cfg = make_config("shrinkage-profile")
    t = run(cfg)
    for name, y in shrinkage_patterns(50).items():
        for lam in cfg.lambdas:
            assert not gl_ratio_violations(y, _profile(t, name, "gl", lam), lam)
            assert not log_ratio_violations(y, _profile(t, name, "log", lam))


def test_outputs_are_deterministic_across_thread_counts(monkeypatch):
    cfg = make_config("mse-comparison", K=(10, 30), replicates=6, n_lambda=8)
    monkeypatch.setenv("HSM_THREADS", "1")
    a = run(cfg).to_csv()
    monkeypatch.setenv("HSM_THREADS", "4")
    b = run(cfg).to_csv()
    assert a == b
    assert a.startswith("# version: hsm ")
    assert "# config: experiment=mse-comparison" in a


def test_rate_check_medians_grow_with_k():
    t = run(make_config("rate-check", p=(100,), K=(10, 30, 50, 70, 90), replicates=20))
    med = t.column("mse_median")
    assert all(a <= b for a, b in zip(med, med[1:]))
    assert t.column("bandwidth") == [9, 29, 49, 69, 89]
    np.testing.assert_allclose(t.column("mse_median_over_logp"),
                               np.array(med) / np.log(100))


def test_rate_check_rejects_k_above_p():
    with pytest.raises(ConfigError):
        run(make_config("rate-check", p=(50,), K=(60,), replicates=1))


def test_mse_comparison_rows():
    t = run(make_config("mse-comparison", K=(10,), replicates=5))
    assert len(t) == 2 * 3
    for r in t.records():
        assert 0 <= r["best_index"] < 50
        assert r["lambda_best"] <= r["lambda_max"]
        assert r["mse_mean"] > 0 and r["mse_median"] > 0


def test_psd_diagnostics_trivial_row_and_range():
    t = run(make_config("psd-diagnostics", patterns=("stair",), p=(40,), K=(10, 20),
                        lambda_rule="grid", lambdas=(0.0,), replicates=10))
    assert all(f == 1.0 for f in t.column("psd_fraction"))
    t = run(make_config("psd-diagnostics", K=(10, 50, 100), replicates=50))
    fr = t.column("psd_fraction")
    assert all(0.0 <= f <= 1.0 for f in fr)
    gl = [r["psd_fraction"] for r in t.records() if r["estimator"] == "gl"]
    assert all(a >= b for a, b in zip(gl, gl[1:])) and gl[-1] < gl[0]


def test_prox_benchmark_contracts():
    t = run(make_config("prox-benchmark", instances=30))
    paths = [r for r in t.records() if r["kind"] == "path"]
    dags = [r for r in t.records() if r["kind"] == "dag"]
    assert len(paths) == len(dags) == 30
    assert all(r["cycles_path"] == 1 for r in paths)
    assert all(r["loops"] == r["knots"] + 1 for r in paths)
    assert all(r["max_abs_diff"] <= 1e-7 for r in t.records())
    assert all(r["p"] <= 200 for r in dags)
    assert (np.median([r["cycles_path"] for r in dags])
            <= np.median([r["cycles_naive"] for r in dags]))
    assert all(r["time_naive_s"] == "" for r in t.records())


def test_prox_benchmark_timing_opt_in():
    t = run(make_config("prox-benchmark", instances=2, timing=True))
    assert all(isinstance(x, float) for x in t.column("time_path_s"))
