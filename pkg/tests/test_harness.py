import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from corrsbl import harness
from corrsbl.cli import main
from corrsbl.harness import (
    Exp1Config,
    Exp2Config,
    Exp3Config,
    LimitsConfig,
    TrialRecord,
    aggregate,
    default_w,
    fmt,
    nmse,
)
from corrsbl.matio import ConfigError, read_kv, read_matrix, write_matrix


def small_exp1(**kw):
    base = dict(N=20, M=40, block_size=4, k_active=2, betas=(0.0, 0.9), trials=3, seed=7)
    base.update(kw)
    return Exp1Config(**base)


def small_exp2(**kw):
    base = dict(N=10, M=30, L=3, K=3, rhos=(0.0, 0.8), trials=3, seed=3)
    base.update(kw)
    return Exp2Config(**base)


def small_exp3(**kw):
    base = dict(N=16, M=40, T=8, k_initial=3, n_added=2, add_at=3, n_removed=1,
                remove_at=5, max_duration=4, windows=(2, 4), trials=2, seed=5)
    base.update(kw)
    return Exp3Config(**base)


def small_limits(**kw):
    base = dict(M=10, K=2, L=2, n_min=2, n_max=4, trials=20, seed=1)
    base.update(kw)
    return LimitsConfig(**base)


# --- metrics --------------------------------------------------------------------


def test_nmse_examples():
    x = np.array([1.0, -2.0, 3.0])
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros(3), x) == 1.0
    assert nmse(1.001 * x, x) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        nmse(x, np.zeros(3))
    with pytest.raises(ValueError):
        nmse(x, x[:2])


def record(nmse_val, failed=False):
    return TrialRecord("e", "s", "p", 0.5, 0, nmse_val, not failed and nmse_val <= 1e-6, 0.1, failed)


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40))
def test_aggregate_invariants(cells):
    recs = [record(math.nan if f else v, f) for v, f in cells]
    r = aggregate(recs)
    assert r.trials == len(recs)
    assert 0 <= r.success_rate <= 1
    assert 0 < r.ci_halfwidth <= 0.5
    ok = [v for v, f in cells if not f]
    if ok:
        assert r.mean_nmse == pytest.approx(np.mean(ok))
    else:
        assert math.isnan(r.mean_nmse)
    assert math.isnan(r.mean_wall_time_s)
    assert aggregate(recs, timing=True).mean_wall_time_s == pytest.approx(0.1)


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


@pytest.mark.parametrize("value,text", [
    (1, "1"), (True, "1"), (0.1, "0.1"), (1 / 3, "0.333333333333"), (math.nan, "nan"),
    (-math.inf, "-inf"), (123456789012345.0, "1.23456789012e+14"), ("msbl", "msbl"),
])
def test_fmt(value, text):
    assert fmt(value) == text


@pytest.mark.parametrize("K,L", [(2, 1), (2, 4), (3, 4), (4, 2)])
def test_default_w(K, L):
    W = default_w(K, L)
    assert W.shape == (K, L) and np.all(np.abs(W) == 1)
    if K <= L:
        np.testing.assert_array_equal(W @ W.T, L * np.eye(K))


# --- sweeps ----------------------------------------------------------------------


def parse(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_exp1_csv_shape_and_determinism():
    cfg = small_exp1()
    text = harness.sweep_csv(harness.run_experiment1(cfg))
    assert text.splitlines()[0] == ",".join(harness.SWEEP_COLUMNS)
    rows = parse(text)
    assert [(r["solver"], r["param_value"]) for r in rows] == [
        ("bsbl_learn_corr", "0"), ("bsbl_no_corr", "0"),
        ("bsbl_learn_corr", "0.9"), ("bsbl_no_corr", "0.9")]
    assert all(r["mean_wall_time_s"] == "nan" and r["trials"] == "3" for r in rows)
    assert harness.sweep_csv(harness.run_experiment1(small_exp1())) == text


def test_exp1_noiseless_easy_case_succeeds():
    rows = parse(harness.sweep_csv(harness.run_experiment1(small_exp1(k_active=1))))
    assert all(float(r["success_rate"]) == 1.0 for r in rows)


def test_parallel_matches_serial():
    serial = harness.sweep_csv(harness.run_experiment2(small_exp2()))
    parallel = harness.sweep_csv(harness.run_experiment2(small_exp2(threads=2)))
    assert serial == parallel


def test_trial_seeds_do_not_depend_on_sweep_size():
    a = harness._exp2_trial(small_exp2(trials=3), 1, 2)
    b = harness._exp2_trial(small_exp2(trials=50, rhos=(0.0, 0.8, 0.99)), 1, 2)
    assert [replace(r, wall_time=0.0) for r in a] == [replace(r, wall_time=0.0) for r in b]


def test_solvers_share_data():
    recs = harness._exp1_trial(small_exp1(), 0, 0)
    assert len({r.seed for r in recs}) == 1


def test_exp3_windows_share_data():
    cfg = small_exp3()
    a = harness._exp3_trial(cfg, 0, 1)
    b = harness._exp3_trial(cfg, 1, 1)
    assert a[0].seed == b[0].seed
    rows = parse(harness.sweep_csv(harness.run_experiment3(cfg)))
    assert [r["param_value"] for r in rows] == ["2", "2", "4", "4"]
    assert all(float(r["mean_nmse"]) < 1 for r in rows)


def test_unknown_solver():
    with pytest.raises(ValueError):
        harness.run_experiment2(small_exp2(solvers=("focuss",)))
    with pytest.raises(ValueError):
        harness.run_experiment1(small_exp1(solvers=("bsbl",)))


def test_limits_sweep():
    rows = harness.run_limits_sweep(small_limits())
    assert [r.N for r in rows] == [2, 3, 4]
    assert len({(r.c_value, r.threshold_N) for r in rows}) == 1
    for r in rows:
        assert r.ci_low <= r.error_rate <= r.ci_high
    text = harness.limits_csv(rows)
    assert text.splitlines()[0] == ",".join(harness.LIMITS_COLUMNS)
    assert harness.limits_csv(harness.run_limits_sweep(small_limits(threads=2))) == text


def test_limits_w_shape_checked(tmp_path):
    with pytest.raises(ValueError):
        harness.run_limits_sweep(small_limits(W=np.ones((3, 2))))
    path = tmp_path / "w.csv"
    write_matrix(path, [[1.0, 2.0], [3.0, -1.0]])
    rows = harness.run_limits_sweep(small_limits(w_file=str(path), n_max=2))
    assert rows[0].c_value == harness.run_limits_sweep(
        small_limits(W=[[1.0, 2.0], [3.0, -1.0]], n_max=2))[0].c_value


# --- files -----------------------------------------------------------------------------


def test_kv_parsing(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\ntrials = 5  # inline\n\nbetas = 0.1, 0.2\n")
    assert read_kv(p) == {"trials": "5", "betas": "0.1, 0.2"}
    p.write_text("trials = 5\ntrials = 6\n")
    with pytest.raises(ConfigError, match="duplicate"):
        read_kv(p)
    p.write_text("trials 5\n")
    with pytest.raises(ConfigError):
        read_kv(p)


def test_matrix_roundtrip_and_sidecar(tmp_path):
    A = np.random.default_rng(0).standard_normal((3, 4))
    p = tmp_path / "a.csv"
    write_matrix(p, A)
    assert read_kv(str(p) + ".dims") == {"rows": "3", "cols": "4"}
    np.testing.assert_array_equal(read_matrix(p), A)
    (tmp_path / "a.csv.dims").write_text("rows = 4\ncols = 3\n")
    with pytest.raises(ConfigError):
        read_matrix(p)
    v = tmp_path / "v.csv"
    v.write_text("1,2,3\n")
    (tmp_path / "v.csv.dims").write_text("rows = 3\ncols = 1\n")
    assert read_matrix(v).shape == (3, 1)


# --- CLI -----------------------------------------------------------------------------


def test_cli_exp2_config_then_flags(tmp_path, capsys):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("N = 10\nM = 30\nL = 3\nK = 3\nrhos = 0.5\ntrials = 4\nseed = 3\n")
    out = tmp_path / "o.csv"
    assert main(["exp2", "--config", str(cfg), "--trials", "2", "--out", str(out)]) == 0
    rows = parse(out.read_text())
    assert len(rows) == 2 and rows[0]["trials"] == "2" and rows[0]["param_value"] == "0.5"
    assert main(["exp2", "--config", str(cfg), "--trials", "2"]) == 0
    assert capsys.readouterr().out == out.read_text()


def test_cli_limits_and_exp1(tmp_path):
    out = tmp_path / "l.csv"
    assert main(["limits", "--M", "8", "--n-min", "2", "--n-max", "3", "--trials", "5",
                 "--out", str(out)]) == 0
    assert [r["N"] for r in parse(out.read_text())] == ["2", "3"]
    assert main(["exp1", "--N", "20", "--M", "40", "--k-active", "1", "--betas", "0.5",
                 "--trials", "1", "--out", str(out)]) == 0
    assert len(parse(out.read_text())) == 2


@pytest.mark.parametrize("argv", [
    ["exp1", "--trials", "abc"],
    ["exp1", "--trials", "0"],
    ["exp2", "--solvers", "nope", "--trials", "1"],
    ["limits", "--w-file", "/nonexistent/w.csv"],
    ["exp3", "--config", "/nonexistent.cfg"],
    ["solve"],
    ["solve", "--phi", "/nonexistent", "--y", "/nonexistent"],
])
def test_cli_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_cli_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["exp1", "--config", str(cfg)]) == 2


def test_cli_solve(tmp_path):
    rng = np.random.default_rng(0)
    phi = rng.standard_normal((12, 24))
    X = np.zeros((24, 2))
    X[[4, 5]] = [[1.0, 0.8], [-0.5, -0.7]]
    write_matrix(tmp_path / "phi.csv", phi)
    write_matrix(tmp_path / "y.csv", phi @ X)
    write_matrix(tmp_path / "y1.csv", phi @ X[:, 0])
    out = tmp_path / "x.csv"
    base = ["solve", "--phi", str(tmp_path / "phi.csv"), "--out", str(out)]
    assert main(base + ["--y", str(tmp_path / "y.csv"), "--solver", "tmsbl"]) == 0
    np.testing.assert_allclose(read_matrix(out), X, atol=1e-3)
    assert main(base + ["--y", str(tmp_path / "y.csv"), "--solver", "msbl", "--window", "1"]) == 0
    assert read_matrix(out).shape == (24, 2)
    assert main(base + ["--y", str(tmp_path / "y1.csv"), "--block-size", "2"]) == 0
    np.testing.assert_allclose(read_matrix(out)[:, 0], X[:, 0], atol=1e-3)
    assert main(base + ["--y", str(tmp_path / "y.csv"), "--solver", "bsbl"]) == 2
    assert main(base + ["--y", str(tmp_path / "y1.csv"), "--block-size", "5"]) == 2
