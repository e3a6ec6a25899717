import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from pvscreen import cli
from pvscreen.data import write_dataset, write_drug_names
from pvscreen.sampler import SamplerError

from conftest import make_dataset

FAST = ["--chains", "2", "--warmup", "200", "--keep", "200", "--seed", "7"]


@pytest.fixture
def files(tmp_path, five_drugs):
    write_dataset(five_drugs, tmp_path / "strata.csv")
    write_drug_names(five_drugs, tmp_path / "names.csv")
    labels = list(five_drugs.drug_names)
    counts = np.array([[400, 120, 30, 60, 10],
                       [120, 500, 40, 90, 20],
                       [30, 40, 300, 25, 35],
                       [60, 90, 25, 450, 15],
                       [10, 20, 35, 15, 200]])
    pd.DataFrame(counts, index=labels, columns=labels).to_csv(tmp_path / "copres.csv")
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_build_sigma_tetrachoric(files):
    out = files / "sig" / "sigma.csv"
    out.parent.mkdir()
    assert run("build-sigma", "--method", "tetrachoric", "--in", files / "copres.csv",
               "--n-total", 1_000_000, "--out", out) == 0
    m = pd.read_csv(out, index_col=0).to_numpy()
    assert np.allclose(np.diag(m), 1) and np.linalg.eigvalsh(m)[0] > 0
    prov = json.loads((files / "sig" / "sigma.json").read_text())
    assert prov["method"] == "tetrachoric" and prov["n_drugs"] == 5


def test_build_sigma_identity(tmp_path):
    out = tmp_path / "id.csv"
    assert run("build-sigma", "--method", "identity", "--n-drugs", 922, "--out", out) == 0
    m = pd.read_csv(out, index_col=0).to_numpy()
    np.testing.assert_array_equal(m, np.eye(922))


def fit(files, out, *extra):
    return run("fit", "--data", files / "strata.csv", "--names", files / "names.csv",
               "--out-dir", out, *FAST, *extra)


def test_fit_outputs_and_determinism(files):
    codes = [fit(files, files / d) for d in ("a", "b")]
    assert codes[0] == codes[1] and codes[0] in (0, 4)
    a = (files / "a" / "summary.csv").read_bytes()
    assert a == (files / "b" / "summary.csv").read_bytes()
    df = pd.read_csv(files / "a" / "summary.csv", comment="#")
    assert list(df.columns) == list(cli.SUMMARY_HEADER) and len(df) == 5
    diag = json.loads((files / "a" / "diagnostics.json").read_text())
    assert "theta_x[drug0]" in diag["parameters"] and "NaN" not in (files / "a" / "diagnostics.json").read_text()
    man = json.loads((files / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 7 and man["config"]["chains"] == 2


def test_manifest_replay(files):
    fit(files, files / "a", "--sigma", sigma_file(files), "--draws")
    assert run("fit", "--config", files / "a" / "manifest.json", "--out-dir", files / "b") in (0, 4)
    for name in ("summary.csv", "draws.csv"):
        assert (files / "a" / name).read_bytes() == (files / "b" / name).read_bytes()


def sigma_file(files):
    out = files / "sigma.csv"
    run("build-sigma", "--method", "pearson", "--in", files / "copres.csv", "--n-total", 1000, "--out", out)
    return out


def test_key_value_config(files):
    cfg = files / "run.cfg"
    cfg.write_text(f"data = {files / 'strata.csv'}\nchains = 2\nwarmup = 100\nkeep = 100\nseed = 3\n")
    assert run("fit", "--config", cfg, "--out-dir", files / "c", "--keep", 120) in (0, 4)
    man = json.loads((files / "c" / "manifest.json").read_text())
    assert man["config"]["keep"] == 120 and man["config"]["warmup"] == 100
    cfg.write_text("nonsense_key = 1\n")
    assert run("fit", "--config", cfg) == 1


def test_select_null_run_is_sparse(tmp_path):
    rng = np.random.default_rng(8)
    rate = 1 / (1 + np.exp(-np.array([-7.0, -7.0, -7.2, -7.2, -6.7, -6.7, -6.9, -6.9])))
    ds = make_dataset(rng.binomial(2_000_000, rate, size=(20, 8)), 2_000_000)
    write_dataset(ds, tmp_path / "null.csv")
    run("fit", "--data", tmp_path / "null.csv", "--out-dir", tmp_path / "f", "--chains", 2,
        "--warmup", 500, "--keep", 500)
    assert run("select", "--pips", tmp_path / "f" / "summary.csv", "--alpha-r", 0.02,
               "--out-dir", tmp_path / "s") == 0
    sel = pd.read_csv(tmp_path / "s" / "selection.csv", comment="#")
    assert sel.selected.sum() <= 1
    curve = pd.read_csv(tmp_path / "s" / "fdr_curve.csv")
    assert curve.n_selected.is_monotonic_decreasing


def test_simulate_and_report(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", 2, "--alpha", 0.05, 0.15, "--replicates", 2, "--chains", 2,
               "--warmup", 100, "--keep", 100, "--out-dir", out) == 0
    table = (out / "benchmark_table.md").read_text()
    assert "| Method | # selected | Power | FDR |" in table
    for m in ("eb_bonferroni", "eb_bh", "spike_slab", "spike_slab_copres"):
        assert table.count(f"| {m} |") == 2
    bench = pd.read_csv(out / "benchmark.csv")
    assert len(bench) == 2 * 4 * 2
    assert run("report", "--summary", out / "benchmark_summary.csv", "--out", tmp_path / "r.md") == 0
    assert "Targeted FDR <= 0.15" in (tmp_path / "r.md").read_text()


def test_exit_codes(files, monkeypatch):
    assert run("fit", "--data", files / "missing.csv") == 2
    assert run("fit", "--bogus") == 1
    assert run("fit") == 1
    assert run("select", "--pips", files / "strata.csv", "--alpha-r", 0.5) == 2
    (files / "p.csv").write_text("drug,pip\na,0.5\n")
    assert run("select", "--pips", files / "p.csv", "--alpha-r", 2) == 1
    bad = files / "bad_sigma.csv"
    bad.write_text(",a,b,c,d,e\n" + "".join(f"{c}," + ",".join(["1"] * 5) + "\n" for c in "abcde"))
    assert run("fit", "--data", files / "strata.csv", "--sigma", bad, *FAST) == 2

    def boom(*a, **k):
        raise SamplerError("non-finite log posterior")

    monkeypatch.setattr(cli, "run_chains", boom)
    assert fit(files, files / "x") == 3


def test_nonconvergence_exit(files, monkeypatch):
    monkeypatch.setattr(cli, "RHAT_FAIL", 0.5)
    assert fit(files, files / "nc") == 4
    assert (files / "nc" / "summary.csv").exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pvscreen", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
    r = subprocess.run([sys.executable, "-m", "pvscreen", "select"], capture_output=True, text=True)
    assert r.returncode == 1 and "--pips" in r.stderr
