import json
import subprocess
import sys


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "qslab.cli", *args],
        capture_output=True, text=True, cwd=cwd,
    )


def read(path):
    return path.read_bytes()


def csv_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def meta_of(path):
    out = {}
    for line in path.read_text().splitlines():
        if not line.startswith("# "):
            break
        k, _, v = line[2:].partition(" = ")
        out[k] = v
    return out


def test_spectral_subcommand(tmp_path):
    out = tmp_path / "o"
    r = run_cli("spectral", "--model", "m2sym", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = csv_rows(out / "spectral.csv")
    lam = [x for x in rows if x["object"] == "lambda0"][0]
    assert float(lam["value"]) == 1.0
    assert float(lam["residual"]) < 1e-12
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["model"] == "builtin:m2sym"
    assert manifest["subcommand"] == "spectral"
    assert "spectral.csv" in manifest["outputs"]
    # the hash in the CSV header matches the manifest
    assert meta_of(out / "spectral.csv")["manifest_hash"] == manifest["manifest_hash"]


def test_floats_carry_seventeen_digits(tmp_path):
    out = tmp_path / "o"
    r = run_cli("spectral", "--model", "m2asym", "--out", str(out))
    assert r.returncode == 0
    text = (out / "spectral.csv").read_text()
    assert "1.5857864376269049" in text  # 3 - sqrt(2) at full precision


def test_usage_errors_exit_2(tmp_path):
    assert run_cli("no-such-command").returncode == 2
    assert run_cli("spectral", "--bogus", "x").returncode == 2
    assert run_cli("spectral").returncode == 2  # --model is required


def test_validation_errors_exit_3(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("generator: [[-1.0, 1.0], [1.0, -1.0]]\n")
    r = run_cli("spectral", "--model", str(bad), "--out", str(tmp_path / "o"))
    assert r.returncode == 3
    assert "error: no-killing" in r.stderr


def test_numerical_errors_exit_4(tmp_path):
    r = run_cli("moments", "--model", "m2sym", "--kmax", "8", "--times", "1e40",
                "--out", str(tmp_path / "o"))
    assert r.returncode == 4
    assert "error: overflow-guard" in r.stderr


def test_variance_subcommand_cross_oracle(tmp_path):
    out = tmp_path / "o"
    r = run_cli("variance", "--model", "m2sym", "--out", str(out))
    assert r.returncode == 0
    row = csv_rows(out / "variance.csv")[0]
    assert float(row["sigma2"]) == 1.0
    assert float(row["abs_diff"]) <= float(row["error_bound"])
    assert float(row["error_bound"]) <= 1e-8


def test_certify_subcommand(tmp_path):
    out = tmp_path / "o"
    r = run_cli("certify", "--model", "bd5", "--out", str(out))
    assert r.returncode == 0
    meta = meta_of(out / "certify.csv")
    assert float(meta["C"]) == 2.0 * float(meta["worst_ratio"])
    assert float(meta["slack_factor"]) == 2.0
    rows = csv_rows(out / "certify.csv")
    assert abs(max(float(x["ratio"]) for x in rows) - float(meta["worst_ratio"])) < 1e-12


def test_model_file_is_hashed_into_manifest(tmp_path):
    model = tmp_path / "ladder.yaml"
    model.write_text(
        "name: ladder\nbirth_death:\n  n: 3\n  birth: [1.0, 1.0, 0.0]\n"
        "  death: [1.0, 1.0, 1.0]\n"
    )
    out = tmp_path / "o"
    r = run_cli("spectral", "--model", str(model), "--out", str(out))
    assert r.returncode == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["model"].startswith("sha256:")
    assert len(manifest["model"]) == len("sha256:") + 64


def test_clt_reruns_are_byte_identical_across_threads(tmp_path):
    args = ("clt", "--model", "m2sym", "--t", "25", "--n", "2000",
            "--seed", "7", "--dump")
    o1, o2, o3 = (tmp_path / n for n in ("a", "b", "c"))
    assert run_cli(*args, "--out", str(o1)).returncode == 0
    assert run_cli(*args, "--out", str(o2)).returncode == 0
    assert run_cli(*args, "--out", str(o3), "--threads", "4").returncode == 0
    for name in ("clt.csv", "clt_samples.txt"):
        assert read(o1 / name) == read(o2 / name)
        assert read(o1 / name) == read(o3 / name)
    # manifests agree except for wall clock
    m1 = json.loads((o1 / "manifest.json").read_text())
    m3 = json.loads((o3 / "manifest.json").read_text())
    assert m1["manifest_hash"] == m3["manifest_hash"]


def test_different_seed_changes_samples(tmp_path):
    o1, o2 = tmp_path / "a", tmp_path / "b"
    base = ("clt", "--model", "m2sym", "--t", "25", "--n", "1000", "--dump")
    assert run_cli(*base, "--seed", "7", "--out", str(o1)).returncode == 0
    assert run_cli(*base, "--seed", "8", "--out", str(o2)).returncode == 0
    assert read(o1 / "clt_samples.txt") != read(o2 / "clt_samples.txt")
    m1 = json.loads((o1 / "manifest.json").read_text())
    m2 = json.loads((o2 / "manifest.json").read_text())
    assert m1["manifest_hash"] != m2["manifest_hash"]


def test_qed_subcommand(tmp_path):
    out = tmp_path / "o"
    r = run_cli("qed", "--model", "m2sym", "--times", "5,10", "--n", "500",
                "--out", str(out))
    assert r.returncode == 0
    meta = meta_of(out / "qed.csv")
    assert "fitted_rate" in meta
    rows = csv_rows(out / "qed.csv")
    assert len(rows) == 2
    for row in rows:
        assert float(row["mean_square"]) > 0


def test_all_subcommand_produces_full_report_set(tmp_path):
    out = tmp_path / "o"
    r = run_cli("all", "--model", "m2sym", "--n", "2000", "--out", str(out))
    assert r.returncode == 0, r.stderr
    manifest = json.loads((out / "manifest.json").read_text())
    expected = {"spectral.csv", "certify.csv", "qprocess.csv", "variance.csv",
                "moments.csv", "charfun.csv", "clt.csv", "qed.csv"}
    assert expected <= set(manifest["outputs"])
    for name in expected:
        assert (out / name).exists()
