import numpy as np
import pytest

from fouest.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, read_config
from fouest.estimator import forward_map
from fouest.fou import ModelParams, ObservationSeries


def run(args, capsys=None):
    code = main([str(a) for a in args])
    return code


def test_simulate_row_count_and_header(tmp_path):
    out = tmp_path / "p.csv"
    args = ["simulate", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--h", 0.5, "--n", 4096, "--seed", 42]
    assert run(args + ["--for-estimation", "--out", out]) == EXIT_OK
    lines = out.read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    assert any("seed=42" in c for c in comments)
    assert len(ObservationSeries.read_csv(out)) == 2 * 4096 + 3
    plain = tmp_path / "q.csv"
    assert run(args + ["--out", plain]) == EXIT_OK
    assert len(ObservationSeries.read_csv(plain)) == 4096


def test_simulate_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--n", 500, "--seed", 7]
    assert run(args + ["--out", a]) == run(args + ["--out", b]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_simulate_rerun_from_header(tmp_path):
    a = tmp_path / "a.csv"
    assert run(["simulate", "--theta", 3, "--hurst", 0.6, "--sigma", 1, "--n", 50, "--seed", 5,
                "--scheme", "euler_fine_grid", "--substeps", 4, "--out", a]) == EXIT_OK
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("\n".join(l[2:] for l in a.read_text().splitlines()[1:] if l.startswith("# ")))
    b = tmp_path / "b.csv"
    assert run(["simulate", "--config", cfg, "--out", b]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_invalid_hurst_exit_code(capsys):
    assert run(["simulate", "--theta", 6, "--hurst", 1.2, "--sigma", 2, "--n", 10]) == EXIT_VALIDATION
    assert "Hurst" in capsys.readouterr().err


def test_argparse_errors_are_validation():
    assert run(["simulate", "--theta", "x"]) == EXIT_VALIDATION


def test_estimate_noise_free_fixture(tmp_path):
    # a path whose sample moments equal the population moments exactly:
    # X_k for k >= 1 chosen so that eta0, eta1, eta2 hit forward_map at n = 1
    p, h = ModelParams(6, 0.7, 2), 0.5
    f = forward_map(p, h).as_array()
    x1 = np.sqrt(f[0])
    x2 = f[1] / x1
    x4 = f[2] / x2
    values = [0.0, x1, x2, 0.0, x4]
    path = tmp_path / "fixture.csv"
    ObservationSeries(h, np.array(values)).to_csv(path)
    out = tmp_path / "est.csv"
    assert run(["estimate", path, "--n", 1, "--out", out]) == EXIT_OK
    row = [l for l in out.read_text().splitlines() if not l.startswith("#")][1].split(",")
    assert np.allclose([float(v) for v in row[:3]], p.as_array(), rtol=1e-6)


def test_estimate_truncated_input(tmp_path, capsys):
    path = tmp_path / "short.csv"
    ObservationSeries(0.5, np.ones(8)).to_csv(path)
    assert run(["estimate", path, "--n", 4]) == EXIT_VALIDATION
    assert "2n+3" in capsys.readouterr().err


def test_estimate_missing_file(tmp_path):
    assert run(["estimate", tmp_path / "nope.csv"]) == EXIT_IO


def test_estimate_nonconvergence_exit(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    ObservationSeries(0.5, np.array([0.0, 1.0, 2.0, 0.0, 0.1])).to_csv(path)
    assert run(["estimate", path, "--n", 1, "--out", tmp_path / "e.csv"]) == EXIT_NUMERICAL
    assert "best residual" in capsys.readouterr().err


def test_estimate_simulated_path(tmp_path, capsys):
    path = tmp_path / "sim.csv"
    assert run(["simulate", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--n", 4096, "--seed", 3,
                "--for-estimation", "--out", path]) == EXIT_OK
    out = tmp_path / "e.csv"
    assert run(["estimate", path, "--out", out]) == EXIT_OK
    row = [l for l in out.read_text().splitlines() if not l.startswith("#")][1].split(",")
    th, H, sg = (float(v) for v in row[:3])
    # Table-1 standard deviations: 0.83, 0.022, 0.21; allow four of them
    assert abs(th - 6) < 4 * 0.83 and abs(H - 0.7) < 4 * 0.022 and abs(sg - 2) < 4 * 0.21


def test_mc_study_small(tmp_path):
    out = tmp_path / "mc"
    args = ["mc-study", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--n", 512, "--reps", 2, "--seed", 1,
            "--normalized-errors", "--out", out]
    assert run(args) == EXIT_OK
    for name in ("replications.csv", "summary.csv", "normalized_errors.csv"):
        assert (out / name).exists()
    first = (out / "summary.csv").read_bytes()
    assert run(args) == EXIT_OK
    assert (out / "summary.csv").read_bytes() == first


def test_mc_study_needs_two_reps(tmp_path):
    assert run(["mc-study", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--reps", 1, "--out", tmp_path]) == EXIT_VALIDATION


def test_det_scan(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert run(["det-scan", "--p1", "theta:1:40:4:log", "--p2", "sigma:0.5:4:3", "--hurst", 0.7, "--out", out]) == EXIT_OK
    data = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert data[0] == "p1,p2,detJ" and len(data) == 13


def test_det_scan_empty_grid():
    assert run(["det-scan", "--p1", "theta:1:40:1", "--p2", "sigma:0.5:4:3", "--hurst", 0.7]) == EXIT_VALIDATION
    assert run(["det-scan", "--p1", "theta:1:40", "--p2", "sigma:0.5:4:3", "--hurst", 0.7]) == EXIT_VALIDATION
    assert run(["det-scan", "--p1", "theta:1:40:3", "--p2", "sigma:0.5:4:3"]) == EXIT_VALIDATION


def test_asymptotics_half_prints_closed_form(tmp_path, capsys):
    out = tmp_path / "as"
    assert run(["asymptotics", "--theta", 1, "--hurst", 0.5, "--sigma", 1, "--out", out]) == EXIT_OK
    text = capsys.readouterr().out
    assert "closed form" in text
    assert (out / "sigma.csv").exists() and (out / "sigma_closed_form.csv").exists()
    assert (out / "estimator_covariance.csv").exists()


def test_asymptotics_divergent(tmp_path):
    assert run(["asymptotics", "--theta", 1, "--hurst", 0.8, "--sigma", 1, "--out", tmp_path / "a"]) == EXIT_VALIDATION


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# study\ntheta = 6\nhurst=0.7\nsigma=2\nn=64\nseed=11\nfor-estimation=true\n")
    out = tmp_path / "c.csv"
    assert run(["simulate", "--config", cfg, "--seed", 12, "--out", out]) == EXIT_OK
    text = out.read_text()
    assert "seed=12" in text and len(ObservationSeries.read_csv(out)) == 2 * 64 + 3


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("theta=6\nhurst=0.7\nsigma=2\nn=64\ncolour=blue\n")
    assert run(["simulate", "--config", cfg]) == EXIT_VALIDATION
    assert read_config(cfg)["colour"] == "blue"


def test_missing_config_is_io_error(tmp_path):
    assert run(["simulate", "--config", tmp_path / "none.cfg", "--theta", 1, "--hurst", 0.6, "--sigma", 1,
                "--n", 5]) == EXIT_IO


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FOUEST_OUTPUT_DIR", str(tmp_path))
    assert run(["simulate", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--n", 20]) == EXIT_OK
    assert (tmp_path / "path.csv").exists()


def test_unwritable_output(tmp_path):
    assert run(["simulate", "--theta", 6, "--hurst", 0.7, "--sigma", 2, "--n", 20,
                "--out", tmp_path / "missing" / "dir" / "p.csv"]) == EXIT_IO
