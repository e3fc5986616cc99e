import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from freqhom.cli import main, make_manifest
from freqhom.correlation import beat_curve
from freqhom.montecarlo import CorrelationHistogram, ExperimentConfig, expected_counts, write_histogram_csv
from freqhom.spectral import TWO_PI
from helpers import LINEWIDTH


def read_table(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(l for l in lines if not l.startswith("#")))


def first_csv_line_matches_manifest(out_dir):
    manifest = json.loads((out_dir / "manifest.json").read_text())
    h = manifest["config_hash"]
    for name in manifest["outputs"]:
        path = out_dir / name
        if path.suffix == ".csv":
            assert path.read_text().splitlines()[0] == f"# manifest_sha256={h}"
        elif path.suffix == ".json":
            assert json.loads(path.read_text())["manifest_sha256"] == h
    return manifest


def test_manifest_hash_depends_on_config_and_seed():
    a = make_manifest("simulate", {"x": 1.0}, 1)
    assert a["config_hash"] == make_manifest("simulate", {"x": 1.0}, 1)["config_hash"]
    assert a["config_hash"] != make_manifest("simulate", {"x": 1.0}, 2)["config_hash"]
    assert a["config_hash"] != make_manifest("simulate", {"x": 2.0}, 1)["config_hash"]


def test_design_default_is_matched(tmp_path, capsys):
    assert main(["design", "--out-dir", str(tmp_path)]) == 0
    assert "805.100 GHz" in capsys.readouterr().out
    first_csv_line_matches_manifest(tmp_path)
    _, rows = read_table(tmp_path / "design.csv")
    assert float(rows[0]["delta_beta_rad_m"]) == 0.0
    assert float(rows[0]["pump_separation_hz"]) == pytest.approx(805.1e9, rel=1e-12)


def test_design_band_offset_matches_quadratic_formula(tmp_path):
    b2 = -2e-27
    zdw = 200e12
    assert main(["design", "--out-dir", str(tmp_path), "--zdw-hz", str(zdw), f"--beta2={b2}",
                 "--beta3", "0", "--band-offset", "50e9"]) == 0
    _, rows = read_table(tmp_path / "design.csv")
    r = rows[0]
    red, p1 = float(r["photon_in_hz"]), float(r["field_in_hz"])
    blue, p2 = float(r["photon_out_hz"]), float(r["field_out_hz"])
    om = TWO_PI * (blue - red)
    d_q = TWO_PI * ((red + blue) / 2 - zdw)
    d_p = TWO_PI * ((p1 + p2) / 2 - zdw)
    # b2/2 [(q - om/2)^2 + (p + om/2)^2 - (q + om/2)^2 - (p - om/2)^2] = b2 om (p - q)
    expected = b2 * om * (d_p - d_q)
    assert float(r["delta_beta_rad_m"]) == pytest.approx(expected, rel=1e-6)
    assert abs(expected) > 0


def read_curves(path):
    _, rows = read_table(path)
    curves = {}
    for r in rows:
        key = (r["source"], float(r["detuning_hz"]))
        curves.setdefault(key, ([], []))
        curves[key][0].append(float(r["tau_s"]))
        curves[key][1].append(float(r["value"]))
    return {k: (np.array(t), np.array(v)) for k, (t, v) in curves.items()}


def test_analytic_curves(tmp_path):
    assert main(["analytic", "--out-dir", str(tmp_path), "--alpha", "1.0",
                 "--detunings-hz", "0", "300e6"]) == 0
    first_csv_line_matches_manifest(tmp_path)
    curves = read_curves(tmp_path / "analytic.csv")
    assert set(curves) == {("analytic", 0.0), ("analytic", 300e6)}
    _, null = curves[("analytic", 0.0)]
    tau, beat = curves[("analytic", 300e6)]
    assert np.max(np.abs(null)) < 1e-15
    lw = ExperimentConfig().linewidth
    assert np.allclose(beat, beat_curve(tau, 1.0, lw, TWO_PI * 300e6, 1.0), rtol=1e-12, atol=1e-15)


def test_analytic_alpha_zero_is_half_height(tmp_path):
    assert main(["analytic", "--out-dir", str(tmp_path), "--alpha", "0",
                 "--detunings-hz", "5e9"]) == 0
    tau, vals = read_curves(tmp_path / "analytic.csv")[("analytic", 5e9)]
    lw = ExperimentConfig().linewidth
    assert np.allclose(vals, 0.5 * np.exp(-lw * np.abs(tau)), rtol=1e-12)


def simulate(out, *extra):
    return main(["simulate", "--out-dir", str(out), "--duration-s", "5", "--seed", "3",
                 "--detuning-hz", "300e6", "--alpha", "0.95", *extra])


def test_simulate_outputs_identical_across_thread_counts(tmp_path):
    outs = []
    for threads in (1, 2, 8):
        d = tmp_path / f"t{threads}"
        assert simulate(d, "--threads", str(threads)) == 0
        outs.append(d)
    for name in ("histogram.csv", "histogram.json", "events.txt", "manifest.json"):
        ref = (outs[0] / name).read_bytes()
        assert all((d / name).read_bytes() == ref for d in outs[1:])
    manifest = first_csv_line_matches_manifest(outs[0])
    assert manifest["seed"] == 3
    assert manifest["derived"]["pair_rate_calibrated"] is True


def test_manifest_rerun_reproduces_outputs(tmp_path):
    assert simulate(tmp_path / "a") == 0
    assert main(["simulate", "--out-dir", str(tmp_path / "b"),
                 "--config", str(tmp_path / "a" / "manifest.json"), "--threads", "2"]) == 0
    for name in ("histogram.csv", "events.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_kv_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# short run\nduration = 5\nseed = 3\ndetuning_hz = 300e6\nvisibility = 0.95\n")
    assert main(["simulate", "--out-dir", str(tmp_path / "kv"), "--config", str(cfg)]) == 0
    assert simulate(tmp_path / "flags") == 0
    assert (tmp_path / "kv" / "histogram.csv").read_bytes() == \
        (tmp_path / "flags" / "histogram.csv").read_bytes()


def test_fit_and_report_from_event_logs(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["simulate", "--out-dir", str(run), "--duration-s", "600", "--seed", "4",
                 "--detuning-hz", "300e6", "--alpha", "0.95"]) == 0
    assert main(["fit", "--run-dir", str(run), "--out-dir", str(tmp_path / "fit"),
                 "--jitter-in-fit", "40e-12"]) == 0
    first_csv_line_matches_manifest(tmp_path / "fit")
    _, rows = read_table(tmp_path / "fit" / "fit.csv")
    a, s = float(rows[0]["visibility"]), float(rows[0]["visibility_err"])
    assert abs(a - 0.95) < 3 * s
    kv = (tmp_path / "fit" / "fit.kv").read_text()
    assert "manifest_sha256" in kv

    rep = tmp_path / "rep"
    assert main(["report", str(run), "--out-dir", str(rep)]) == 0
    first_csv_line_matches_manifest(rep)
    _, table = read_table(rep / "report.csv")
    assert float(table[0]["detuning_hz"]) == pytest.approx(300e6)
    # the histogram is rebuilt from events.txt, so removing it changes nothing
    (run / "histogram.csv").unlink()
    rep2 = tmp_path / "rep2"
    assert main(["report", str(run), "--out-dir", str(rep2)]) == 0
    assert (rep / "report.csv").read_bytes() == (rep2 / "report.csv").read_bytes()
    assert (rep / "beating.csv").read_bytes() == (rep2 / "beating.csv").read_bytes()


def test_report_autocorrelation_run(tmp_path):
    run = tmp_path / "auto"
    assert main(["simulate", "--mode", "auto", "--out-dir", str(run), "--duration-s", "60",
                 "--seed", "2", "--alpha", "1.0"]) == 0
    assert main(["report", str(run), "--out-dir", str(tmp_path / "rep")]) == 0
    _, table = read_table(tmp_path / "rep" / "report.csv")
    assert table[0]["mode"] == "auto" and float(table[0]["bunching_peak"]) > 0
    _, bunching = read_table(tmp_path / "rep" / "bunching.csv")
    assert len(bunching) == 161


def test_fit_noiseless_histogram_recovers_exactly(tmp_path):
    cfg = ExperimentConfig(detuning=TWO_PI * 600e6, visibility=0.9, jitter_sigma=0.0,
                           duration=3600.0)
    hist = CorrelationHistogram(cfg.tau_centers, expected_counts(cfg), cfg.tau_bin)
    path = tmp_path / "h.csv"
    write_histogram_csv(hist, path, "x")
    assert main(["fit", "--histogram", str(path), "--out-dir", str(tmp_path / "f")]) == 0
    _, rows = read_table(tmp_path / "f" / "fit.csv")
    assert float(rows[0]["visibility"]) == pytest.approx(0.9, rel=1e-6)
    assert float(rows[0]["linewidth"]) == pytest.approx(LINEWIDTH, rel=1e-6)


def test_exit_code_for_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["simulate", "--alpha", "1.5", "--out-dir", str(tmp_path)]) == 2
    assert main(["design", "--fsr", "-1", "--out-dir", str(tmp_path)]) == 2
    assert main(["fit", "--out-dir", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_for_numerical_failure(tmp_path, capsys):
    cfg = ExperimentConfig()
    zero = {k: np.zeros(cfg.tau_centers.size, dtype=int) for k in ("in_sync", "off_sync")}
    path = tmp_path / "empty.csv"
    write_histogram_csv(CorrelationHistogram(cfg.tau_centers, zero, cfg.tau_bin), path, "x")
    assert main(["fit", "--histogram", str(path), "--out-dir", str(tmp_path / "f")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "freqhom.cli", "design", "--out-dir",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "805.100" in proc.stdout
